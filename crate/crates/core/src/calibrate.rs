//! Reconstruction of DGP parameters from single-cell aggregate moments.

use serde::{Deserialize, Serialize};

use crate::dgp::{Arm, ComplexDgp, DgpSpec, GaussianDgp, PolynomialDgp, RangeViolation};
use crate::error::{Error, Result};
use crate::estimate::{solve_lambda, MomentSet};
use crate::numeric::linalg::{condition_number, Lu, Matrix};
use crate::numeric::{normal, poly};

/// Observed moments of a one-cell experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyMoments {
    pub psi11: f64,
    pub psi01: f64,
    pub psi00: f64,
    /// ν(1), the treated share of eligible units.
    pub nu1: f64,
    /// Pr(Z = 1).
    pub elig_share: f64,
}

impl StudyMoments {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("psi11", self.psi11), ("psi01", self.psi01), ("psi00", self.psi00)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} = {v} is not a probability")));
            }
        }
        if !(self.nu1 > 0.0 && self.nu1 < 1.0) {
            return Err(Error::Domain(format!("nu1 = {} must lie strictly inside (0, 1)", self.nu1)));
        }
        if !(self.elig_share > 0.0 && self.elig_share < 1.0) {
            return Err(Error::Domain(format!("elig_share = {} must lie strictly inside (0, 1)", self.elig_share)));
        }
        Ok(())
    }
}

/// The extra equation that pins down the one free direction left once the
/// MTE and the untreated moments are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReconstructionAnchor {
    /// Fix the quadratic coefficient of m₁.
    TreatedQuadratic { value: f64 },
    /// Require that the analytic-ψ approximation on a design with these
    /// propensities has ATE norm (ATE_app − ATE)/ATE equal to `target`.
    AteNorm { nus: Vec<f64>, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialReconstruction {
    pub dgp: PolynomialDgp,
    /// ψ₁₁ implied by the reconstruction minus the observed value.
    pub psi11_residual: f64,
    pub condition_number: f64,
    /// First point where an MTR leaves [0, 1], if any. A warning, not an error.
    pub range_violation: Option<RangeViolation>,
}

fn singular(what: &str) -> impl FnOnce(crate::numeric::linalg::SingularPivot) -> Error + '_ {
    move |p| Error::Singular(format!("{what}: pivot {:.3e} in column {}", p.magnitude, p.column))
}

/// ATE of the analytic-ψ approximation for each unit coefficient vector,
/// ordered (m₁₀, m₁₁, m₁₂, m₀₀, m₀₁, m₀₂, m₀₃). The map is linear.
fn ate_gradient(nus: &[f64]) -> Result<[f64; 7]> {
    let mut g = [0.0; 7];
    for (j, gj) in g.iter_mut().enumerate() {
        let mut m1 = vec![0.0; 3];
        let mut m0 = vec![0.0; 4];
        if j < 3 {
            m1[j] = 1.0;
        } else {
            m0[j - 3] = 1.0;
        }
        let moments = MomentSet::from_dgp(&DgpSpec::polynomial(m1, m0), nus, None)?;
        *gj = solve_lambda(&moments)?.lambda.ate();
    }
    Ok(g)
}

/// Quadratic m₁ and cubic m₀ whose difference is the given cubic MTE and
/// whose implied ψ₀₁ and ψ₀₀ equal the observed ones. The anchor closes the
/// system; ψ₁₁ is then determined and reported as a residual.
pub fn reconstruct_polynomial_dgp(
    moments: &StudyMoments,
    mte_coeffs: [f64; 4],
    anchor: &ReconstructionAnchor,
) -> Result<PolynomialReconstruction> {
    moments.validate()?;
    if mte_coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Input("MTE coefficients must be finite".into()));
    }
    let nu = moments.nu1;
    let m03 = -mte_coeffs[3];
    // (1/(1−ν))∫_ν¹ u^k du
    let tail = |k: i32| (1.0 - nu.powi(k + 1)) / ((k + 1) as f64 * (1.0 - nu));
    let mut rows = vec![
        vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0, -1.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        vec![0.0, 0.0, 0.0, tail(0), tail(1), tail(2)],
        vec![0.0, 0.0, 0.0, 1.0, 0.5, 1.0 / 3.0],
    ];
    let mut rhs = vec![
        mte_coeffs[0],
        mte_coeffs[1],
        mte_coeffs[2],
        moments.psi01 - m03 * tail(3),
        moments.psi00 - m03 / 4.0,
    ];
    match anchor {
        ReconstructionAnchor::TreatedQuadratic { value } => {
            rows.push(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
            rhs.push(*value);
        }
        ReconstructionAnchor::AteNorm { nus, target } => {
            let g = ate_gradient(nus)?;
            let ate = poly::integral(&mte_coeffs, 0.0, 1.0);
            if ate == 0.0 {
                return Err(Error::Input("an ATE-norm anchor needs a nonzero ATE".into()));
            }
            rows.push(g[..6].to_vec());
            rhs.push((1.0 + target) * ate - m03 * g[6]);
        }
    }
    let a = Matrix::from_rows(&rows);
    let lu = Lu::factor(&a).map_err(singular("polynomial reconstruction system"))?;
    let theta = lu.solve(&rhs);
    let dgp = PolynomialDgp { m1_coeffs: theta[..3].to_vec(), m0_coeffs: vec![theta[3], theta[4], theta[5], m03] };
    let psi11 = poly::integral(&dgp.m1_coeffs, 0.0, nu) / nu;
    let spec = DgpSpec::polynomial(dgp.m1_coeffs.clone(), dgp.m0_coeffs.clone());
    Ok(PolynomialReconstruction {
        psi11_residual: psi11 - moments.psi11,
        condition_number: condition_number(&a, &lu),
        range_violation: spec.range_violation(),
        dgp,
    })
}

/// ∫ₐᵇ sin²(2πu) du.
fn sin2_integral(a: f64, b: f64) -> f64 {
    let s = |u: f64| u / 2.0 - (4.0 * std::f64::consts::PI * u).sin() / (8.0 * std::f64::consts::PI);
    s(b) - s(a)
}

/// ℸ from ψ₁₁ in closed form, then (ℷ, ℶ) from the ψ₀₁ and ψ₀₀ equations.
pub fn calibrate_complex(moments: &StudyMoments) -> Result<ComplexDgp> {
    moments.validate()?;
    let nu = moments.nu1;
    let daleth = moments.psi11 * nu / nu.ln_1p();
    let a = Matrix::from_rows(&[
        vec![(1.0 / (1.0 + nu) - 0.5) / (1.0 - nu), sin2_integral(nu, 1.0) / (1.0 - nu)],
        vec![0.5, sin2_integral(0.0, 1.0)],
    ]);
    let lu = Lu::factor(&a).map_err(singular("complex calibration system"))?;
    let x = lu.solve(&[moments.psi01, moments.psi00]);
    Ok(ComplexDgp { daleth, gimel: x[0], beth: x[1] })
}

/// E[Y | D = 0] at exposure count x among units whose propensity is ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UntreatedAggregate {
    pub x: u32,
    pub nu: f64,
    pub mean: f64,
}

/// E[Y | D = 1] for the impression following x earlier exposures, at propensity ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatedAggregate {
    pub x: u32,
    pub nu: f64,
    pub mean: f64,
}

/// Aggregates and fixed choices for the Gaussian calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianAggregates {
    /// Exactly two entries at distinct propensities.
    pub untreated: Vec<UntreatedAggregate>,
    /// Exactly three entries at distinct exposure counts.
    pub treated: Vec<TreatedAggregate>,
    pub var_y_z0: f64,
    pub var_y_z1: f64,
    pub mu01: f64,
    pub mu02: f64,
    #[serde(rename = "rho1V")]
    pub rho1_v: f64,
}

impl GaussianAggregates {
    /// The aggregates a Gaussian DGP implies at the given (x, ν) points.
    /// Variances are read back from σ_d.
    pub fn implied_by(dgp: &GaussianDgp, untreated: &[(u32, f64)], treated: &[(u32, f64)]) -> Result<Self> {
        let check = |nu: f64| {
            if (0.0..1.0).contains(&nu) {
                Ok(())
            } else {
                Err(Error::Domain(format!("propensity {nu} must lie in [0, 1)")))
            }
        };
        let mut out = GaussianAggregates {
            untreated: vec![],
            treated: vec![],
            var_y_z0: dgp.sigma0 * dgp.sigma0,
            var_y_z1: dgp.sigma1 * dgp.sigma1,
            mu01: dgp.mu0[1],
            mu02: dgp.mu0[2],
            rho1_v: dgp.rho1_v,
        };
        for &(x, nu) in untreated {
            check(nu)?;
            let mean = dgp.mu(Arm::Untreated, x) + dgp.loading(Arm::Untreated) * normal::upper_tail_mean(nu);
            out.untreated.push(UntreatedAggregate { x, nu, mean });
        }
        for &(x, nu) in treated {
            check(nu)?;
            if nu == 0.0 {
                return Err(Error::Domain("treated aggregates need a positive propensity".into()));
            }
            let mean = dgp.mu(Arm::Treated, x) + dgp.loading(Arm::Treated) * normal::lower_tail_mean(nu);
            out.treated.push(TreatedAggregate { x, nu, mean });
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.untreated.len() != 2 || self.treated.len() != 3 {
            return Err(Error::Input(format!(
                "need 2 untreated and 3 treated aggregates, got {} and {}",
                self.untreated.len(),
                self.treated.len()
            )));
        }
        if !(self.var_y_z0 > 0.0 && self.var_y_z1 > 0.0) {
            return Err(Error::Input("outcome variances must be positive".into()));
        }
        if self.untreated.iter().any(|a| !(0.0..1.0).contains(&a.nu))
            || self.treated.iter().any(|a| !(a.nu > 0.0 && a.nu < 1.0))
        {
            return Err(Error::Domain("aggregate propensities out of range".into()));
        }
        if !(self.rho1_v.abs() < 1.0) {
            return Err(Error::Input(format!("rho1V = {} must lie in (-1, 1)", self.rho1_v)));
        }
        Ok(())
    }
}

/// σ_d from Var(Y | Z = d); (μ₀₀, ρ₀V) from the two untreated aggregates;
/// μ₁ from the three treated aggregates given ρ₁V.
pub fn calibrate_gaussian(agg: &GaussianAggregates) -> Result<GaussianDgp> {
    agg.validate()?;
    let sigma0 = agg.var_y_z0.sqrt();
    let sigma1 = agg.var_y_z1.sqrt();

    let rows0: Vec<Vec<f64>> = agg.untreated.iter().map(|a| vec![1.0, sigma0 * normal::upper_tail_mean(a.nu)]).collect();
    let rhs0: Vec<f64> = agg
        .untreated
        .iter()
        .map(|a| {
            let x = a.x as f64;
            a.mean - agg.mu01 * x - agg.mu02 * x * x
        })
        .collect();
    let lu0 = Lu::factor(&Matrix::from_rows(&rows0)).map_err(singular("untreated calibration system"))?;
    let s0 = lu0.solve(&rhs0);

    let rows1: Vec<Vec<f64>> = agg
        .treated
        .iter()
        .map(|a| {
            let x = a.x as f64;
            vec![1.0, x, x * x]
        })
        .collect();
    let rhs1: Vec<f64> =
        agg.treated.iter().map(|a| a.mean - agg.rho1_v * sigma1 * normal::lower_tail_mean(a.nu)).collect();
    let lu1 = Lu::factor(&Matrix::from_rows(&rows1)).map_err(singular("treated calibration system"))?;
    let mu1 = lu1.solve(&rhs1);

    let dgp = GaussianDgp {
        mu1: [mu1[0], mu1[1], mu1[2]],
        mu0: [s0[0], agg.mu01, agg.mu02],
        sigma1,
        sigma0,
        rho1_v: agg.rho1_v,
        rho0_v: s0[1],
        rho10: 0.0,
    };
    dgp.validate()?;
    Ok(dgp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::quad;
    use proptest::prelude::*;

    const REFERENCE_STUDY: StudyMoments = StudyMoments { psi11: 0.00079, psi01: 0.00025, psi00: 0.00033, nu1: 0.37, elig_share: 0.7 };
    const DGP1_MTE: [f64; 4] = [-0.0036, 0.0254, -0.0179, 0.0027];

    fn psi_triple(dgp: &PolynomialDgp, nu: f64) -> (f64, f64, f64) {
        (
            poly::integral(&dgp.m1_coeffs, 0.0, nu) / nu,
            poly::integral(&dgp.m0_coeffs, nu, 1.0) / (1.0 - nu),
            poly::integral(&dgp.m0_coeffs, 0.0, 1.0),
        )
    }

    #[test]
    fn reconstruction_matches_target_mte_and_untreated_moments() {
        let r = reconstruct_polynomial_dgp(&REFERENCE_STUDY, DGP1_MTE, &ReconstructionAnchor::TreatedQuadratic { value: 0.004 })
            .unwrap();
        assert_eq!(r.dgp.m0_coeffs[3], -0.0027);
        assert!((r.dgp.m1_coeffs[2] - 0.004).abs() < 1e-15);
        let mte = poly::sub(&r.dgp.m1_coeffs, &r.dgp.m0_coeffs);
        for u in [0.0, 0.13, 0.5, 0.77, 1.0] {
            assert!((poly::eval(&mte, u) - poly::eval(&DGP1_MTE, u)).abs() < 1e-12);
        }
        let (psi11, psi01, psi00) = psi_triple(&r.dgp, 0.37);
        assert!((psi01 - 0.00025).abs() < 1e-12);
        assert!((psi00 - 0.00033).abs() < 1e-12);
        assert!((psi11 - 0.00079 - r.psi11_residual).abs() < 1e-15);
    }

    #[test]
    fn psi11_residual_is_the_consistency_gap() {
        // ν·ψ₁₁ + (1−ν)ψ₀₁ − ψ₀₀ = ∫₀^ν MTE for every member of the family,
        // so the residual does not depend on the anchor.
        let gap = (poly::integral(&DGP1_MTE, 0.0, 0.37) - (0.37 * 0.00079 + 0.63 * 0.00025 - 0.00033)) / 0.37;
        for value in [-0.01, 0.0, 0.02] {
            let r = reconstruct_polynomial_dgp(&REFERENCE_STUDY, DGP1_MTE, &ReconstructionAnchor::TreatedQuadratic { value })
                .unwrap();
            assert!((r.psi11_residual - gap).abs() < 1e-13, "{} vs {gap}", r.psi11_residual);
        }
    }

    #[test]
    fn ate_norm_anchor_hits_its_target() {
        let nus = vec![0.37, 0.7 * 0.37 / 0.3];
        let anchor = ReconstructionAnchor::AteNorm { nus: nus.clone(), target: -0.03009 };
        let r = reconstruct_polynomial_dgp(&REFERENCE_STUDY, DGP1_MTE, &anchor).unwrap();
        let spec = DgpSpec::polynomial(r.dgp.m1_coeffs.clone(), r.dgp.m0_coeffs.clone());
        let approx = solve_lambda(&MomentSet::from_dgp(&spec, &nus, None).unwrap()).unwrap().lambda.ate();
        let ate = spec.ate(None).unwrap();
        assert!(((approx - ate) / ate + 0.03009).abs() < 1e-9);
        assert!((r.dgp.m0_coeffs[2] - 0.02189).abs() < 1e-5);
    }

    #[test]
    fn degenerate_anchor_is_singular() {
        // A one-cell "design" at ν₁ reproduces the moments exactly, so the ATE
        // of its approximation is the same for every family member.
        let anchor = ReconstructionAnchor::AteNorm { nus: vec![0.37], target: 0.0 };
        let err = reconstruct_polynomial_dgp(&REFERENCE_STUDY, DGP1_MTE, &anchor).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err:?}");
    }

    #[test]
    fn reconstruction_flags_range_violations() {
        let r = reconstruct_polynomial_dgp(&REFERENCE_STUDY, DGP1_MTE, &ReconstructionAnchor::TreatedQuadratic { value: 0.004 })
            .unwrap();
        let v = r.range_violation.expect("the reconstructions dip below zero");
        assert!(v.value < 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn manufactured_dgps_are_recovered(
            m1 in prop::collection::vec(-0.3..0.3f64, 3),
            m0 in prop::collection::vec(-0.3..0.3f64, 4),
            nu in 0.05..0.95f64,
        ) {
            let truth = PolynomialDgp { m1_coeffs: m1, m0_coeffs: m0 };
            let (psi11, psi01, psi00) = psi_triple(&truth, nu);
            let mte = truth.mte_coeffs();
            let moments = StudyMoments { psi11, psi01, psi00, nu1: nu, elig_share: 0.5 };
            // Generated moments need not be probabilities; skip validation by shifting into range.
            prop_assume!([psi11, psi01, psi00].iter().all(|p| (0.0..=1.0).contains(p)));
            let anchor = ReconstructionAnchor::TreatedQuadratic { value: truth.m1_coeffs[2] };
            let r = reconstruct_polynomial_dgp(&moments, [mte[0], mte[1], mte[2], mte[3]], &anchor).unwrap();
            for (a, b) in r.dgp.m1_coeffs.iter().chain(&r.dgp.m0_coeffs).zip(truth.m1_coeffs.iter().chain(&truth.m0_coeffs)) {
                prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
            prop_assert!(r.psi11_residual.abs() <= 1e-12);
        }
    }

    #[test]
    fn complex_closed_form_and_round_trip() {
        let c = calibrate_complex(&REFERENCE_STUDY).unwrap();
        assert!((c.daleth - 0.00079 * 0.37 / 1.37f64.ln()).abs() < 1e-18);
        assert!((c.daleth - 0.000_928_494_371_407_18).abs() < 1e-16);
        // ∫₀¹(1+u)⁻² = ∫₀¹sin²(2πu) = 1/2.
        assert!((c.gimel / 2.0 + c.beth / 2.0 - 0.00033).abs() < 1e-15);
        let spec = DgpSpec::complex(c);
        let psi = spec.analytic_psi(0.37, None).unwrap();
        assert!((psi.treated.unwrap() - 0.00079).abs() < 1e-12);
        assert!((psi.untreated.unwrap() - 0.00025).abs() < 1e-12);
        assert!((spec.integral_mtr(Arm::Untreated, 0.0, 1.0, None).unwrap() - 0.00033).abs() < 1e-12);
    }

    #[test]
    fn sin2_integral_matches_quadrature() {
        for (a, b) in [(0.0, 1.0), (0.37, 1.0), (0.1, 0.3)] {
            let q = quad::integrate(|u| (2.0 * std::f64::consts::PI * u).sin().powi(2), a, b, 1e-14).unwrap();
            assert!((sin2_integral(a, b) - q).abs() < 1e-12);
        }
    }

    fn reference_aggregates() -> GaussianAggregates {
        let dgp = GaussianDgp {
            mu1: [0.002_443_738, 0.007_943_073, -0.001_791_018],
            mu0: [0.000_250_5, 0.001, -0.000_75],
            sigma1: 0.018_558_4,
            sigma0: 0.015_824_5,
            rho1_v: 0.3,
            rho0_v: -0.006_081_128,
            rho10: 0.0,
        };
        GaussianAggregates::implied_by(&dgp, &[(0, 0.0), (0, 0.37)], &[(0, 0.37), (1, 0.37), (2, 0.37)]).unwrap()
    }

    #[test]
    fn gaussian_round_trip() {
        let g = calibrate_gaussian(&reference_aggregates()).unwrap();
        assert!((g.mu0[0] - 0.000_250_5).abs() < 1e-12);
        assert!((g.rho0_v + 0.006_081_128).abs() < 1e-12);
        for (a, b) in g.mu1.iter().zip([0.002_443_738, 0.007_943_073, -0.001_791_018]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.sigma1 - 0.018_558_4).abs() < 1e-15);
    }

    #[test]
    fn untreated_identity_matches_quadrature() {
        // The ν = 0.37 untreated aggregate, recomputed by integrating m₀ over u ∈ [ν, 1).
        let agg = reference_aggregates();
        let g = calibrate_gaussian(&agg).unwrap();
        let nu = 0.37;
        let q = quad::integrate(|w| g.mtr(Arm::Untreated, 0, 1.0 - w), 1e-12, 1.0 - nu, 1e-13).unwrap() / (1.0 - nu);
        assert!((q - agg.untreated[1].mean).abs() < 1e-9, "{q} vs {}", agg.untreated[1].mean);
    }

    #[test]
    fn zero_loading_reduces_to_quadratic_fit() {
        let mut agg = reference_aggregates();
        agg.rho1_v = 0.0;
        agg.treated = vec![
            TreatedAggregate { x: 0, nu: 0.37, mean: 0.001 },
            TreatedAggregate { x: 1, nu: 0.5, mean: 0.004 },
            TreatedAggregate { x: 2, nu: 0.2, mean: 0.005 },
        ];
        let g = calibrate_gaussian(&agg).unwrap();
        // Through (0, 0.001), (1, 0.004), (2, 0.005): c = 0.001, b + a = 0.003, 2b + 4a = 0.004.
        let expect = [0.001, 0.004, -0.001];
        for (a, b) in g.mu1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_inputs_are_checked() {
        let mut agg = reference_aggregates();
        agg.untreated[1].nu = 0.0;
        assert!(matches!(calibrate_gaussian(&agg), Err(Error::Singular(_))));
        let mut agg = reference_aggregates();
        agg.treated.pop();
        assert!(matches!(calibrate_gaussian(&agg), Err(Error::Input(_))));
    }
}
