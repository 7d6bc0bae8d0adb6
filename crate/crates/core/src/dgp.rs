//! True data-generating processes: pairs of marginal treatment response (MTR)
//! curves m₁(u), m₀(u) and what they imply for MTE, ATE and the observable
//! ψ moments of a design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{normal, poly, quad};

/// Absolute tolerance for quadrature-based moments of non-polynomial families.
pub const QUAD_TOL: f64 = 1e-13;
/// Points used by the binary-outcome range check.
pub const RANGE_GRID: usize = 10_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Untreated,
    Treated,
}

impl Arm {
    pub fn from_d(d: u8) -> Result<Arm> {
        match d {
            0 => Ok(Arm::Untreated),
            1 => Ok(Arm::Treated),
            _ => Err(Error::Domain(format!("treatment indicator must be 0 or 1, got {d}"))),
        }
    }

    pub fn d(self) -> u8 {
        match self {
            Arm::Untreated => 0,
            Arm::Treated => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDgp {
    pub m1_coeffs: Vec<f64>,
    pub m0_coeffs: Vec<f64>,
}

impl PolynomialDgp {
    pub fn coeffs(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Treated => &self.m1_coeffs,
            Arm::Untreated => &self.m0_coeffs,
        }
    }

    pub fn mte_coeffs(&self) -> Vec<f64> {
        poly::sub(&self.m1_coeffs, &self.m0_coeffs)
    }

    /// Adds `c` to both arms. The MTE, and hence every decision, is unchanged.
    pub fn shifted(&self, c: f64) -> PolynomialDgp {
        let mut out = self.clone();
        for coeffs in [&mut out.m1_coeffs, &mut out.m0_coeffs] {
            if coeffs.is_empty() {
                coeffs.push(0.0);
            }
            coeffs[0] += c;
        }
        out
    }

    /// Smallest common shift (plus `margin`) that puts both arms inside [0,1]
    /// on the range-check grid. Fails if the curves span more than the unit interval.
    pub fn binary_shift(&self, margin: f64) -> Result<f64> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for u in grid(RANGE_GRID) {
            for arm in [Arm::Treated, Arm::Untreated] {
                let v = poly::eval(self.coeffs(arm), u);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let c = if lo < 0.0 { margin - lo } else { 0.0 };
        if hi + c > 1.0 {
            return Err(Error::InvalidDgp(format!(
                "MTR curves span [{lo}, {hi}], wider than the unit interval"
            )));
        }
        Ok(c)
    }
}

/// m₁(u) = ℸ/(1+u), m₀(u) = ℷ/(1+u)² + ℶ·sin²(2πu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexDgp {
    pub daleth: f64,
    pub gimel: f64,
    pub beth: f64,
}

impl ComplexDgp {
    pub fn mtr(&self, arm: Arm, u: f64) -> f64 {
        match arm {
            Arm::Treated => self.daleth / (1.0 + u),
            Arm::Untreated => {
                let s = (2.0 * std::f64::consts::PI * u).sin();
                self.gimel / ((1.0 + u) * (1.0 + u)) + self.beth * s * s
            }
        }
    }
}

/// Normal selection model with exposure-count covariate x:
/// m_d(x,u) = μ_d0 + μ_d1·x + μ_d2·x² + ρ_dV·σ_d·Φ⁻¹(u).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDgp {
    pub mu1: [f64; 3],
    pub mu0: [f64; 3],
    pub sigma1: f64,
    pub sigma0: f64,
    #[serde(rename = "rho1V")]
    pub rho1_v: f64,
    #[serde(rename = "rho0V")]
    pub rho0_v: f64,
    #[serde(default)]
    pub rho10: f64,
}

impl GaussianDgp {
    pub fn mu(&self, arm: Arm, x: u32) -> f64 {
        let m = match arm {
            Arm::Treated => self.mu1,
            Arm::Untreated => self.mu0,
        };
        let x = x as f64;
        m[0] + m[1] * x + m[2] * x * x
    }

    /// ρ_dV·σ_d, the loading of the arm-d outcome on the selection index.
    pub fn loading(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Treated => self.rho1_v * self.sigma1,
            Arm::Untreated => self.rho0_v * self.sigma0,
        }
    }

    pub fn sigma(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Treated => self.sigma1,
            Arm::Untreated => self.sigma0,
        }
    }

    pub fn mtr(&self, arm: Arm, x: u32, u: f64) -> f64 {
        self.mu(arm, x) + self.loading(arm) * normal::quantile(u)
    }

    /// ∫ₐᵇ m_d(x,u) du via ∫₀^ν Φ⁻¹ = −φ(Φ⁻¹(ν)).
    pub fn integral(&self, arm: Arm, x: u32, a: f64, b: f64) -> f64 {
        let phi_q = |v: f64| normal::pdf(normal::quantile(v));
        self.mu(arm, x) * (b - a) + self.loading(arm) * (phi_q(a) - phi_q(b))
    }

    /// Lower-triangular factor of the correlation matrix of (ε₁/σ₁, ε₀/σ₀, V).
    pub fn correlation_factor(&self) -> [[f64; 3]; 3] {
        let l21 = self.rho10;
        let l22 = (1.0 - l21 * l21).max(0.0).sqrt();
        let l31 = self.rho1_v;
        let l32 = if l22 > 0.0 { (self.rho0_v - l21 * l31) / l22 } else { 0.0 };
        let l33 = (1.0 - l31 * l31 - l32 * l32).max(0.0).sqrt();
        [[1.0, 0.0, 0.0], [l21, l22, 0.0], [l31, l32, l33]]
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.sigma1, self.sigma0, self.rho1_v, self.rho0_v, self.rho10];
        if self.mu1.iter().chain(&self.mu0).chain(&scalars).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDgp("Gaussian parameters must be finite".into()));
        }
        if self.sigma1 <= 0.0 || self.sigma0 <= 0.0 {
            return Err(Error::InvalidDgp("sigma1 and sigma0 must be strictly positive".into()));
        }
        for (name, r) in [("rho1V", self.rho1_v), ("rho0V", self.rho0_v), ("rho10", self.rho10)] {
            if r.abs() >= 1.0 {
                return Err(Error::InvalidDgp(format!("{name} = {r} must lie in (-1, 1)")));
            }
        }
        let (a, b, c) = (self.rho10, self.rho1_v, self.rho0_v);
        let det = 1.0 + 2.0 * a * b * c - a * a - b * b - c * c;
        if det < -1e-12 {
            return Err(Error::InvalidDgp(format!(
                "covariance of (eps1, eps0, V) is not positive semi-definite (correlation determinant {det:e})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Polynomial(PolynomialDgp),
    Complex(ComplexDgp),
    Gaussian(GaussianDgp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub binary_outcome: bool,
}

/// Where a binary-flagged DGP leaves the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub arm: Arm,
    pub u: f64,
    pub value: f64,
}

/// ψ₁(ν) = (1/ν)∫₀^ν m₁ and ψ₀(ν) = (1/(1−ν))∫_ν¹ m₀; each is absent where its
/// conditioning event has zero mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub treated: Option<f64>,
    pub untreated: Option<f64>,
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| i as f64 / (n - 1) as f64)
}

impl DgpSpec {
    pub fn polynomial(m1_coeffs: Vec<f64>, m0_coeffs: Vec<f64>) -> Self {
        DgpSpec { family: Family::Polynomial(PolynomialDgp { m1_coeffs, m0_coeffs }), binary_outcome: false }
    }

    pub fn complex(dgp: ComplexDgp) -> Self {
        DgpSpec { family: Family::Complex(dgp), binary_outcome: false }
    }

    pub fn gaussian(dgp: GaussianDgp) -> Self {
        DgpSpec { family: Family::Gaussian(dgp), binary_outcome: false }
    }

    pub fn with_binary_outcome(mut self, binary: bool) -> Self {
        self.binary_outcome = binary;
        self
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Polynomial(_) => "polynomial",
            Family::Complex(_) => "complex",
            Family::Gaussian(_) => "gaussian",
        }
    }

    pub fn requires_x(&self) -> bool {
        matches!(self.family, Family::Gaussian(_))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.family {
            Family::Polynomial(p) => {
                if p.m1_coeffs.is_empty() || p.m0_coeffs.is_empty() {
                    return Err(Error::InvalidDgp("coefficient lists must be non-empty".into()));
                }
                if p.m1_coeffs.iter().chain(&p.m0_coeffs).any(|c| !c.is_finite()) {
                    return Err(Error::InvalidDgp("coefficients must be finite".into()));
                }
            }
            Family::Complex(c) => {
                if ![c.daleth, c.gimel, c.beth].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidDgp("complex DGP parameters must be finite".into()));
                }
            }
            Family::Gaussian(g) => {
                g.validate()?;
                if self.binary_outcome {
                    return Err(Error::InvalidDgp(
                        "the Gaussian family has continuous outcomes and cannot be flagged binary".into(),
                    ));
                }
            }
        }
        if self.binary_outcome {
            if let Some(v) = self.range_violation() {
                return Err(Error::InvalidDgp(format!(
                    "binary outcome flagged but m{}({}) = {} lies outside [0, 1]",
                    v.arm.d(),
                    v.u,
                    v.value
                )));
            }
        }
        Ok(())
    }

    /// First grid point at which an MTR leaves [0,1]. Always `None` for the
    /// Gaussian family, whose outcomes are continuous.
    pub fn range_violation(&self) -> Option<RangeViolation> {
        if self.requires_x() {
            return None;
        }
        for u in grid(RANGE_GRID) {
            for arm in [Arm::Treated, Arm::Untreated] {
                let value = self.mtr_unchecked(arm, u, 0);
                if !(0.0..=1.0).contains(&value) {
                    return Some(RangeViolation { arm, u, value });
                }
            }
        }
        None
    }

    fn check_args(&self, u: f64, x: Option<u32>) -> Result<u32> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("u = {u} is outside [0, 1]")));
        }
        match (self.requires_x(), x) {
            (true, None) => Err(Error::Domain("the Gaussian family needs an exposure count x".into())),
            (false, Some(_)) => Err(Error::Domain(format!(
                "the {} family takes no exposure count",
                self.family_name()
            ))),
            (true, Some(x)) => {
                if u == 0.0 || u == 1.0 {
                    Err(Error::Domain(format!(
                        "u = {u}: the Gaussian MTR involves the quantile function, which diverges at 0 and 1"
                    )))
                } else {
                    Ok(x)
                }
            }
            (false, None) => Ok(0),
        }
    }

    fn mtr_unchecked(&self, arm: Arm, u: f64, x: u32) -> f64 {
        match &self.family {
            Family::Polynomial(p) => poly::eval(p.coeffs(arm), u),
            Family::Complex(c) => c.mtr(arm, u),
            Family::Gaussian(g) => g.mtr(arm, x, u),
        }
    }

    pub fn mtr(&self, arm: Arm, u: f64, x: Option<u32>) -> Result<f64> {
        let x = self.check_args(u, x)?;
        Ok(self.mtr_unchecked(arm, u, x))
    }

    pub fn mte(&self, u: f64, x: Option<u32>) -> Result<f64> {
        let x = self.check_args(u, x)?;
        Ok(self.mtr_unchecked(Arm::Treated, u, x) - self.mtr_unchecked(Arm::Untreated, u, x))
    }

    /// ∫ₐᵇ m_d(u) du for 0 ≤ a ≤ b ≤ 1.
    pub fn integral_mtr(&self, arm: Arm, a: f64, b: f64, x: Option<u32>) -> Result<f64> {
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::Domain(format!("integration range [{a}, {b}] is not inside [0, 1]")));
        }
        if self.requires_x() != x.is_some() {
            self.check_args(0.5, x)?;
        }
        match &self.family {
            Family::Polynomial(p) => Ok(poly::integral(p.coeffs(arm), a, b)),
            Family::Complex(c) => quad::integrate(|u| c.mtr(arm, u), a, b, QUAD_TOL),
            Family::Gaussian(g) => Ok(g.integral(arm, x.unwrap_or(0), a, b)),
        }
    }

    /// ∫ₐᵇ MTE(u) du.
    pub fn integral_mte(&self, a: f64, b: f64, x: Option<u32>) -> Result<f64> {
        Ok(self.integral_mtr(Arm::Treated, a, b, x)? - self.integral_mtr(Arm::Untreated, a, b, x)?)
    }

    pub fn ate(&self, x: Option<u32>) -> Result<f64> {
        self.integral_mte(0.0, 1.0, x)
    }

    pub fn analytic_psi(&self, nu: f64, x: Option<u32>) -> Result<Psi> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(Error::Domain(format!("propensity {nu} is outside [0, 1]")));
        }
        let treated = if nu > 0.0 {
            Some(self.integral_mtr(Arm::Treated, 0.0, nu, x)? / nu)
        } else {
            None
        };
        let untreated = if nu < 1.0 {
            Some(self.integral_mtr(Arm::Untreated, nu, 1.0, x)? / (1.0 - nu))
        } else {
            None
        };
        Ok(Psi { treated, untreated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dgp1_like() -> DgpSpec {
        DgpSpec::polynomial(
            vec![-0.000_696_17, 0.007_009_02, 0.003_99],
            vec![0.002_903_83, -0.018_390_98, 0.021_89, -0.0027],
        )
    }

    fn reference_gaussian() -> GaussianDgp {
        GaussianDgp {
            mu1: [0.002_443_738, 0.007_943_073, -0.001_791_018],
            mu0: [0.000_250_5, 0.001, -0.000_75],
            sigma1: 0.018_558_4,
            sigma0: 0.015_824_5,
            rho1_v: 0.3,
            rho0_v: -0.006_081_128,
            rho10: 0.0,
        }
    }

    #[test]
    fn identical_arms_have_zero_mte() {
        let d = DgpSpec::polynomial(vec![0.2], vec![0.2]);
        for u in [0.0, 0.3, 1.0] {
            assert_eq!(d.mte(u, None).unwrap(), 0.0);
        }
        assert_eq!(d.ate(None).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_median_is_intercept() {
        let d = DgpSpec::gaussian(reference_gaussian());
        let v = d.mtr(Arm::Untreated, 0.5, Some(0)).unwrap();
        assert!((v - 0.000_250_5).abs() < 1e-18);
    }

    #[test]
    fn gaussian_rejects_endpoints_and_missing_x() {
        let d = DgpSpec::gaussian(reference_gaussian());
        let err = d.mtr(Arm::Treated, 0.0, Some(0)).unwrap_err();
        assert!(err.to_string().contains("diverges"));
        assert!(d.mtr(Arm::Treated, 0.5, None).is_err());
        assert!(dgp1_like().mtr(Arm::Treated, 0.5, Some(1)).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(dgp1_like().mtr(Arm::Treated, 1.01, None), Err(Error::Domain(_))));
        assert!(matches!(dgp1_like().analytic_psi(-0.1, None), Err(Error::Domain(_))));
    }

    #[test]
    fn cubic_mte_at_zero_and_its_ate() {
        let d = dgp1_like();
        assert!((d.mte(0.0, None).unwrap() + 0.0036).abs() < 1e-12);
        let ate = -0.0036 + 0.0254 / 2.0 - 0.0179 / 3.0 + 0.0027 / 4.0;
        assert!((d.ate(None).unwrap() - ate).abs() < 1e-12);
        assert!((ate - 0.003_808_33).abs() < 1e-8);
    }

    #[test]
    fn psi_of_simple_curves() {
        let c = DgpSpec::polynomial(vec![0.0, 1.0], vec![0.25]);
        for nu in [0.1, 0.37, 0.9] {
            let psi = c.analytic_psi(nu, None).unwrap();
            assert!((psi.treated.unwrap() - nu / 2.0).abs() < 1e-15);
            assert!((psi.untreated.unwrap() - 0.25).abs() < 1e-15);
        }
        let at0 = c.analytic_psi(0.0, None).unwrap();
        assert_eq!(at0.treated, None);
        assert!((at0.untreated.unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(c.analytic_psi(1.0, None).unwrap().untreated, None);
    }

    #[test]
    fn complex_moments_match_closed_forms() {
        let c = ComplexDgp { daleth: 0.000_928_5, gimel: 0.000_533_3, beth: 0.000_126_7 };
        let d = DgpSpec::complex(c);
        let nu: f64 = 0.37;
        let psi = d.analytic_psi(nu, None).unwrap();
        let psi1 = c.daleth * (1.0 + nu).ln() / nu;
        assert!((psi.treated.unwrap() - psi1).abs() < 1e-14);
        let tau = 2.0 * std::f64::consts::PI;
        let sin_int = |u: f64| u / 2.0 - (2.0 * tau * u).sin() / (4.0 * tau);
        let inv_int = |u: f64| -1.0 / (1.0 + u);
        let psi0 = (c.gimel * (inv_int(1.0) - inv_int(nu)) + c.beth * (sin_int(1.0) - sin_int(nu))) / (1.0 - nu);
        assert!((psi.untreated.unwrap() - psi0).abs() < 1e-14);
        let mte = d.mte(0.25, None).unwrap();
        assert!((mte - (c.daleth / 1.25 - c.gimel / 1.5625 - c.beth)).abs() < 1e-16);
    }

    #[test]
    fn gaussian_closed_form_integral_matches_quadrature() {
        let g = reference_gaussian();
        for x in 0..3 {
            for (a, b) in [(0.05, 0.37), (0.37, 0.95), (0.2, 0.21)] {
                let q = quad::integrate(|u| g.mtr(Arm::Treated, x, u), a, b, 1e-14).unwrap();
                assert!((q - g.integral(Arm::Treated, x, a, b)).abs() < 1e-12);
            }
        }
        assert!((DgpSpec::gaussian(g).ate(Some(1)).unwrap() - (g.mu(Arm::Treated, 1) - g.mu(Arm::Untreated, 1))).abs() < 1e-15);
    }

    #[test]
    fn binary_flag_range_check() {
        let bad = dgp1_like().with_binary_outcome(true);
        let err = bad.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidDgp(_)));
        let p = match dgp1_like().family {
            Family::Polynomial(p) => p,
            _ => unreachable!(),
        };
        let c = p.binary_shift(1e-6).unwrap();
        let ok = DgpSpec { family: Family::Polynomial(p.shifted(c)), binary_outcome: true };
        ok.validate().unwrap();
        let ok_mte = ok.mte(0.3, None).unwrap();
        assert!((ok_mte - dgp1_like().mte(0.3, None).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_validation() {
        let mut g = reference_gaussian();
        g.sigma0 = 0.0;
        assert!(DgpSpec::gaussian(g).validate().is_err());
        let mut g = reference_gaussian();
        g.rho1_v = 0.9;
        g.rho0_v = -0.9;
        g.rho10 = 0.9;
        assert!(DgpSpec::gaussian(g).validate().is_err());
        assert!(DgpSpec::gaussian(reference_gaussian()).with_binary_outcome(true).validate().is_err());
        DgpSpec::gaussian(reference_gaussian()).validate().unwrap();
    }

    #[test]
    fn correlation_factor_reproduces_correlations() {
        let mut g = reference_gaussian();
        g.rho10 = 0.4;
        let l = g.correlation_factor();
        let dot = |i: usize, j: usize| (0..3).map(|k| l[i][k] * l[j][k]).sum::<f64>();
        assert!((dot(0, 1) - 0.4).abs() < 1e-15);
        assert!((dot(0, 2) - g.rho1_v).abs() < 1e-15);
        assert!((dot(1, 2) - g.rho0_v).abs() < 1e-15);
        for i in 0..3 {
            assert!((dot(i, i) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn json_schema_roundtrip() {
        let d = dgp1_like().with_binary_outcome(false);
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"family\":\"polynomial\""));
        let back: DgpSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let g: DgpSpec = serde_json::from_str(
            r#"{"family":"gaussian","mu1":[0,0,0],"mu0":[0,0,0],"sigma1":1,"sigma0":1,"rho1V":0.3,"rho0V":0.1}"#,
        )
        .unwrap();
        assert!(!g.binary_outcome);
        assert!(matches!(g.family, Family::Gaussian(GaussianDgp { rho10, .. }) if rho10 == 0.0));
    }

    proptest! {
        #[test]
        fn mass_decomposition_gives_arm_integrals(
            m1 in proptest::collection::vec(-1.0f64..1.0, 1..5),
            m0 in proptest::collection::vec(-1.0f64..1.0, 1..5),
            nus in proptest::collection::vec(0.01f64..0.99, 5),
        ) {
            let d = DgpSpec::polynomial(m1.clone(), m0.clone());
            let ate = d.ate(None).unwrap();
            let i1 = poly::integral(&m1, 0.0, 1.0);
            let i0 = poly::integral(&m0, 0.0, 1.0);
            prop_assert!((ate - (i1 - i0)).abs() < 1e-13);
            for nu in nus {
                let psi = d.analytic_psi(nu, None).unwrap();
                let left = nu * psi.treated.unwrap() + poly::integral(&m1, nu, 1.0);
                let right = (1.0 - nu) * psi.untreated.unwrap() + poly::integral(&m0, 0.0, nu);
                prop_assert!((left - i1).abs() < 1e-13);
                prop_assert!((right - i0).abs() < 1e-13);
            }
        }

        #[test]
        fn gaussian_mtr_monotone_with_sign_of_rho(
            rho in -0.95f64..0.95, u in 0.01f64..0.98, du in 1e-3f64..0.01, x in 0u32..3,
        ) {
            prop_assume!(rho.abs() > 1e-3);
            let mut g = reference_gaussian();
            g.rho1_v = rho;
            let d = DgpSpec::gaussian(g);
            let a = d.mtr(Arm::Treated, u, Some(x)).unwrap();
            let b = d.mtr(Arm::Treated, u + du, Some(x)).unwrap();
            prop_assert_eq!((b - a).signum(), rho.signum());
        }
    }
}
