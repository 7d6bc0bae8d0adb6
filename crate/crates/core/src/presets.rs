//! Canned inputs for the calibrated study: observed moments, target MTE cubics,
//! experiment designs, decision problems and the multi-exposure model.

use crate::calibrate::{
    calibrate_complex, reconstruct_polynomial_dgp, GaussianAggregates, PolynomialReconstruction, ReconstructionAnchor,
    StudyMoments,
};
use crate::decide::DecisionSpec;
use crate::design::{equal_exposure_propensity, CellDesign, CostSpec};
use crate::dgp::{ComplexDgp, DgpSpec, GaussianDgp};
use crate::error::Result;

pub const REFERENCE_STUDY: StudyMoments = StudyMoments { psi11: 0.00079, psi01: 0.00025, psi00: 0.00033, nu1: 0.37, elig_share: 0.7 };

/// MTE(u) = −0.0036 + 0.0254u − 0.0179u² + 0.0027u³.
pub const DGP1_MTE: [f64; 4] = [-0.0036, 0.0254, -0.0179, 0.0027];
/// MTE(u) = −0.0034 + 0.0268u − 0.0288u² + 0.003u³.
pub const DGP2_MTE: [f64; 4] = [-0.0034, 0.0268, -0.0288, 0.003];
/// Two-cell ATE norms that close the reconstruction of each DGP.
pub const DGP1_ATE_NORM: f64 = -0.03009;
pub const DGP2_ATE_NORM: f64 = 0.02432;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudyDgp {
    Dgp1,
    Dgp2,
}

impl StudyDgp {
    pub const ALL: [StudyDgp; 2] = [StudyDgp::Dgp1, StudyDgp::Dgp2];

    pub fn label(self) -> &'static str {
        match self {
            StudyDgp::Dgp1 => "dgp1",
            StudyDgp::Dgp2 => "dgp2",
        }
    }

    pub fn parse(s: &str) -> Option<StudyDgp> {
        match s {
            "dgp1" => Some(StudyDgp::Dgp1),
            "dgp2" => Some(StudyDgp::Dgp2),
            _ => None,
        }
    }

    pub fn target_mte(self) -> [f64; 4] {
        match self {
            StudyDgp::Dgp1 => DGP1_MTE,
            StudyDgp::Dgp2 => DGP2_MTE,
        }
    }

    pub fn anchor(self) -> ReconstructionAnchor {
        let target = match self {
            StudyDgp::Dgp1 => DGP1_ATE_NORM,
            StudyDgp::Dgp2 => DGP2_ATE_NORM,
        };
        ReconstructionAnchor::AteNorm { nus: two_cell_nus().to_vec(), target }
    }

    pub fn reconstruction(self) -> Result<PolynomialReconstruction> {
        reconstruct_polynomial_dgp(&REFERENCE_STUDY, self.target_mte(), &self.anchor())
    }

    pub fn dgp(self) -> Result<DgpSpec> {
        let r = self.reconstruction()?;
        Ok(DgpSpec::polynomial(r.dgp.m1_coeffs, r.dgp.m0_coeffs))
    }

    /// The reconstruction shifted into [0, 1] on both arms so that binary
    /// outcomes can be simulated. The MTE is unchanged.
    pub fn binary_dgp(self) -> Result<DgpSpec> {
        let p = self.reconstruction()?.dgp;
        let c = p.binary_shift(1e-6)?;
        let s = p.shifted(c);
        let spec = DgpSpec::polynomial(s.m1_coeffs, s.m0_coeffs).with_binary_outcome(true);
        spec.validate()?;
        Ok(spec)
    }
}

/// Cell eligibility shares and propensities: the study cell plus cells with
/// matching exposed share, a low-propensity cell and a high-eligibility cell.
pub fn cells(count: usize) -> (Vec<f64>, Vec<f64>) {
    let (e1, n1) = (REFERENCE_STUDY.elig_share, REFERENCE_STUDY.nu1);
    let all = [
        (e1, n1),
        (0.3, equal_exposure_propensity(e1, n1, 0.3)),
        (0.5, equal_exposure_propensity(e1, n1, 0.5)),
        (0.25, 0.17),
        (0.9, equal_exposure_propensity(e1, n1, 0.9)),
    ];
    let pick: &[usize] = match count {
        1 => &[0],
        2 => &[0, 1],
        3 => &[0, 1, 2],
        _ => &[0, 1, 2, 3, 4],
    };
    pick.iter().map(|&i| all[i]).unzip()
}

pub fn two_cell_nus() -> [f64; 2] {
    let (_, nus) = cells(2);
    [nus[0], nus[1]]
}

/// One of the canned designs with 1, 2, 3 or 5 cells and equal assignment.
pub fn design(count: usize) -> Result<CellDesign> {
    let (elig, nus) = cells(count);
    let d = CellDesign::new(&elig, &nus, None)?;
    d.ensure_valid()?;
    Ok(d)
}

/// δ = 1, κ(ν) = 0.001ν⁴.
pub fn study_decision() -> DecisionSpec {
    DecisionSpec::new(1.0, CostSpec::power(0.001, 4.0))
}

/// δ = 1, κ(ν) = 0.0001ν⁴, the scale at which the complex DGP has an interior optimum.
pub fn complex_decision() -> DecisionSpec {
    DecisionSpec::new(1.0, CostSpec::power(0.0001, 4.0))
}

pub fn complex_dgp() -> Result<ComplexDgp> {
    calibrate_complex(&REFERENCE_STUDY)
}

/// Multi-exposure parameters obtained from the study aggregates.
pub fn gaussian_dgp() -> GaussianDgp {
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

/// Aggregates consistent with [`gaussian_dgp`]: untreated means at
/// ν ∈ {0, 0.37} and treated means for x ∈ {0, 1, 2} at ν = 0.37.
pub fn gaussian_aggregates() -> Result<GaussianAggregates> {
    let nu = REFERENCE_STUDY.nu1;
    GaussianAggregates::implied_by(&gaussian_dgp(), &[(0, 0.0), (0, nu)], &[(0, nu), (1, nu), (2, nu)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Family;

    #[test]
    fn designs_have_the_stated_propensities() {
        let (elig, nus) = cells(5);
        assert_eq!(elig, vec![0.7, 0.3, 0.5, 0.25, 0.9]);
        assert!((nus[1] - 0.8633).abs() < 1e-4);
        assert!((nus[2] - 0.518).abs() < 1e-12);
        assert!((nus[4] - 0.288).abs() < 5e-4);
        for c in [1, 2, 3, 5] {
            assert_eq!(design(c).unwrap().len(), c);
        }
    }

    #[test]
    fn reconstructions_carry_the_target_cubic() {
        for d in StudyDgp::ALL {
            let Family::Polynomial(p) = d.dgp().unwrap().family else { panic!() };
            assert_eq!(p.m0_coeffs[3], -d.target_mte()[3]);
        }
    }

    #[test]
    fn binary_variants_keep_the_mte() {
        for d in StudyDgp::ALL {
            let (a, b) = (d.dgp().unwrap(), d.binary_dgp().unwrap());
            assert!(b.range_violation().is_none());
            for u in [0.0, 0.3, 0.9] {
                assert!((a.mte(u, None).unwrap() - b.mte(u, None).unwrap()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn aggregates_round_trip_through_calibration() {
        let g = crate::calibrate::calibrate_gaussian(&gaussian_aggregates().unwrap()).unwrap();
        let p = gaussian_dgp();
        for (a, b) in g.mu1.iter().chain(&g.mu0).zip(p.mu1.iter().chain(&p.mu0)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.rho0_v - p.rho0_v).abs() < 1e-12);
    }
}
