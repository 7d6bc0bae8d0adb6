//! The reach decision: choose ν to maximize δ∫₀^ν MTE(u)du − κ(ν).
//!
//! The constant δ·E[Y₀] is left out of every profit so that true and
//! approximated objectives are directly comparable.

use serde::{Deserialize, Serialize};

use crate::bayes::{draw_posterior_lambda, PosteriorSummary, Priors};
use crate::design::CostSpec;
use crate::dgp::{Arm, DgpSpec};
use crate::error::{Error, Result};
use crate::estimate::LambdaCoefficients;
use crate::numeric::{golden, poly, quad};
use crate::simulate::ExperimentCounts;

pub const GRID_POINTS: usize = 10_001;
pub const NU_TOL: f64 = 1e-9;
const SEGMENT_TOL: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSpec {
    /// δ, the value of one conversion.
    pub delta: f64,
    pub cost: CostSpec,
    /// Optional spending cap B: ν is restricted to κ(ν) ≤ B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<f64>,
}

impl DecisionSpec {
    pub fn new(delta: f64, cost: CostSpec) -> Self {
        DecisionSpec { delta, cost, budget_cap: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Input(format!("delta must be positive and finite, got {}", self.delta)));
        }
        self.cost.validate()?;
        if let Some(b) = self.budget_cap {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Input(format!("budget cap must be nonnegative, got {b}")));
            }
        }
        Ok(())
    }

    /// Largest admissible reach.
    pub fn max_nu(&self) -> Result<f64> {
        match self.budget_cap {
            None => Ok(1.0),
            Some(b) if b >= self.cost.max_cost() => Ok(1.0),
            Some(b) => self.cost.inverse(b),
        }
    }

    /// The same problem with δ and κ multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DecisionSpec {
        let cost = match &self.cost {
            CostSpec::Power { scale, exponent } => CostSpec::Power { scale: scale * factor, exponent: *exponent },
            CostSpec::Tabulated { points } => {
                CostSpec::Tabulated { points: points.iter().map(|&(n, c)| (n, c * factor)).collect() }
            }
        };
        DecisionSpec { delta: self.delta * factor, cost, budget_cap: self.budget_cap.map(|b| b * factor) }
    }
}

/// A source of MTE curves: a true DGP (with exposure count for the Gaussian
/// family), a point-estimate λ, or posterior-mean λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MteRepresentation {
    TrueDgp {
        dgp: DgpSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<u32>,
    },
    Lambda {
        lambda: LambdaCoefficients,
    },
    PosteriorMean {
        lambda: LambdaCoefficients,
        draws: usize,
    },
}

impl MteRepresentation {
    pub fn dgp(dgp: DgpSpec) -> Self {
        MteRepresentation::TrueDgp { dgp, x: None }
    }

    pub fn lambda(lambda: LambdaCoefficients) -> Self {
        MteRepresentation::Lambda { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MteRepresentation::TrueDgp { dgp, x } => {
                dgp.validate()?;
                if dgp.requires_x() != x.is_some() {
                    return Err(Error::Input(
                        "an exposure count x is required for, and only for, the Gaussian family".into(),
                    ));
                }
                Ok(())
            }
            MteRepresentation::Lambda { lambda } | MteRepresentation::PosteriorMean { lambda, .. } => {
                lambda.validate()
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MteRepresentation::TrueDgp { .. } => "true_dgp",
            MteRepresentation::Lambda { .. } => "lambda",
            MteRepresentation::PosteriorMean { .. } => "posterior_mean",
        }
    }

    fn closed_form(&self) -> bool {
        match self {
            MteRepresentation::TrueDgp { dgp, .. } => !matches!(dgp.family, crate::dgp::Family::Complex(_)),
            _ => true,
        }
    }

    pub fn mte(&self, u: f64) -> Result<f64> {
        match self {
            MteRepresentation::TrueDgp { dgp, x } => dgp.mte(u, *x),
            MteRepresentation::Lambda { lambda } | MteRepresentation::PosteriorMean { lambda, .. } => {
                if !(0.0..=1.0).contains(&u) {
                    return Err(Error::Domain(format!("u = {u} is outside [0, 1]")));
                }
                Ok(lambda.mte(u))
            }
        }
    }

    /// ∫ₐᵇ MTE(u) du.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        match self {
            MteRepresentation::TrueDgp { dgp, x } => dgp.integral_mte(a, b, *x),
            MteRepresentation::Lambda { lambda } | MteRepresentation::PosteriorMean { lambda, .. } => {
                if !(0.0 <= a && a <= b && b <= 1.0) {
                    return Err(Error::Domain(format!("integration range [{a}, {b}] is not inside [0, 1]")));
                }
                Ok(poly::integral(&lambda.mte_coeffs(), a, b))
            }
        }
    }

    pub fn ate(&self) -> Result<f64> {
        self.integral(0.0, 1.0)
    }

    /// E[Y₀] = ∫₀¹ m₀, available for true DGPs and λ curves alike.
    pub fn untreated_mean(&self) -> Result<f64> {
        match self {
            MteRepresentation::TrueDgp { dgp, x } => dgp.integral_mtr(Arm::Untreated, 0.0, 1.0, *x),
            MteRepresentation::Lambda { lambda } | MteRepresentation::PosteriorMean { lambda, .. } => {
                Ok(poly::integral(&lambda.lambda0, 0.0, 1.0))
            }
        }
    }

    /// ∫₀^ν MTE at every grid point. Quadrature-based families accumulate
    /// short segment integrals instead of integrating from zero each time.
    fn cumulative_on(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if self.closed_form() {
            return grid.iter().map(|&nu| self.integral(0.0, nu)).collect();
        }
        let MteRepresentation::TrueDgp { dgp, x } = self else {
            unreachable!("lambda curves have closed forms")
        };
        let mut out = Vec::with_capacity(grid.len());
        let (mut prev, mut acc) = (0.0, 0.0);
        for &nu in grid {
            acc += quad::integrate(|u| dgp.mte(u, *x).unwrap_or(f64::NAN), prev, nu, SEGMENT_TOL)?;
            out.push(acc);
            prev = nu;
        }
        Ok(out)
    }
}

pub fn expected_profit(mte: &MteRepresentation, spec: &DecisionSpec, nu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Domain(format!("reach {nu} is outside [0, 1]")));
    }
    Ok(spec.delta * mte.integral(0.0, nu)? - spec.cost.eval(nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub nu_star: f64,
    pub profit_star: f64,
}

/// Global maximizer of expected profit over the admissible reach range.
///
/// A 10,001-point grid locates every local maximum (endpoints included); a
/// golden-section search refines each inside its bracketing grid interval.
/// Ties go to the smallest ν.
pub fn optimize_nu(mte: &MteRepresentation, spec: &DecisionSpec) -> Result<Optimum> {
    mte.validate()?;
    spec.validate()?;
    let hi = spec.max_nu()?;
    let n = GRID_POINTS;
    let grid: Vec<f64> = (0..n).map(|i| if i + 1 == n { hi } else { hi * i as f64 / (n - 1) as f64 }).collect();
    let cum = mte.cumulative_on(&grid)?;
    let values: Vec<f64> = grid.iter().zip(&cum).map(|(&nu, &c)| spec.delta * c - spec.cost.eval(nu)).collect();
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for k in 0..n {
        let left_ok = k == 0 || values[k] >= values[k - 1];
        let right_ok = k + 1 == n || values[k] >= values[k + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        candidates.push((grid[k], values[k]));
        let (a, b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(n - 1)]);
        if b > a {
            // Profit at ν in [a, b] is the grid value at a plus the segment integral.
            let base = cum[k.saturating_sub(1)];
            let mut err = None;
            let (nu, v) = golden::maximize(
                |nu| match mte.integral(a, nu) {
                    Ok(seg) => spec.delta * (base + seg) - spec.cost.eval(nu),
                    Err(e) => {
                        err = Some(e);
                        f64::NEG_INFINITY
                    }
                },
                a,
                b,
                NU_TOL,
            );
            if let Some(e) = err {
                return Err(e);
            }
            candidates.push((nu, v));
        }
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut best = candidates[0];
    for &(nu, v) in &candidates[1..] {
        let slack = 1e-15 * best.1.abs().max(v.abs());
        if v > best.1 + slack {
            best = (nu, v);
        }
    }
    Ok(Optimum { nu_star: best.0, profit_star: best.1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub nu_chosen: f64,
    pub profit_chosen: f64,
    pub true_nu_star: f64,
    pub true_profit_star: f64,
    /// Π(ν*) − Π(ν_chosen), never negative.
    pub absolute_loss: f64,
    /// absolute / Π(ν*); absent when Π(ν*) ≤ 0.
    pub relative_loss: Option<f64>,
    /// absolute / (Π(ν*) + δ·E[Y₀]), i.e. relative to profit including the
    /// revenue the audience generates without ads.
    pub baseline_relative_loss: Option<f64>,
}

pub fn profit_loss(truth: &MteRepresentation, spec: &DecisionSpec, nu_chosen: f64) -> Result<LossReport> {
    let opt = optimize_nu(truth, spec)?;
    let chosen = expected_profit(truth, spec, nu_chosen)?;
    let absolute = (opt.profit_star - chosen).max(0.0);
    let baseline = opt.profit_star + spec.delta * truth.untreated_mean()?;
    Ok(LossReport {
        nu_chosen,
        profit_chosen: chosen,
        true_nu_star: opt.nu_star,
        true_profit_star: opt.profit_star,
        absolute_loss: absolute,
        relative_loss: (opt.profit_star > 0.0).then(|| absolute / opt.profit_star),
        baseline_relative_loss: (baseline > 0.0).then(|| absolute / baseline),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub nu_star: f64,
    pub profit_star: f64,
    pub absolute_loss: Option<f64>,
    pub relative_loss: Option<f64>,
    pub baseline_relative_loss: Option<f64>,
    pub representation: MteRepresentation,
    pub spec: DecisionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_nu_star: Option<f64>,
}

/// Optimizes `mte` and, when the truth is known, scores the decision against it.
pub fn decide(mte: &MteRepresentation, spec: &DecisionSpec, truth: Option<&MteRepresentation>) -> Result<DecisionReport> {
    let opt = optimize_nu(mte, spec)?;
    let loss = truth.map(|t| profit_loss(t, spec, opt.nu_star)).transpose()?;
    Ok(DecisionReport {
        nu_star: opt.nu_star,
        profit_star: opt.profit_star,
        absolute_loss: loss.map(|l| l.absolute_loss),
        relative_loss: loss.and_then(|l| l.relative_loss),
        baseline_relative_loss: loss.and_then(|l| l.baseline_relative_loss),
        representation: mte.clone(),
        spec: spec.clone(),
        true_nu_star: loss.map(|l| l.true_nu_star),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDecision {
    pub nu_star: f64,
    pub profit_star: f64,
    pub posterior: PosteriorSummary,
    pub spec: DecisionSpec,
}

/// Posterior-mean λ from the experiment, then the reach that maximizes the
/// profit those curves imply.
pub fn decide_from_experiment(
    counts: &ExperimentCounts,
    spec: &DecisionSpec,
    priors: &Priors,
    draws: usize,
    seed: u64,
) -> Result<ExperimentDecision> {
    let posterior = draw_posterior_lambda(counts, priors, draws, seed)?;
    let summary = posterior.summary();
    let opt = optimize_nu(&summary.representation(), spec)?;
    Ok(ExperimentDecision { nu_star: opt.nu_star, profit_star: opt.profit_star, posterior: summary, spec: spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mte_curve(coeffs: &[f64]) -> MteRepresentation {
        MteRepresentation::dgp(DgpSpec::polynomial(coeffs.to_vec(), vec![0.0]))
    }

    fn quartic() -> DecisionSpec {
        DecisionSpec::new(1.0, CostSpec::power(0.001, 4.0))
    }

    #[test]
    fn zero_reach_earns_nothing() {
        for rep in [
            mte_curve(&[-0.0036, 0.0254, -0.0179, 0.0027]),
            MteRepresentation::lambda(LambdaCoefficients { lambda1: vec![0.1, 0.2], lambda0: vec![0.3, 0.1, 0.0] }),
        ] {
            assert_eq!(expected_profit(&rep, &quartic(), 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn cubic_profit_at_full_reach() {
        let p = expected_profit(&mte_curve(&[-0.0036, 0.0254, -0.0179, 0.0027]), &quartic(), 1.0).unwrap();
        let oracle = -0.0036 + 0.0254 / 2.0 - 0.0179 / 3.0 + 0.0027 / 4.0 - 0.001;
        assert!((p - oracle).abs() < 1e-15);
    }

    #[test]
    fn zero_mte_means_no_reach() {
        let rep = MteRepresentation::lambda(LambdaCoefficients { lambda1: vec![0.2, 0.1], lambda0: vec![0.2, 0.1, 0.0] });
        for nu in [0.1, 0.5, 1.0] {
            assert!((expected_profit(&rep, &quartic(), nu).unwrap() + quartic().cost.eval(nu)).abs() < 1e-15);
        }
        assert_eq!(optimize_nu(&rep, &quartic()).unwrap().nu_star, 0.0);
    }

    #[test]
    fn interior_optimum_matches_first_order_condition() {
        // MTE(u) = 0.004 (1 − u): FOC 0.004 (1 − ν) = 0.004 ν³.
        let rep = mte_curve(&[0.004, -0.004]);
        let opt = optimize_nu(&rep, &quartic()).unwrap();
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..100 {
            let m: f64 = 0.5 * (lo + hi);
            if (1.0 - m) - m.powi(3) > 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        assert!((opt.nu_star - lo).abs() < 1e-6);
    }

    #[test]
    fn full_reach_when_profit_rises_to_the_end() {
        let opt = optimize_nu(&mte_curve(&[-0.0036, 0.0254, -0.0179, 0.0027]), &quartic()).unwrap();
        assert_eq!(opt.nu_star, 1.0);
    }

    #[test]
    fn budget_cap_limits_reach() {
        let mut spec = quartic();
        spec.budget_cap = Some(0.001 * 0.5f64.powi(4));
        let opt = optimize_nu(&mte_curve(&[0.01]), &spec).unwrap();
        assert!((opt.nu_star - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_at_the_optimum_is_zero() {
        let truth = mte_curve(&[0.004, -0.004]);
        let opt = optimize_nu(&truth, &quartic()).unwrap();
        let l = profit_loss(&truth, &quartic(), opt.nu_star).unwrap();
        assert_eq!(l.absolute_loss, 0.0);
        assert_eq!(l.relative_loss, Some(0.0));
        let worse = profit_loss(&truth, &quartic(), 0.1).unwrap();
        assert!(worse.absolute_loss > 0.0);
    }

    #[test]
    fn multimodal_objective_picks_global_maximum() {
        // MTE = 0.01·sin²(2πu) against a mildly convex cost has two local
        // maxima; the brute-force oracle uses the closed-form integral.
        let truth = MteRepresentation::dgp(DgpSpec::complex(crate::dgp::ComplexDgp { daleth: 0.0, gimel: 0.0, beth: -0.01 }));
        let spec = DecisionSpec::new(1.0, CostSpec::power(0.005, 1.2));
        let tau = 2.0 * std::f64::consts::PI;
        let profit = |nu: f64| 0.01 * (nu / 2.0 - (2.0 * tau * nu).sin() / (4.0 * tau)) - 0.005 * nu.powf(1.2);
        let (mut best_nu, mut best) = (0.0, 0.0);
        for i in 0..=1_000_000 {
            let nu = i as f64 / 1e6;
            if profit(nu) > best {
                best = profit(nu);
                best_nu = nu;
            }
        }
        let opt = optimize_nu(&truth, &spec).unwrap();
        assert!((opt.nu_star - best_nu).abs() < 1e-5, "{} vs {}", opt.nu_star, best_nu);
        assert!((opt.profit_star - best).abs() < 1e-12);
        assert!(profit(0.875) > 0.0 && best_nu < 0.5);
    }

    proptest! {
        #[test]
        fn argmax_is_scale_equivariant(c0 in -0.01f64..0.01, c1 in -0.02f64..0.02, c2 in -0.02f64..0.02, f in 0.01f64..100.0) {
            let rep = mte_curve(&[c0, c1, c2]);
            let a = optimize_nu(&rep, &quartic()).unwrap();
            let c = optimize_nu(&rep, &quartic().scaled(f)).unwrap();
            prop_assert!((a.nu_star - c.nu_star).abs() < 1e-6);
            prop_assert!((c.profit_star - f * a.profit_star).abs() <= 1e-9 * (f * a.profit_star.abs()).max(1e-12));
        }

        #[test]
        fn optimum_beats_grid_and_endpoints(c0 in -0.01f64..0.01, c1 in -0.02f64..0.02, c2 in -0.02f64..0.02, c3 in -0.02f64..0.02) {
            let rep = mte_curve(&[c0, c1, c2, c3]);
            let opt = optimize_nu(&rep, &quartic()).unwrap();
            for i in 0..=200 {
                let nu = i as f64 / 200.0;
                prop_assert!(opt.profit_star >= expected_profit(&rep, &quartic(), nu).unwrap() - 1e-15);
            }
            let l = profit_loss(&rep, &quartic(), 0.3).unwrap();
            prop_assert!(l.absolute_loss >= 0.0);
        }

        #[test]
        fn interior_optimum_satisfies_foc(c0 in -0.01f64..0.01, c1 in -0.02f64..0.02, c2 in -0.02f64..0.02) {
            let rep = mte_curve(&[c0, c1, c2]);
            let spec = quartic();
            let opt = optimize_nu(&rep, &spec).unwrap();
            prop_assume!(opt.nu_star > 1e-3 && opt.nu_star < 1.0 - 1e-3);
            let grad = rep.mte(opt.nu_star).unwrap() - 0.004 * opt.nu_star.powi(3);
            let scale = [c0, c1, c2].iter().map(|c| c.abs()).sum::<f64>() + 0.004;
            prop_assert!(grad.abs() <= 1e-4 * scale);
        }
    }
}
