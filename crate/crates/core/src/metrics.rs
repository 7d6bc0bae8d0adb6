//! Distances between a true and an approximated MTE curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decide::MteRepresentation;
use crate::error::{Error, Result};
use crate::numeric::{golden, quad};

pub const SUP_GRID_POINTS: usize = 100_001;
pub const L2_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub sup_norm: f64,
    pub l2_norm: f64,
    /// (ATE_app − ATE) / ATE; absent when the true ATE is zero.
    pub ate_norm: Option<f64>,
}

/// Compares the curves on the whole unit interval.
pub fn compare(truth: &MteRepresentation, approx: &MteRepresentation) -> Result<NormReport> {
    compare_on(truth, approx, 0.0, 1.0)
}

/// Compares the curves on `[lo, hi]`. The L₂ norm is normalized by the
/// interval length, which keeps L₂ ≤ sup on any subinterval. The ATE norm
/// always uses the full-interval ATEs.
pub fn compare_on(truth: &MteRepresentation, approx: &MteRepresentation, lo: f64, hi: f64) -> Result<NormReport> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Domain(format!("comparison range [{lo}, {hi}] is not a subinterval of [0, 1]")));
    }
    truth.validate()?;
    approx.validate()?;
    let diff = |u: f64| -> f64 {
        match (truth.mte(u), approx.mte(u)) {
            (Ok(a), Ok(b)) => (a - b).abs(),
            _ => f64::NAN,
        }
    };
    let n = SUP_GRID_POINTS - 1;
    let step = (hi - lo) / n as f64;
    let point = |i: usize| if i == n { hi } else { lo + step * i as f64 };
    let (imax, gmax) = (0..=n)
        .into_par_iter()
        .map(|i| (i, diff(point(i))))
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
    if !gmax.is_finite() {
        return Err(Error::Numeric("MTE difference is not finite on the comparison grid".into()));
    }
    let a = point(imax.saturating_sub(1));
    let b = point((imax + 1).min(n));
    let (_, refined) = golden::maximize(diff, a, b, 1e-12);
    let sup_norm = gmax.max(refined);

    let sq = quad::integrate(|u| diff(u).powi(2), lo, hi, L2_TOL)?;
    let l2_norm = (sq.max(0.0) / (hi - lo)).sqrt();

    let ate_true = truth.ate()?;
    let ate_norm = if ate_true == 0.0 { None } else { Some((approx.ate()? - ate_true) / ate_true) };
    Ok(NormReport { sup_norm, l2_norm, ate_norm })
}
