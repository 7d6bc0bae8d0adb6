//! Polynomial MTR recovery from (ψ, ν) moments.
//!
//! With C cells the design identifies 2C + 1 moments, enough for a degree C−1
//! treated curve λ₁ and a degree C untreated curve λ₀. Each ψ is a truncated
//! mean of an MTR, so the moments are linear in λ and two small square
//! systems recover the coefficients.

use serde::{Deserialize, Serialize};

use crate::design::MIN_PROPENSITY_GAP;
use crate::dgp::{Arm, DgpSpec};
use crate::error::{Error, Result};
use crate::numeric::linalg::{condition_number, Lu, Matrix};
use crate::numeric::poly;
use crate::simulate::{ExperimentCounts, SequentialCounts};

/// ψ₁c = E[Y | D=1, Z_c=1], ψ₀c = E[Y | D=0, Z_c=1] at propensity ν_c, and
/// ψ₀₀ = E[Y | Z=0] pooled over cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub nus: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi0: Vec<f64>,
    pub psi00: f64,
}

fn closest_pair(nus: &[f64]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..nus.len() {
        for j in i + 1..nus.len() {
            let gap = (nus[i] - nus[j]).abs();
            if best.is_none_or(|b| gap < b.2) {
                best = Some((i, j, gap));
            }
        }
    }
    best
}

impl MomentSet {
    pub fn cells(&self) -> usize {
        self.nus.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.nus.len();
        if c == 0 {
            return Err(Error::Input("moment set has no cells".into()));
        }
        if self.psi1.len() != c || self.psi0.len() != c {
            return Err(Error::Input(format!(
                "moment set lengths disagree: {} propensities, {} treated and {} untreated moments",
                c,
                self.psi1.len(),
                self.psi0.len()
            )));
        }
        if let Some(nu) = self.nus.iter().find(|nu| !(**nu > 0.0 && **nu < 1.0)) {
            return Err(Error::Domain(format!("propensity {nu} must lie strictly inside (0, 1)")));
        }
        if self.psi1.iter().chain(&self.psi0).chain([&self.psi00]).any(|p| !p.is_finite()) {
            return Err(Error::Input("moments must be finite".into()));
        }
        if let Some((i, j, gap)) = closest_pair(&self.nus) {
            if gap < MIN_PROPENSITY_GAP {
                return Err(Error::Singular(format!(
                    "propensities of cells {i} and {j} ({} and {}) nearly coincide",
                    self.nus[i], self.nus[j]
                )));
            }
        }
        Ok(())
    }

    /// Point estimates from experiment counts: ν̂_c is the treated share of
    /// eligible units, ψ̂ = y_sum/n. Empty bins make the estimate unavailable.
    pub fn from_counts(counts: &ExperimentCounts) -> Result<MomentSet> {
        let mut m = MomentSet { nus: vec![], psi1: vec![], psi0: vec![], psi00: 0.0 };
        for (c, cell) in counts.cells.iter().enumerate() {
            let missing = |what: &str| Error::InsufficientVariation(format!("cell {c} has no {what} units"));
            m.psi1.push(cell.treated.mean().ok_or_else(|| missing("treated"))?);
            m.psi0.push(cell.untreated.mean().ok_or_else(|| missing("eligible untreated"))?);
            m.nus.push(cell.treated.n as f64 / cell.eligible() as f64);
        }
        m.psi00 = counts
            .pooled_control()
            .mean()
            .ok_or_else(|| Error::InsufficientVariation("no ineligible (z = 0) units".into()))?;
        Ok(m)
    }

    /// Exact population moments of `dgp` at the given propensities.
    pub fn from_dgp(dgp: &DgpSpec, nus: &[f64], x: Option<u32>) -> Result<MomentSet> {
        let mut m = MomentSet { nus: nus.to_vec(), psi1: vec![], psi0: vec![], psi00: 0.0 };
        for &nu in nus {
            let psi = dgp.analytic_psi(nu, x)?;
            m.psi1.push(psi.treated.ok_or_else(|| Error::Domain("propensity 0 in a cell".into()))?);
            m.psi0.push(psi.untreated.ok_or_else(|| Error::Domain("propensity 1 in a cell".into()))?);
        }
        m.psi00 = dgp.integral_mtr(Arm::Untreated, 0.0, 1.0, x)?;
        Ok(m)
    }
}

/// Polynomial MTR approximations: λ₁ has C terms, λ₀ has C + 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCoefficients {
    pub lambda1: Vec<f64>,
    pub lambda0: Vec<f64>,
}

impl LambdaCoefficients {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1.is_empty() || self.lambda0.len() != self.lambda1.len() + 1 {
            return Err(Error::Input(format!(
                "lambda0 must have exactly one more coefficient than lambda1 (got {} and {})",
                self.lambda0.len(),
                self.lambda1.len()
            )));
        }
        if self.lambda1.iter().chain(&self.lambda0).any(|v| !v.is_finite()) {
            return Err(Error::Input("lambda coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn coeffs(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Treated => &self.lambda1,
            Arm::Untreated => &self.lambda0,
        }
    }

    pub fn mtr(&self, arm: Arm, u: f64) -> f64 {
        poly::eval(self.coeffs(arm), u)
    }

    pub fn mte_coeffs(&self) -> Vec<f64> {
        poly::sub(&self.lambda1, &self.lambda0)
    }

    pub fn mte(&self, u: f64) -> f64 {
        self.mtr(Arm::Treated, u) - self.mtr(Arm::Untreated, u)
    }

    pub fn ate(&self) -> f64 {
        poly::integral(&self.mte_coeffs(), 0.0, 1.0)
    }

    /// ∫₀^ν MTE(u) du in closed form.
    pub fn cumulative_mte(&self, nu: f64) -> f64 {
        poly::antiderivative_eval(&self.lambda1, nu) - poly::antiderivative_eval(&self.lambda0, nu)
    }

    /// The moments these curves generate at the given propensities.
    pub fn implied_moments(&self, nus: &[f64]) -> MomentSet {
        MomentSet {
            nus: nus.to_vec(),
            psi1: nus.iter().map(|&nu| poly::integral(&self.lambda1, 0.0, nu) / nu).collect(),
            psi0: nus.iter().map(|&nu| poly::integral(&self.lambda0, nu, 1.0) / (1.0 - nu)).collect(),
            psi00: poly::integral(&self.lambda0, 0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionNumbers {
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M0")]
    pub m0: f64,
}

/// A solved system together with its 1-norm condition numbers and the largest
/// absolute residual when the solution is pushed back through the moment map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    #[serde(flatten)]
    pub lambda: LambdaCoefficients,
    pub condition_numbers: ConditionNumbers,
    pub residual: f64,
}

/// M1[c][k] = ν_c^k/(k+1); M0 has a leading ν = 0 row 1/(k+1) and rows
/// (Σ_{s≤k} ν_c^s)/(k+1).
pub fn build_moment_matrices(nus: &[f64]) -> (Matrix, Matrix) {
    let c = nus.len();
    let m1: Vec<Vec<f64>> = nus
        .iter()
        .map(|&nu| (0..c).map(|k| nu.powi(k as i32) / (k + 1) as f64).collect())
        .collect();
    let mut m0 = vec![(0..=c).map(|k| 1.0 / (k + 1) as f64).collect::<Vec<f64>>()];
    for &nu in nus {
        let mut row = Vec::with_capacity(c + 1);
        let (mut power, mut partial) = (1.0, 0.0);
        for k in 0..=c {
            partial += power;
            power *= nu;
            row.push(partial / (k + 1) as f64);
        }
        m0.push(row);
    }
    (Matrix::from_rows(&m1), Matrix::from_rows(&m0))
}

fn singular_error(nus: &[f64], which: &str) -> Error {
    match closest_pair(nus) {
        Some((i, j, gap)) => Error::Singular(format!(
            "{which} is numerically singular; closest propensities are cells {i} and {j} ({} and {}, gap {gap:e})",
            nus[i], nus[j]
        )),
        None => Error::Singular(format!("{which} is numerically singular")),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn solve_lambda(moments: &MomentSet) -> Result<LambdaFit> {
    moments.validate()?;
    let (m1, m0) = build_moment_matrices(&moments.nus);
    let lu1 = Lu::factor(&m1).map_err(|_| singular_error(&moments.nus, "M1"))?;
    let lu0 = Lu::factor(&m0).map_err(|_| singular_error(&moments.nus, "M0"))?;
    let rhs0: Vec<f64> = std::iter::once(moments.psi00).chain(moments.psi0.iter().copied()).collect();
    let lambda = LambdaCoefficients { lambda1: lu1.solve(&moments.psi1), lambda0: lu0.solve(&rhs0) };
    if lambda.validate().is_err() {
        return Err(Error::Numeric("moment inversion produced non-finite coefficients".into()));
    }
    let residual = max_abs_diff(&m1.mul_vec(&lambda.lambda1), &moments.psi1)
        .max(max_abs_diff(&m0.mul_vec(&lambda.lambda0), &rhs0));
    Ok(LambdaFit {
        condition_numbers: ConditionNumbers { m1: condition_number(&m1, &lu1), m0: condition_number(&m0, &lu0) },
        lambda,
        residual,
    })
}

/// The identifying constraints that make a one-cell design solvable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// λ₁₁ = 0: constant treated curve.
    TreatedSlopeZero,
    /// λ₁₁ = λ₀₁: parallel curves, constant MTE.
    EqualSlopes,
    /// λ₁₀ = 0.
    TreatedInterceptZero,
    /// λ₁₀ = λ₀₀.
    EqualIntercepts,
}

impl Restriction {
    pub const ALL: [Restriction; 4] = [
        Restriction::TreatedSlopeZero,
        Restriction::EqualSlopes,
        Restriction::TreatedInterceptZero,
        Restriction::EqualIntercepts,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Restriction::TreatedSlopeZero => "lambda11=0",
            Restriction::EqualSlopes => "lambda11=lambda01",
            Restriction::TreatedInterceptZero => "lambda10=0",
            Restriction::EqualIntercepts => "lambda10=lambda00",
        }
    }
}

/// Linear m₁ and m₀ from a single cell's three moments plus one restriction.
/// λ₀ carries a zero quadratic term so the result has the usual C / C + 1 shape.
pub fn single_cell_restricted(psi11: f64, psi01: f64, psi00: f64, nu: f64, restriction: Restriction) -> Result<LambdaCoefficients> {
    if nu == 0.0 {
        return Err(Error::Domain("propensity 0 leaves the treated moment undefined (division by zero)".into()));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::Domain(format!("propensity {nu} must lie strictly inside (0, 1)")));
    }
    let l01 = 2.0 * (psi01 - psi00) / nu;
    let l00 = psi00 - l01 / 2.0;
    let (l10, l11) = match restriction {
        Restriction::TreatedSlopeZero => (psi11, 0.0),
        Restriction::EqualSlopes => (psi11 - l01 * nu / 2.0, l01),
        Restriction::TreatedInterceptZero => (0.0, 2.0 * psi11 / nu),
        Restriction::EqualIntercepts => (l00, 2.0 * (psi11 - l00) / nu),
    };
    Ok(LambdaCoefficients { lambda1: vec![l10, l11], lambda0: vec![l00, l01, 0.0] })
}

/// Moments of the exposure level `x`: one cell per remaining budget z ≥ 1
/// with a nonzero realized propensity, and the z = 0 records as the
/// never-exposed baseline.
pub fn sequential_moments(counts: &SequentialCounts, x: u32) -> Result<MomentSet> {
    let slice = counts.slice(x);
    let mut m = MomentSet { nus: vec![], psi1: vec![], psi0: vec![], psi00: 0.0 };
    let zs: Vec<u32> = {
        let mut v: Vec<u32> = slice.keys().map(|(z, _)| *z).filter(|&z| z > 0).collect();
        v.dedup();
        v
    };
    for z in zs {
        let treated = slice.get(&(z, 1)).copied().unwrap_or_default();
        let untreated = slice.get(&(z, 0)).copied().unwrap_or_default();
        if treated.n == 0 {
            continue;
        }
        let Some(psi0) = untreated.mean() else {
            continue;
        };
        m.nus.push(treated.n as f64 / (treated.n + untreated.n) as f64);
        m.psi1.push(treated.y_sum / treated.n as f64);
        m.psi0.push(psi0);
    }
    if m.nus.is_empty() {
        return Err(Error::InsufficientVariation(format!("no exposed records at exposure level {x}")));
    }
    m.psi00 = slice
        .get(&(0, 0))
        .and_then(|b| b.mean())
        .ok_or_else(|| Error::InsufficientVariation(format!("no zero-budget records at exposure level {x}")))?;
    Ok(m)
}

/// Per-x approximation. Its capacity is the number of distinct nonzero
/// propensities observed at that exposure level.
pub fn sequential_estimate(counts: &SequentialCounts, x: u32) -> Result<LambdaFit> {
    solve_lambda(&sequential_moments(counts, x)?)
}

/// Moments that ignore exposure history: each initial budget level with a
/// nonzero exposure rate acts as a cell (all of its opportunities pooled),
/// and the zero-budget group is the control.
pub fn naive_moments(counts: &SequentialCounts) -> Result<MomentSet> {
    let mut m = MomentSet { nus: vec![], psi1: vec![], psi0: vec![], psi00: 0.0 };
    let mut control = None;
    for b in counts.initial_budgets() {
        let [untreated, treated] = counts.by_initial_budget(b);
        if treated.n == 0 {
            if control.is_none() {
                control = untreated.mean();
            }
            continue;
        }
        let Some(psi0) = untreated.mean() else {
            continue;
        };
        m.nus.push(treated.n as f64 / (treated.n + untreated.n) as f64);
        m.psi1.push(treated.y_sum / treated.n as f64);
        m.psi0.push(psi0);
    }
    m.psi00 = control.ok_or_else(|| Error::InsufficientVariation("no never-exposed budget group".into()))?;
    if m.nus.is_empty() {
        return Err(Error::InsufficientVariation("no budget group was ever exposed".into()));
    }
    Ok(m)
}

pub fn naive_estimate(counts: &SequentialCounts) -> Result<LambdaFit> {
    solve_lambda(&naive_moments(counts)?)
}
