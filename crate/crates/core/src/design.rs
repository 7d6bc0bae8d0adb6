//! Multi-cell experiment designs, cost functions κ(ν), and the translation of a
//! budget split into per-cell propensity scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHARE_SUM_TOL: f64 = 1e-12;
/// Propensities closer than this are treated as coincident.
pub const MIN_PROPENSITY_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Pr(C = c).
    pub assign_share: f64,
    /// Pr(Z_c = 1 | C = c).
    pub elig_share: f64,
    /// ν(Z_c = 1).
    pub propensity: f64,
    /// σ_c, the share of the total budget spent in the cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDesign {
    pub cells: Vec<Cell>,
}

/// A design file: the cells and, optionally, the cost function used to plan them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDocument {
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
}

impl DesignDocument {
    pub fn design(&self) -> CellDesign {
        CellDesign { cells: self.cells.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Violation {
    NoCells,
    AssignSharesSum { sum: f64 },
    AssignShareRange { cell: usize, value: f64 },
    /// Eligibility must be a non-degenerate split: 0 < Pr(Z_c=1|C=c) < 1.
    EligShareRange { cell: usize, value: f64 },
    /// Eligible units must be treated with probability strictly between 0 and 1.
    PropensityRange { cell: usize, value: f64 },
    /// Distinct cells must induce distinct propensities.
    CoincidentPropensities { cells: (usize, usize), gap: f64 },
    BudgetSharesSum { sum: f64 },
    BudgetShareRange { cell: usize, value: f64 },
    MixedBudgetShares,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoCells => write!(f, "design has no cells"),
            Violation::AssignSharesSum { sum } => write!(f, "assignment shares sum to {sum}, not 1"),
            Violation::AssignShareRange { cell, value } => {
                write!(f, "cell {cell}: assignment share {value} is outside (0, 1]")
            }
            Violation::EligShareRange { cell, value } => {
                write!(f, "cell {cell}: eligibility share {value} must lie strictly inside (0, 1)")
            }
            Violation::PropensityRange { cell, value } => {
                write!(f, "cell {cell}: propensity {value} must lie strictly inside (0, 1)")
            }
            Violation::CoincidentPropensities { cells, gap } => write!(
                f,
                "cells {} and {}: propensities differ by {gap:e}, below the minimum gap {MIN_PROPENSITY_GAP:e}",
                cells.0, cells.1
            ),
            Violation::BudgetSharesSum { sum } => write!(f, "budget shares sum to {sum}, not 1"),
            Violation::BudgetShareRange { cell, value } => {
                write!(f, "cell {cell}: budget share {value} is outside (0, 1]")
            }
            Violation::MixedBudgetShares => write!(f, "budget shares must be given for all cells or none"),
        }
    }
}

fn in_open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn in_half_open_unit(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

/// Every violated design clause. An empty list means the design is valid.
pub fn validate_design(design: &CellDesign) -> Vec<Violation> {
    let mut out = Vec::new();
    let cells = &design.cells;
    if cells.is_empty() {
        out.push(Violation::NoCells);
        return out;
    }
    let sum: f64 = cells.iter().map(|c| c.assign_share).sum();
    if !((sum - 1.0).abs() <= SHARE_SUM_TOL) {
        out.push(Violation::AssignSharesSum { sum });
    }
    for (i, c) in cells.iter().enumerate() {
        if !in_half_open_unit(c.assign_share) {
            out.push(Violation::AssignShareRange { cell: i, value: c.assign_share });
        }
        if !in_open_unit(c.elig_share) {
            out.push(Violation::EligShareRange { cell: i, value: c.elig_share });
        }
        if !in_open_unit(c.propensity) {
            out.push(Violation::PropensityRange { cell: i, value: c.propensity });
        }
    }
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let gap = (cells[i].propensity - cells[j].propensity).abs();
            if gap < MIN_PROPENSITY_GAP {
                out.push(Violation::CoincidentPropensities { cells: (i, j), gap });
            }
        }
    }
    let shares: Vec<f64> = cells.iter().filter_map(|c| c.budget_share).collect();
    if !shares.is_empty() {
        if shares.len() != cells.len() {
            out.push(Violation::MixedBudgetShares);
        } else {
            let sum: f64 = shares.iter().sum();
            if !((sum - 1.0).abs() <= SHARE_SUM_TOL) {
                out.push(Violation::BudgetSharesSum { sum });
            }
            for (i, &s) in shares.iter().enumerate() {
                if !in_half_open_unit(s) {
                    out.push(Violation::BudgetShareRange { cell: i, value: s });
                }
            }
        }
    }
    out
}

impl CellDesign {
    /// Cells with the given eligibility shares and propensities; assignment
    /// shares default to 1/C.
    pub fn new(elig_shares: &[f64], propensities: &[f64], assign_shares: Option<&[f64]>) -> Result<Self> {
        let c = elig_shares.len();
        if propensities.len() != c || assign_shares.is_some_and(|a| a.len() != c) {
            return Err(Error::Input("per-cell share and propensity lists differ in length".into()));
        }
        let cells = (0..c)
            .map(|i| Cell {
                assign_share: assign_shares.map_or(1.0 / c as f64, |a| a[i]),
                elig_share: elig_shares[i],
                propensity: propensities[i],
                budget_share: None,
            })
            .collect();
        Ok(CellDesign { cells })
    }

    pub fn propensities(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.propensity).collect()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Errors with every violation listed when the design is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate_design(self);
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(Error::Design(msgs.join("; ")))
        }
    }
}

/// Propensity that gives a cell with eligibility `elig` the same exposed share
/// as a reference cell: elig·ν = ref_elig·ref_nu.
pub fn equal_exposure_propensity(ref_elig: f64, ref_nu: f64, elig: f64) -> f64 {
    ref_elig * ref_nu / elig
}

/// Cost κ(ν) of reaching a fraction ν of the audience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostSpec {
    /// κ(ν) = scale·ν^exponent.
    Power { scale: f64, exponent: f64 },
    /// Piecewise-linear through (ν, cost) points running from (0, 0) to ν = 1.
    Tabulated { points: Vec<(f64, f64)> },
}

impl CostSpec {
    pub fn power(scale: f64, exponent: f64) -> Self {
        CostSpec::Power { scale, exponent }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CostSpec::Power { scale, exponent } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::Input(format!("power cost scale must be positive, got {scale}")));
                }
                if !(exponent.is_finite() && *exponent >= 1.0) {
                    return Err(Error::Input(format!("power cost exponent must be at least 1, got {exponent}")));
                }
                Ok(())
            }
            CostSpec::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(Error::Input("tabulated cost needs at least two points".into()));
                }
                if points[0] != (0.0, 0.0) {
                    return Err(Error::Input("tabulated cost must start at (0, 0)".into()));
                }
                if points.last().map(|p| p.0) != Some(1.0) {
                    return Err(Error::Input("tabulated cost must end at nu = 1".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) || !w[1].1.is_finite() {
                        return Err(Error::Input(format!(
                            "tabulated cost must be strictly increasing in both coordinates near nu = {}",
                            w[1].0
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, nu: f64) -> f64 {
        match self {
            CostSpec::Power { scale, exponent } => scale * nu.powf(*exponent),
            CostSpec::Tabulated { points } => interpolate(points, nu, |p| p.0, |p| p.1),
        }
    }

    /// κ(1), the most that can be spent per audience member.
    pub fn max_cost(&self) -> f64 {
        self.eval(1.0)
    }

    /// The unique ν with κ(ν) = b.
    pub fn inverse(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!("budget per user {b} must be a finite nonnegative number")));
        }
        let top = self.max_cost();
        if b > top * (1.0 + 1e-12) {
            return Err(Error::Infeasible(format!(
                "budget per user {b} exceeds the cost {top} of reaching everyone"
            )));
        }
        let nu = match self {
            CostSpec::Power { scale, exponent } => (b / scale).powf(1.0 / exponent),
            CostSpec::Tabulated { points } => interpolate(points, b, |p| p.1, |p| p.0),
        };
        Ok(nu.min(1.0))
    }
}

fn interpolate(points: &[(f64, f64)], x: f64, key: impl Fn(&(f64, f64)) -> f64, val: impl Fn(&(f64, f64)) -> f64) -> f64 {
    let k = points.partition_point(|p| key(p) < x).clamp(1, points.len() - 1);
    let (a, b) = (&points[k - 1], &points[k]);
    val(a) + (val(b) - val(a)) * (x - key(a)) / (key(b) - key(a))
}

/// Per-cell inputs to budget planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    /// σ_c.
    pub budget_share: f64,
    /// Pr(C = c).
    pub assign_share: f64,
    /// Pr(Z_c = 1 | C = c).
    pub elig_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub total_budget: f64,
    pub design: CellDesign,
    /// B̃_c = σ_c·B / (Pr(Z_c=1|C=c)·Pr(C=c)), the budget per eligible user.
    pub effective_budgets: Vec<f64>,
    /// σ_c·B.
    pub cell_budgets: Vec<f64>,
}

/// Spreads `total_budget` (audience normalized to 1) over the cells and sets
/// each cell's propensity to κ⁻¹ of its budget per eligible user.
pub fn plan_budget(total_budget: f64, cost: &CostSpec, cells: &[CellPlan]) -> Result<BudgetPlan> {
    if !(total_budget > 0.0 && total_budget.is_finite()) {
        return Err(Error::Input(format!("total budget must be positive, got {total_budget}")));
    }
    cost.validate()?;
    if cells.is_empty() {
        return Err(Error::Design("no cells to plan".into()));
    }
    let effective: Vec<f64> = cells
        .iter()
        .map(|c| c.budget_share * total_budget / (c.elig_share * c.assign_share))
        .collect();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let scale = effective[i].abs().max(effective[j].abs());
            if (effective[i] - effective[j]).abs() <= 1e-12 * scale {
                return Err(Error::Design(format!(
                    "cells {i} and {j} have equal budgets per eligible user ({}); need \
                     sigma_c/(Pr(Z_c=1|C=c) x Pr(C=c)) to differ across cells",
                    effective[i]
                )));
            }
        }
    }
    let mut design_cells = Vec::with_capacity(cells.len());
    for (i, (c, &b)) in cells.iter().zip(&effective).enumerate() {
        let propensity = cost
            .inverse(b)
            .map_err(|e| match e {
                Error::Infeasible(m) => Error::Infeasible(format!("cell {i}: {m}")),
                other => other,
            })?;
        design_cells.push(Cell {
            assign_share: c.assign_share,
            elig_share: c.elig_share,
            propensity,
            budget_share: Some(c.budget_share),
        });
    }
    let design = CellDesign { cells: design_cells };
    design.ensure_valid()?;
    Ok(BudgetPlan {
        total_budget,
        cell_budgets: cells.iter().map(|c| c.budget_share * total_budget).collect(),
        effective_budgets: effective,
        design,
    })
}
