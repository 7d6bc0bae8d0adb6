//! Reproduction of the study's published tables, compared against stored
//! reference values with a per-entry tolerance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibrate::calibrate_gaussian;
use crate::decide::{decide, optimize_nu, DecisionReport, MteRepresentation, Optimum};
use crate::dgp::{DgpSpec, GaussianDgp};
use crate::error::{Error, Result};
use crate::estimate::{single_cell_restricted, solve_lambda, LambdaFit, MomentSet, Restriction};
use crate::metrics::{compare, NormReport};
use crate::presets::{self, StudyDgp, REFERENCE_STUDY};

const EXPECTATIONS: &str = include_str!("../data/expectations.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Table {
    #[serde(rename = "table1")]
    Table1,
    #[serde(rename = "table2")]
    Table2,
    #[serde(rename = "tableE1")]
    TableE1,
    #[serde(rename = "appendixA")]
    AppendixA,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::Table1, Table::Table2, Table::TableE1, Table::AppendixA];

    pub fn name(self) -> &'static str {
        match self {
            Table::Table1 => "table1",
            Table::Table2 => "table2",
            Table::TableE1 => "tableE1",
            Table::AppendixA => "appendixA",
        }
    }

    pub fn parse(s: &str) -> Result<Table> {
        Table::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown table {s:?}; expected one of table1, table2, tableE1, appendixA")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Tolerance {
    Absolute(f64),
    Relative(f64),
}

impl Tolerance {
    pub fn accepts(self, value: f64, expected: f64) -> bool {
        match self {
            Tolerance::Absolute(t) => (value - expected).abs() <= t,
            Tolerance::Relative(t) => (value - expected).abs() <= t * expected.abs(),
        }
    }
}

/// Whether a reference value was printed in the published tables or derived
/// from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Printed,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub table: Table,
    pub row: String,
    pub column: String,
    pub expected: f64,
    pub tolerance: Tolerance,
    pub source: Source,
}

pub fn expectations() -> Vec<Expectation> {
    serde_json::from_str(EXPECTATIONS).expect("embedded expectations parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub table: Table,
    pub row: String,
    pub column: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub table: Table,
    pub row: String,
    pub column: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: Tolerance,
    pub source: Source,
    pub pass: bool,
}

/// λ from exact population moments of `dgp` on the canned design with `cells` cells.
pub fn analytic_fit(dgp: &DgpSpec, cells: usize) -> Result<LambdaFit> {
    let nus = presets::design(cells)?.propensities();
    solve_lambda(&MomentSet::from_dgp(dgp, &nus, None)?)
}

pub fn table1_norms(d: StudyDgp) -> Result<NormReport> {
    let dgp = d.dgp()?;
    let fit = analytic_fit(&dgp, 2)?;
    compare(&MteRepresentation::dgp(dgp), &MteRepresentation::lambda(fit.lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub truth: Optimum,
    pub multi_cell: DecisionReport,
    pub restricted: Vec<(Restriction, DecisionReport)>,
}

pub fn table2_row(d: StudyDgp) -> Result<Table2Row> {
    let dgp = d.dgp()?;
    let spec = presets::study_decision();
    let truth = MteRepresentation::dgp(dgp.clone());
    let fit = analytic_fit(&dgp, 2)?;
    let multi_cell = decide(&MteRepresentation::lambda(fit.lambda), &spec, Some(&truth))?;
    let restricted = Restriction::ALL
        .into_iter()
        .map(|r| {
            let lambda = single_cell_restricted(REFERENCE_STUDY.psi11, REFERENCE_STUDY.psi01, REFERENCE_STUDY.psi00, REFERENCE_STUDY.nu1, r)?;
            Ok((r, decide(&MteRepresentation::lambda(lambda), &spec, Some(&truth))?))
        })
        .collect::<Result<_>>()?;
    Ok(Table2Row { truth: optimize_nu(&truth, &spec)?, multi_cell, restricted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableE1Row {
    pub cells: usize,
    pub norms: NormReport,
    pub decision: DecisionReport,
}

pub fn table_e1_row(cells: usize) -> Result<TableE1Row> {
    let dgp = DgpSpec::complex(presets::complex_dgp()?);
    let truth = MteRepresentation::dgp(dgp.clone());
    let approx = MteRepresentation::lambda(analytic_fit(&dgp, cells)?.lambda);
    Ok(TableE1Row {
        cells,
        norms: compare(&truth, &approx)?,
        decision: decide(&approx, &presets::complex_decision(), Some(&truth))?,
    })
}

pub fn complex_truth() -> Result<Optimum> {
    optimize_nu(&MteRepresentation::dgp(DgpSpec::complex(presets::complex_dgp()?)), &presets::complex_decision())
}

pub fn gaussian_calibration() -> Result<GaussianDgp> {
    calibrate_gaussian(&presets::gaussian_aggregates()?)
}

fn loss(r: &DecisionReport) -> Result<f64> {
    r.baseline_relative_loss.ok_or_else(|| Error::Numeric("loss undefined: nonpositive baseline profit".into()))
}

pub fn compute(table: Table) -> Result<Vec<Measurement>> {
    let mut out = Vec::new();
    let mut put = |row: &str, column: &str, value: f64| {
        out.push(Measurement { table, row: row.into(), column: column.into(), value })
    };
    match table {
        Table::Table1 => {
            for d in StudyDgp::ALL {
                let n = table1_norms(d)?;
                put(d.label(), "sup_norm", n.sup_norm);
                put(d.label(), "l2_norm", n.l2_norm);
                put(d.label(), "ate_norm", n.ate_norm.ok_or_else(|| Error::Numeric("zero true ATE".into()))?);
            }
        }
        Table::Table2 => {
            for d in StudyDgp::ALL {
                let r = table2_row(d)?;
                put(d.label(), "true_nu_star", r.truth.nu_star);
                put(d.label(), "multi_cell.nu_star", r.multi_cell.nu_star);
                put(d.label(), "multi_cell.loss", loss(&r.multi_cell)?);
                for (restriction, rep) in &r.restricted {
                    put(d.label(), &format!("{}.nu_star", restriction.label()), rep.nu_star);
                    put(d.label(), &format!("{}.loss", restriction.label()), loss(rep)?);
                }
            }
        }
        Table::TableE1 => {
            for (cells, row) in [(2, "two_cell"), (3, "three_cell"), (5, "five_cell")] {
                let r = table_e1_row(cells)?;
                put(row, "sup_norm", r.norms.sup_norm);
                put(row, "l2_norm", r.norms.l2_norm);
                put(row, "ate_norm", r.norms.ate_norm.ok_or_else(|| Error::Numeric("zero true ATE".into()))?);
                put(row, "nu_star", r.decision.nu_star);
                put(row, "loss", loss(&r.decision)?);
            }
            put("true", "nu_star", complex_truth()?.nu_star);
        }
        Table::AppendixA => {
            let g = gaussian_calibration()?;
            for (column, value) in [
                ("mu00", g.mu0[0]),
                ("rho0V", g.rho0_v),
                ("mu10", g.mu1[0]),
                ("mu11", g.mu1[1]),
                ("mu12", g.mu1[2]),
                ("sigma1", g.sigma1),
                ("sigma0", g.sigma0),
            ] {
                put("calibration", column, value);
            }
        }
    }
    Ok(out)
}

/// Computes `table` and pairs every measurement with its reference value.
pub fn check(table: Table) -> Result<Vec<Comparison>> {
    let expected = expectations();
    compute(table)?
        .into_iter()
        .map(|m| {
            let e = expected
                .iter()
                .find(|e| e.table == m.table && e.row == m.row && e.column == m.column)
                .ok_or_else(|| Error::Numeric(format!("no reference value for {}/{}/{}", m.table.name(), m.row, m.column)))?;
            Ok(Comparison {
                pass: e.tolerance.accepts(m.value, e.expected),
                table: m.table,
                row: m.row,
                column: m.column,
                value: m.value,
                expected: e.expected,
                tolerance: e.tolerance,
                source: e.source,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[Comparison], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["table", "row", "column", "value", "expected", "tolerance_kind", "tolerance", "source", "pass"])
        .map_err(|e| Error::Input(e.to_string()))?;
    for r in rows {
        let (kind, tol) = match r.tolerance {
            Tolerance::Absolute(t) => ("absolute", t),
            Tolerance::Relative(t) => ("relative", t),
        };
        let source = match r.source {
            Source::Printed => "printed",
            Source::Derived => "derived",
        };
        wtr.write_record([
            r.table.name().to_string(),
            r.row.clone(),
            r.column.clone(),
            format!("{:e}", r.value),
            format!("{:e}", r.expected),
            kind.to_string(),
            format!("{tol:e}"),
            source.to_string(),
            r.pass.to_string(),
        ])
        .map_err(|e| Error::Input(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}
