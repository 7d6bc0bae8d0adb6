//! Sufficient statistics of an experiment and their CSV/JSON forms.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Count, sum and sum of squares of the outcomes falling in one bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub n: u64,
    pub y_sum: f64,
    pub y_sumsq: f64,
}

impl Bin {
    pub fn push(&mut self, y: f64) {
        self.n += 1;
        self.y_sum += y;
        self.y_sumsq += y * y;
    }

    pub fn merge(&mut self, other: &Bin) {
        self.n += other.n;
        self.y_sum += other.y_sum;
        self.y_sumsq += other.y_sumsq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.y_sum / self.n as f64)
    }

    /// Sample variance with the n − 1 denominator.
    pub fn variance(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.y_sum / n;
        Some(((self.y_sumsq - n * mean * mean) / (n - 1.0)).max(0.0))
    }

    pub fn std_error(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.n as f64).sqrt())
    }

    /// Whether the bin could have come from 0/1 outcomes.
    pub fn is_binary_consistent(&self) -> bool {
        let n = self.n as f64;
        self.y_sum >= 0.0
            && self.y_sum <= n
            && self.y_sum.fract() == 0.0
            && (self.y_sumsq - self.y_sum).abs() <= 1e-9 * n.max(1.0)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.y_sum.is_finite() && self.y_sumsq.is_finite()) || self.y_sumsq < 0.0 {
            return Err(Error::Input(format!("{what}: outcome sums must be finite with y_sumsq >= 0")));
        }
        if self.n == 0 && (self.y_sum != 0.0 || self.y_sumsq != 0.0) {
            return Err(Error::Input(format!("{what}: empty bin with nonzero outcome sums")));
        }
        Ok(())
    }
}

/// The three observable (z, d) bins of one cell. Ineligible units are never
/// treated, so (z = 0, d = 1) does not exist.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    /// z = 0, d = 0.
    pub control: Bin,
    /// z = 1, d = 0.
    pub untreated: Bin,
    /// z = 1, d = 1.
    pub treated: Bin,
}

impl CellCounts {
    pub fn merge(&mut self, other: &CellCounts) {
        self.control.merge(&other.control);
        self.untreated.merge(&other.untreated);
        self.treated.merge(&other.treated);
    }

    pub fn total(&self) -> u64 {
        self.control.n + self.untreated.n + self.treated.n
    }

    pub fn eligible(&self) -> u64 {
        self.untreated.n + self.treated.n
    }

    fn bin_mut(&mut self, z: u8, d: u8) -> Option<&mut Bin> {
        match (z, d) {
            (0, 0) => Some(&mut self.control),
            (1, 0) => Some(&mut self.untreated),
            (1, 1) => Some(&mut self.treated),
            _ => None,
        }
    }
}

/// One CSV/JSON row of experiment aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub cell: usize,
    pub z: u8,
    pub d: u8,
    pub n: u64,
    pub y_sum: f64,
    pub y_sumsq: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<CountRow>", try_from = "Vec<CountRow>")]
pub struct ExperimentCounts {
    pub cells: Vec<CellCounts>,
}

impl From<ExperimentCounts> for Vec<CountRow> {
    fn from(c: ExperimentCounts) -> Self {
        c.rows()
    }
}

impl TryFrom<Vec<CountRow>> for ExperimentCounts {
    type Error = Error;
    fn try_from(rows: Vec<CountRow>) -> Result<Self> {
        ExperimentCounts::from_rows(&rows)
    }
}

impl ExperimentCounts {
    pub fn with_cells(c: usize) -> Self {
        ExperimentCounts { cells: vec![CellCounts::default(); c] }
    }

    /// Adds `other` cell by cell. Both must describe the same number of cells.
    pub fn merge(&mut self, other: &ExperimentCounts) -> Result<()> {
        if self.cells.len() != other.cells.len() {
            return Err(Error::Input(format!(
                "cannot merge counts with {} and {} cells",
                self.cells.len(),
                other.cells.len()
            )));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.total()).sum()
    }

    /// All z = 0 units across cells.
    pub fn pooled_control(&self) -> Bin {
        let mut b = Bin::default();
        for c in &self.cells {
            b.merge(&c.control);
        }
        b
    }

    pub fn is_binary_consistent(&self) -> bool {
        self.cells
            .iter()
            .all(|c| c.control.is_binary_consistent() && c.untreated.is_binary_consistent() && c.treated.is_binary_consistent())
    }

    pub fn rows(&self) -> Vec<CountRow> {
        let mut out = Vec::with_capacity(3 * self.cells.len());
        for (cell, c) in self.cells.iter().enumerate() {
            for (z, d, b) in [(0, 0, &c.control), (1, 0, &c.untreated), (1, 1, &c.treated)] {
                out.push(CountRow { cell, z, d, n: b.n, y_sum: b.y_sum, y_sumsq: b.y_sumsq });
            }
        }
        out
    }

    /// Builds counts from rows, rejecting treated ineligible units, duplicate
    /// rows and gaps in the cell numbering. Missing (z, d) rows are empty bins.
    pub fn from_rows(rows: &[CountRow]) -> Result<Self> {
        let c = rows.iter().map(|r| r.cell + 1).max().unwrap_or(0);
        if c == 0 {
            return Err(Error::Input("experiment counts contain no rows".into()));
        }
        let mut out = ExperimentCounts::with_cells(c);
        let mut seen = vec![[false; 4]; c];
        for r in rows {
            let what = format!("row (cell {}, z {}, d {})", r.cell, r.z, r.d);
            if r.z > 1 || r.d > 1 {
                return Err(Error::Input(format!("{what}: z and d must be 0 or 1")));
            }
            let b = Bin { n: r.n, y_sum: r.y_sum, y_sumsq: r.y_sumsq };
            b.validate(&what)?;
            let slot = (2 * r.z + r.d) as usize;
            if std::mem::replace(&mut seen[r.cell][slot], true) {
                return Err(Error::Input(format!("{what} appears twice")));
            }
            match out.cells[r.cell].bin_mut(r.z, r.d) {
                Some(bin) => *bin = b,
                None if r.n == 0 => {}
                None => {
                    return Err(Error::Input(format!(
                        "{what}: {} ineligible units recorded as treated, which one-sided noncompliance rules out",
                        r.n
                    )))
                }
            }
        }
        for (i, s) in seen.iter().enumerate() {
            if !s.iter().any(|&x| x) {
                return Err(Error::Input(format!("cell {i} has no rows")));
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in self.rows() {
            wtr.serialize(r).map_err(|e| Error::Input(format!("writing counts CSV: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Input(format!("writing counts CSV: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<CountRow>, _>>()
            .map_err(|e| Error::Input(format!("reading counts CSV: {e}")))?;
        ExperimentCounts::from_rows(&rows)
    }
}
