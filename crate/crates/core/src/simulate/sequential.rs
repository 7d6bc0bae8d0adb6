//! The multi-exposure process: each unit sees up to S ad opportunities, is
//! exposed with propensity ν(z) = z/(z + t) given its remaining budget z, and
//! spends one unit of budget per exposure.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_gaussian_errors, pick_cell, unit_rng, Bin, CHUNK};
use crate::dgp::{Arm, DgpSpec, GaussianDgp};
use crate::error::{Error, Result};
use crate::numeric::normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    /// Initial budget levels a unit can start with.
    pub budgets: Vec<u32>,
    /// Probability of each initial budget; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_shares: Option<Vec<f64>>,
    pub t: f64,
    /// Number of ad opportunities S per unit.
    pub steps: u32,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig { budgets: (0..=4).collect(), budget_shares: None, t: 2.0, steps: 3 }
    }
}

impl SequentialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::Input("at least one initial budget level is required".into()));
        }
        let mut sorted = self.budgets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.budgets.len() {
            return Err(Error::Input("initial budget levels must be distinct".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Input(format!("t must be positive, got {}", self.t)));
        }
        if self.steps == 0 {
            return Err(Error::Input("the number of steps S must be at least 1".into()));
        }
        if let Some(s) = &self.budget_shares {
            if s.len() != self.budgets.len() || s.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Input("budget shares must be nonnegative, one per budget level".into()));
            }
            if (s.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Input("budget shares must sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn max_budget(&self) -> u32 {
        self.budgets.iter().copied().max().unwrap_or(0)
    }

    pub fn shares(&self) -> Vec<f64> {
        self.budget_shares
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.budgets.len() as f64; self.budgets.len()])
    }
}

pub fn sequential_propensity(z: u32, t: f64) -> f64 {
    z as f64 / (z as f64 + t)
}

/// A bin of the sequential records: initial budget, prior exposures x,
/// remaining budget z and exposure d at the time of the opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeqKey {
    pub initial_budget: u32,
    pub x: u32,
    pub z: u32,
    pub d: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialRow {
    pub initial_budget: u32,
    pub x: u32,
    pub z: u32,
    pub d: u8,
    pub n: u64,
    pub y_sum: f64,
    pub y_sumsq: f64,
}

/// Impression-level sufficient statistics of a sequential run. Empty bins are not stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<SequentialRow>", try_from = "Vec<SequentialRow>")]
pub struct SequentialCounts {
    pub bins: BTreeMap<SeqKey, Bin>,
}

impl From<SequentialCounts> for Vec<SequentialRow> {
    fn from(c: SequentialCounts) -> Self {
        c.rows()
    }
}

impl TryFrom<Vec<SequentialRow>> for SequentialCounts {
    type Error = Error;
    fn try_from(rows: Vec<SequentialRow>) -> Result<Self> {
        SequentialCounts::from_rows(&rows)
    }
}

impl SequentialCounts {
    pub fn rows(&self) -> Vec<SequentialRow> {
        self.bins
            .iter()
            .map(|(k, b)| SequentialRow {
                initial_budget: k.initial_budget,
                x: k.x,
                z: k.z,
                d: k.d,
                n: b.n,
                y_sum: b.y_sum,
                y_sumsq: b.y_sumsq,
            })
            .collect()
    }

    pub fn from_rows(rows: &[SequentialRow]) -> Result<Self> {
        let mut bins = BTreeMap::new();
        for r in rows {
            let key = SeqKey { initial_budget: r.initial_budget, x: r.x, z: r.z, d: r.d };
            if r.d > 1 {
                return Err(Error::Input(format!("row {key:?}: d must be 0 or 1")));
            }
            if r.d == 1 && r.z == 0 && r.n > 0 {
                return Err(Error::Input(format!("row {key:?}: exposure with no remaining budget")));
            }
            if r.x + r.z > r.initial_budget && r.n > 0 {
                return Err(Error::Input(format!(
                    "row {key:?}: prior exposures plus remaining budget exceed the initial budget"
                )));
            }
            if r.n == 0 {
                continue;
            }
            let b = Bin { n: r.n, y_sum: r.y_sum, y_sumsq: r.y_sumsq };
            if bins.insert(key, b).is_some() {
                return Err(Error::Input(format!("row {key:?} appears twice")));
            }
        }
        Ok(SequentialCounts { bins })
    }

    pub fn bin(&self, key: SeqKey) -> Bin {
        self.bins.get(&key).copied().unwrap_or_default()
    }

    /// Records at prior-exposure level `x` pooled over initial budgets, keyed by (z, d).
    pub fn slice(&self, x: u32) -> BTreeMap<(u32, u8), Bin> {
        let mut out: BTreeMap<(u32, u8), Bin> = BTreeMap::new();
        for (k, b) in self.bins.iter().filter(|(k, _)| k.x == x) {
            out.entry((k.z, k.d)).or_default().merge(b);
        }
        out
    }

    /// Records of units that started with budget `initial`, pooled over x and z, keyed by d.
    pub fn by_initial_budget(&self, initial: u32) -> [Bin; 2] {
        let mut out = [Bin::default(); 2];
        for (k, b) in self.bins.iter().filter(|(k, _)| k.initial_budget == initial) {
            out[k.d as usize].merge(b);
        }
        out
    }

    pub fn initial_budgets(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.bins.keys().map(|k| k.initial_budget).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn exposure_levels(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.bins.keys().map(|k| k.x).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Share of opportunities at (z, x) that resulted in an exposure.
    pub fn realized_propensity(&self, z: u32, x: u32) -> Option<f64> {
        let s = self.slice(x);
        let n1 = s.get(&(z, 1)).map_or(0, |b| b.n);
        let n0 = s.get(&(z, 0)).map_or(0, |b| b.n);
        (n0 + n1 > 0).then(|| n1 as f64 / (n0 + n1) as f64)
    }

    pub fn merge(&mut self, other: &SequentialCounts) {
        for (k, b) in &other.bins {
            self.bins.entry(*k).or_default().merge(b);
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in self.rows() {
            wtr.serialize(r).map_err(|e| Error::Input(format!("writing sequential CSV: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Input(format!("writing sequential CSV: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<SequentialRow>, _>>()
            .map_err(|e| Error::Input(format!("reading sequential CSV: {e}")))?;
        SequentialCounts::from_rows(&rows)
    }
}

/// Dense accumulator indexed by (initial budget, x, z, d).
struct Grid {
    nb: usize,
    nx: usize,
    nz: usize,
    bins: Vec<Bin>,
}

impl Grid {
    fn new(nb: usize, nx: usize, nz: usize) -> Self {
        Grid { nb, nx, nz, bins: vec![Bin::default(); nb * nx * nz * 2] }
    }

    fn index(&self, b: u32, x: u32, z: u32, d: u8) -> usize {
        ((b as usize * self.nx + x as usize) * self.nz + z as usize) * 2 + d as usize
    }

    fn merge(&mut self, other: &Grid) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.merge(b);
        }
    }

    fn into_counts(self) -> SequentialCounts {
        let mut bins = BTreeMap::new();
        for b in 0..self.nb {
            for x in 0..self.nx {
                for z in 0..self.nz {
                    for d in 0..2u8 {
                        let bin = self.bins[self.index(b as u32, x as u32, z as u32, d)];
                        if bin.n > 0 {
                            bins.insert(SeqKey { initial_budget: b as u32, x: x as u32, z: z as u32, d }, bin);
                        }
                    }
                }
            }
        }
        SequentialCounts { bins }
    }
}

/// Runs the sequential process for `n_total` units. Draws of (ε₁, ε₀, V) are
/// fresh at every step, U = Φ(V), and Y = μ_D(x) + ε_D where x counts the
/// unit's earlier exposures.
pub fn simulate_sequential(dgp: &GaussianDgp, config: &SequentialConfig, n_total: u64, seed: u64) -> Result<SequentialCounts> {
    DgpSpec::gaussian(*dgp).validate()?;
    config.validate()?;
    if n_total == 0 {
        return Err(Error::Input("n_total must be at least 1".into()));
    }
    let l = dgp.correlation_factor();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for s in config.shares() {
        acc += s;
        cumulative.push(acc);
    }
    let (nb, nx, nz) = (config.max_budget() as usize + 1, config.steps as usize, config.max_budget() as usize + 1);
    let base = ChaCha8Rng::seed_from_u64(seed);
    let chunks = n_total.div_ceil(CHUNK);
    let partials: Vec<Grid> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut grid = Grid::new(nb, nx, nz);
            for unit in k * CHUNK..((k + 1) * CHUNK).min(n_total) {
                let mut rng = unit_rng(&base, unit);
                let initial = config.budgets[pick_cell(&cumulative, rng.random::<f64>())];
                let (mut z, mut x) = (initial, 0u32);
                for _ in 0..config.steps {
                    let nu = sequential_propensity(z, config.t);
                    let (e1, e0, v) = draw_gaussian_errors(dgp, &l, &mut rng);
                    let exposed = z > 0 && normal::cdf(v) <= nu;
                    let (d, y) = if exposed {
                        (1u8, dgp.mu(Arm::Treated, x) + e1)
                    } else {
                        (0u8, dgp.mu(Arm::Untreated, x) + e0)
                    };
                    let i = grid.index(initial, x, z, d);
                    grid.bins[i].push(y);
                    if exposed {
                        z -= 1;
                        x += 1;
                    }
                }
            }
            grid
        })
        .collect();
    let mut total = Grid::new(nb, nx, nz);
    for p in &partials {
        total.merge(p);
    }
    Ok(total.into_counts())
}
