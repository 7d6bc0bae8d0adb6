//! Synthetic experiments: unit-level draws reduced straight to sufficient statistics.
//!
//! Each unit's randomness comes from its own ChaCha stream keyed by the run
//! seed and the unit index, so results do not depend on how units are split
//! across threads. Units are processed in fixed-size chunks whose partial
//! counts are added in chunk order.

mod counts;
mod sequential;

pub use counts::{Bin, CellCounts, CountRow, ExperimentCounts};
pub use sequential::{
    simulate_sequential, sequential_propensity, SeqKey, SequentialConfig, SequentialCounts, SequentialRow,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design::CellDesign;
use crate::dgp::{Arm, DgpSpec, Family, GaussianDgp};
use crate::error::{Error, Result};
use crate::numeric::normal;

/// Units per work chunk.
pub const CHUNK: u64 = 1 << 16;

/// The generator for one unit: stream `unit` of the run seed.
pub(crate) fn unit_rng(base: &ChaCha8Rng, unit: u64) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(unit);
    rng
}

pub(crate) fn draw_gaussian_errors<R: Rng>(g: &GaussianDgp, l: &[[f64; 3]; 3], rng: &mut R) -> (f64, f64, f64) {
    let e: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let z1 = l[0][0] * e[0];
    let z0 = l[1][0] * e[0] + l[1][1] * e[1];
    let v = l[2][0] * e[0] + l[2][1] * e[1] + l[2][2] * e[2];
    (g.sigma1 * z1, g.sigma0 * z0, v)
}

fn pick_cell(cumulative: &[f64], r: f64) -> usize {
    cumulative.iter().position(|&c| r < c).unwrap_or(cumulative.len() - 1)
}

/// Simulates `n_total` units: cell ~ assignment shares, Z ~ eligibility share,
/// U ~ Uniform(0,1), D = 1{Z = 1 and U ≤ ν_c}.
///
/// Binary DGPs draw Y ~ Bernoulli(m_D(U)). Gaussian DGPs draw (ε₁, ε₀, V)
/// jointly, set U = Φ(V) and Y = μ_D(0) + ε_D, i.e. a single exposure with no
/// prior ones. Other non-binary DGPs record the conditional mean Y = m_D(U).
pub fn simulate_experiment(dgp: &DgpSpec, design: &CellDesign, n_total: u64, seed: u64) -> Result<ExperimentCounts> {
    dgp.validate()?;
    design.ensure_valid()?;
    if n_total == 0 {
        return Err(Error::Input("n_total must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(design.len());
    let mut acc = 0.0;
    for c in &design.cells {
        acc += c.assign_share;
        cumulative.push(acc);
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let gauss = match &dgp.family {
        Family::Gaussian(g) => Some((*g, g.correlation_factor())),
        _ => None,
    };
    let chunks = n_total.div_ceil(CHUNK);
    let partials: Vec<ExperimentCounts> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut out = ExperimentCounts::with_cells(design.len());
            for unit in k * CHUNK..((k + 1) * CHUNK).min(n_total) {
                let mut rng = unit_rng(&base, unit);
                let c = pick_cell(&cumulative, rng.random::<f64>());
                let cell = &design.cells[c];
                let eligible = rng.random::<f64>() < cell.elig_share;
                let (arm, y) = match gauss {
                    Some((g, ref l)) => {
                        let (e1, e0, v) = draw_gaussian_errors(&g, l, &mut rng);
                        let treated = eligible && normal::cdf(v) <= cell.propensity;
                        if treated {
                            (Arm::Treated, g.mu(Arm::Treated, 0) + e1)
                        } else {
                            (Arm::Untreated, g.mu(Arm::Untreated, 0) + e0)
                        }
                    }
                    None => {
                        let u: f64 = rng.random();
                        let arm = if eligible && u <= cell.propensity { Arm::Treated } else { Arm::Untreated };
                        let m = dgp.mtr(arm, u, None)?;
                        if dgp.binary_outcome {
                            if !(0.0..=1.0).contains(&m) {
                                return Err(Error::InvalidDgp(format!(
                                    "binary outcome flagged but m{}({u}) = {m} lies outside [0, 1]",
                                    arm.d()
                                )));
                            }
                            let y: f64 = rng.random();
                            (arm, if y < m { 1.0 } else { 0.0 })
                        } else {
                            (arm, m)
                        }
                    }
                };
                let counts = &mut out.cells[c];
                let bin = match (eligible, arm) {
                    (false, _) => &mut counts.control,
                    (true, Arm::Untreated) => &mut counts.untreated,
                    (true, Arm::Treated) => &mut counts.treated,
                };
                bin.push(y);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ExperimentCounts::with_cells(design.len());
    for p in &partials {
        total.merge(p)?;
    }
    Ok(total)
}
