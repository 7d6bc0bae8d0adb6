//! Beta-Bernoulli posteriors for the propensities and ψ moments, and Monte
//! Carlo draws of λ obtained by pushing each posterior draw through the
//! moment inversion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decide::MteRepresentation;
use crate::error::{Error, Result};
use crate::estimate::{solve_lambda, LambdaCoefficients, MomentSet};
use crate::simulate::ExperimentCounts;

pub const DEFAULT_DRAWS: usize = 10_000;
/// Consecutive singular draws tolerated before giving up.
pub const MAX_CONSECUTIVE_REJECTIONS: u32 = 1000;
/// Keeps posterior streams apart from simulation streams that share a seed.
const STREAM_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Input(format!("Beta parameters must be positive and finite, got ({alpha}, {beta})")));
        }
        Ok(BetaPosterior { alpha, beta })
    }

    pub fn uniform() -> Self {
        BetaPosterior { alpha: 1.0, beta: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn sampler(&self) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.beta).map_err(|e| Error::Numeric(format!("Beta({}, {}): {e}", self.alpha, self.beta)))
    }
}

/// Conjugate update of a Beta prior with `successes` out of `trials` Bernoulli outcomes.
pub fn posterior_update(prior: BetaPosterior, successes: u64, trials: u64) -> Result<BetaPosterior> {
    if successes > trials {
        return Err(Error::Input(format!("{successes} successes out of only {trials} trials")));
    }
    BetaPosterior::new(prior.alpha + successes as f64, prior.beta + (trials - successes) as f64)
}

/// One Beta distribution per modelled quantity: the pooled control mean ψ₀₀
/// and, per cell, ν_c, ψ₁c and ψ₀c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub psi00: BetaPosterior,
    pub nu: Vec<BetaPosterior>,
    pub psi1: Vec<BetaPosterior>,
    pub psi0: Vec<BetaPosterior>,
}

impl Priors {
    /// Beta(1, 1) everywhere.
    pub fn uniform(cells: usize) -> Self {
        let u = BetaPosterior::uniform();
        Priors { psi00: u, nu: vec![u; cells], psi1: vec![u; cells], psi0: vec![u; cells] }
    }

    pub fn cells(&self) -> usize {
        self.nu.len()
    }

    fn validate(&self, cells: usize) -> Result<()> {
        if self.nu.len() != cells || self.psi1.len() != cells || self.psi0.len() != cells {
            return Err(Error::Input(format!("priors describe {} cells but the counts have {cells}", self.nu.len())));
        }
        for b in std::iter::once(&self.psi00).chain(&self.nu).chain(&self.psi1).chain(&self.psi0) {
            BetaPosterior::new(b.alpha, b.beta)?;
        }
        Ok(())
    }
}

/// Updates every prior with the experiment's counts. ψ₀₀ pools the z = 0
/// units of all cells.
pub fn update_priors(counts: &ExperimentCounts, priors: &Priors) -> Result<Priors> {
    priors.validate(counts.cells.len())?;
    if !counts.is_binary_consistent() {
        return Err(Error::ModelMismatch(
            "Beta-Bernoulli posteriors need binary outcomes (integer y_sum <= n with y_sumsq = y_sum)".into(),
        ));
    }
    let control = counts.pooled_control();
    let mut out = Priors {
        psi00: posterior_update(priors.psi00, control.y_sum as u64, control.n)?,
        nu: vec![],
        psi1: vec![],
        psi0: vec![],
    };
    for (c, cell) in counts.cells.iter().enumerate() {
        out.nu.push(posterior_update(priors.nu[c], cell.treated.n, cell.eligible())?);
        out.psi1.push(posterior_update(priors.psi1[c], cell.treated.y_sum as u64, cell.treated.n)?);
        out.psi0.push(posterior_update(priors.psi0[c], cell.untreated.y_sum as u64, cell.untreated.n)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorLambda {
    pub draws: Vec<LambdaCoefficients>,
    pub mean1: Vec<f64>,
    pub mean0: Vec<f64>,
    pub rejections: u64,
    pub seed: u64,
    pub posteriors: Priors,
}

/// Everything about a posterior run except the individual draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub posteriors: Priors,
    pub mean1: Vec<f64>,
    pub mean0: Vec<f64>,
    pub draws: usize,
    pub rejections: u64,
    pub seed: u64,
}

impl PosteriorSummary {
    pub fn mean(&self) -> LambdaCoefficients {
        LambdaCoefficients { lambda1: self.mean1.clone(), lambda0: self.mean0.clone() }
    }

    pub fn representation(&self) -> MteRepresentation {
        MteRepresentation::PosteriorMean { lambda: self.mean(), draws: self.draws }
    }
}

impl PosteriorLambda {
    pub fn summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            posteriors: self.posteriors.clone(),
            mean1: self.mean1.clone(),
            mean0: self.mean0.clone(),
            draws: self.draws.len(),
            rejections: self.rejections,
            seed: self.seed,
        }
    }
}

struct Samplers {
    psi00: Beta<f64>,
    nu: Vec<Beta<f64>>,
    psi1: Vec<Beta<f64>>,
    psi0: Vec<Beta<f64>>,
}

/// Draws ν first and ψ second, then inverts the moments. Draws whose moment
/// matrices are singular are redrawn and counted.
fn one_draw(s: &Samplers, rng: &mut ChaCha8Rng) -> Result<(LambdaCoefficients, u64)> {
    let mut rejected = 0u64;
    loop {
        let nus: Vec<f64> = s.nu.iter().map(|b| b.sample(rng)).collect();
        let psi00 = s.psi00.sample(rng);
        let psi1: Vec<f64> = s.psi1.iter().map(|b| b.sample(rng)).collect();
        let psi0: Vec<f64> = s.psi0.iter().map(|b| b.sample(rng)).collect();
        match solve_lambda(&MomentSet { nus, psi1, psi0, psi00 }) {
            Ok(fit) => return Ok((fit.lambda, rejected)),
            Err(Error::Singular(msg)) | Err(Error::Domain(msg)) => {
                rejected += 1;
                if rejected >= MAX_CONSECUTIVE_REJECTIONS as u64 {
                    return Err(Error::Numeric(format!(
                        "{MAX_CONSECUTIVE_REJECTIONS} consecutive posterior draws were singular; last: {msg}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn draw_posterior_lambda(counts: &ExperimentCounts, priors: &Priors, draws: usize, seed: u64) -> Result<PosteriorLambda> {
    if draws == 0 {
        return Err(Error::Input("at least one posterior draw is required".into()));
    }
    let post = update_priors(counts, priors)?;
    let samplers = Samplers {
        psi00: post.psi00.sampler()?,
        nu: post.nu.iter().map(|b| b.sampler()).collect::<Result<_>>()?,
        psi1: post.psi1.iter().map(|b| b.sampler()).collect::<Result<_>>()?,
        psi0: post.psi0.iter().map(|b| b.sampler()).collect::<Result<_>>()?,
    };
    let base = ChaCha8Rng::seed_from_u64(seed ^ STREAM_KEY);
    let results: Vec<(LambdaCoefficients, u64)> = (0..draws as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = base.clone();
            rng.set_stream(r);
            one_draw(&samplers, &mut rng)
        })
        .collect::<Result<_>>()?;
    let c = post.cells();
    let mut mean1 = vec![0.0; c];
    let mut mean0 = vec![0.0; c + 1];
    let mut rejections = 0;
    for (l, rej) in &results {
        for (m, v) in mean1.iter_mut().zip(&l.lambda1) {
            *m += v;
        }
        for (m, v) in mean0.iter_mut().zip(&l.lambda0) {
            *m += v;
        }
        rejections += rej;
    }
    let r = draws as f64;
    mean1.iter_mut().for_each(|m| *m /= r);
    mean0.iter_mut().for_each(|m| *m /= r);
    Ok(PosteriorLambda {
        draws: results.into_iter().map(|(l, _)| l).collect(),
        mean1,
        mean0,
        rejections,
        seed,
        posteriors: post,
    })
}
