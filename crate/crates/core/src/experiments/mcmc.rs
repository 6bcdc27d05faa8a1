use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::density::Density;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisOptions {
    /// Per-coordinate proposal standard deviations.
    pub proposal_sd: Vec<f64>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MetropolisOutput {
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

/// Random-walk Metropolis with Gaussian proposals, for building reference
/// samples on analytic targets.
pub fn random_walk_metropolis(target: &dyn Density, init: &[f64], opts: &MetropolisOptions) -> Result<MetropolisOutput> {
    check_dim(target.dim(), init.len())?;
    check_dim(target.dim(), opts.proposal_sd.len())?;
    if opts.thin == 0 {
        return Err(Error::InvalidArgument("thin must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = init.to_vec();
    let mut lx = target.log_density(&x);
    if !lx.is_finite() {
        return Err(Error::InvalidArgument("target density vanishes at the initial point".into()));
    }
    let total = opts.burn_in + opts.n_samples * opts.thin;
    let mut accepted = 0usize;
    let mut samples = Vec::with_capacity(opts.n_samples);
    for it in 0..total {
        let prop: Vec<f64> = x
            .iter()
            .zip(&opts.proposal_sd)
            .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = target.log_density(&prop);
        let u: f64 = rng.random();
        if lp.is_finite() && u.ln() < lp - lx {
            x = prop;
            lx = lp;
            accepted += 1;
        }
        if it >= opts.burn_in && (it - opts.burn_in) % opts.thin == opts.thin - 1 {
            samples.push(x.clone());
        }
    }
    Ok(MetropolisOutput { samples, acceptance_rate: accepted as f64 / total.max(1) as f64 })
}
