use statrs::distribution::{ContinuousCDF, Normal};

use super::ParticleMeasure;
use crate::density::Density;
use crate::error::{Error, Result};

const CDF_TOL: f64 = 1e-10;

/// Solves `F(x) = t` by bracketing and bisection on the density's CDF.
pub fn invert_cdf(density: &dyn Density, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {t} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut expansions = 0;
    while density.cdf(lo)? > t {
        lo *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::Numeric(format!("cannot bracket quantile {t} from below")));
        }
    }
    while density.cdf(hi)? < t {
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::Numeric(format!("cannot bracket quantile {t} from above")));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if density.cdf(mid)? < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let err = (density.cdf(x)? - t).abs();
    if err > CDF_TOL {
        return Err(Error::Numeric(format!("CDF inversion at {t} stalled with error {err:.3e}")));
    }
    Ok(x)
}

/// Equal-weight measure on the inverse-CDF images of `(i − 1/2)/m`.
pub fn qmc_particles_1d(density: &dyn Density, m: usize) -> Result<ParticleMeasure> {
    if density.dim() != 1 {
        return Err(Error::InvalidArgument("qmc_particles_1d needs a 1D density".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let pts = (1..=m)
        .map(|i| invert_cdf(density, (i as f64 - 0.5) / m as f64).map(|x| vec![x]))
        .collect::<Result<Vec<_>>>()?;
    ParticleMeasure::uniform(pts)
}

fn first_primes(d: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(d);
    let mut c = 2u64;
    while primes.len() < d {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `m` Halton points in `d` dimensions mapped through the standard normal
/// quantile, giving a low-discrepancy equal-weight 𝒩(0, I) measure.
pub fn halton_normal_points(d: usize, m: usize) -> Result<ParticleMeasure> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument("dimension and m must be positive".into()));
    }
    let std = Normal::standard();
    let primes = first_primes(d);
    let pts = (1..=m as u64)
        .map(|i| primes.iter().map(|&b| std.inverse_cdf(radical_inverse(i, b))).collect())
        .collect();
    ParticleMeasure::uniform(pts)
}
