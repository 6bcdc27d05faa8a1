use rayon::prelude::*;

use crate::discrepancy::ParticleMeasure;
use crate::error::{check_dim, Result};
use crate::numeric::{dist, CompensatedSum};

fn cross_term(a: &ParticleMeasure, b: &ParticleMeasure) -> f64 {
    let rows: Vec<f64> = a
        .points()
        .par_iter()
        .zip(a.weights().par_iter())
        .map(|(x, wa)| {
            let s: CompensatedSum = b.points().iter().zip(b.weights()).map(|(y, wb)| wb * dist(x, y)).collect();
            wa * s.value()
        })
        .collect();
    rows.into_iter().collect::<CompensatedSum>().value()
}

/// Weighted energy distance `2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖` (V-statistic form).
pub fn energy_distance(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let v = 2.0 * cross_term(a, b) - cross_term(a, a) - cross_term(b, b);
    Ok(v.max(0.0))
}

/// A reference measure with its self-interaction term precomputed, for
/// scoring many measures against the same sample.
#[derive(Debug, Clone)]
pub struct EnergyReference {
    measure: ParticleMeasure,
    self_term: f64,
}

impl EnergyReference {
    pub fn new(measure: ParticleMeasure) -> Self {
        let self_term = cross_term(&measure, &measure);
        Self { measure, self_term }
    }

    pub fn measure(&self) -> &ParticleMeasure {
        &self.measure
    }

    pub fn distance(&self, a: &ParticleMeasure) -> Result<f64> {
        check_dim(self.measure.dim(), a.dim())?;
        let v = 2.0 * cross_term(a, &self.measure) - cross_term(a, a) - self.self_term;
        Ok(v.max(0.0))
    }
}
