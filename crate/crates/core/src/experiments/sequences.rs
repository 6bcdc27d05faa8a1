use serde::{Deserialize, Serialize};

use crate::density::{DensityRef, ModelSpec};
use crate::discrepancy::{halton_normal_points, qmc_particles_1d, ParticleMeasure};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Converging,
    NonConverging,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Converging => "converging",
            Direction::NonConverging => "non_converging",
        }
    }
}

/// A schedule of `N` values, either listed or interpolated geometrically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Values(Vec<f64>),
    /// `v_n = end + (start − end)·rate^n`; with `log: true` the same
    /// interpolation is applied to `ln v`.
    Geometric {
        start: f64,
        end: f64,
        rate: f64,
        #[serde(default)]
        log: bool,
    },
}

impl ScheduleSpec {
    pub fn values(&self, length: usize) -> Result<Vec<f64>> {
        match self {
            ScheduleSpec::Values(v) => {
                if v.len() != length {
                    return Err(Error::Config(format!("schedule has {} values, expected {length}", v.len())));
                }
                Ok(v.clone())
            }
            ScheduleSpec::Geometric { start, end, rate, log } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::Config(format!("geometric rate {rate} outside [0, 1)")));
                }
                if *log && !(*start > 0.0 && *end > 0.0) {
                    return Err(Error::Config("log schedules need positive endpoints".into()));
                }
                Ok((0..length)
                    .map(|n| {
                        let f = rate.powi(n as i32);
                        if *log {
                            (end.ln() + (start.ln() - end.ln()) * f).exp()
                        } else {
                            end + (start - end) * f
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Configuration of one location–scale sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub id: String,
    pub direction: Direction,
    /// Base measure `u`; the target when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ModelSpec>,
    pub a: ScheduleSpec,
    pub b: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSet {
    pub length: usize,
    pub sequences: Vec<SequenceSpec>,
}

impl SequenceSet {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad sequence file: {e}")))
    }

    pub fn build(&self, target: &DensityRef) -> Result<Vec<LocationScaleSequence>> {
        self.sequences
            .iter()
            .map(|s| {
                let base = match &s.base {
                    Some(spec) => spec.build()?,
                    None => target.clone(),
                };
                LocationScaleSequence::new(&s.id, base, s.a.values(self.length)?, s.b.values(self.length)?, s.direction)
            })
            .collect()
    }
}

/// `π_n = (L_n)_# u` with `L_n(x) = a_n + b_n x`.
#[derive(Debug, Clone)]
pub struct LocationScaleSequence {
    pub id: String,
    pub base: DensityRef,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub direction: Direction,
}

impl LocationScaleSequence {
    pub fn new(id: &str, base: DensityRef, a: Vec<f64>, b: Vec<f64>, direction: Direction) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Config(format!("sequence {id}: a and b must be non-empty and equally long")));
        }
        if b.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("sequence {id}: every b_n must be positive")));
        }
        Ok(Self { id: id.into(), base, a, b, direction })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Low-discrepancy particles for the base measure: inverse-CDF midpoints
    /// in 1D, Halton points for a standard Gaussian base otherwise.
    pub fn base_particles(&self, m: usize) -> Result<ParticleMeasure> {
        if self.base.dim() == 1 {
            qmc_particles_1d(self.base.as_ref(), m)
        } else {
            halton_normal_points(self.base.dim(), m)
        }
    }

    /// Element `n` (0-based), obtained by mapping the base particles.
    pub fn element(&self, n: usize, base: &ParticleMeasure) -> Result<ParticleMeasure> {
        let (a, b) = (self.a[n], self.b[n]);
        base.map_points(|x| x.iter().map(|v| a + b * v).collect())
    }
}
