//! Lotka–Volterra predator–prey posterior on log-parameters.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use super::ode::{solve_dopri45, OdeOptions};
use crate::density::{Density, DensityKind};
use crate::error::{Error, Result};

const HUDSON_BAY: &str = include_str!("../../data/hudson_bay.csv");

pub const LV_PARAM_NAMES: [&str; 8] = ["alpha", "beta", "gamma", "delta", "u0", "v0", "sigma1", "sigma2"];

/// `(α u − β u v, −γ v + δ u v)`.
pub fn lv_rhs(state: [f64; 2], params: [f64; 4]) -> [f64; 2] {
    let [u, v] = state;
    let [alpha, beta, gamma, delta] = params;
    [alpha * u - beta * u * v, -gamma * v + delta * u * v]
}

/// Rates and initial state on the natural (positive) scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LvParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub u0: f64,
    pub v0: f64,
}

impl LvParams {
    pub fn rates(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn from_log(theta: &[f64]) -> Self {
        Self {
            alpha: theta[0].exp(),
            beta: theta[1].exp(),
            gamma: theta[2].exp(),
            delta: theta[3].exp(),
            u0: theta[4].exp(),
            v0: theta[5].exp(),
        }
    }
}

/// Solves from `(u0, v0)` at `t = 0` and reports `(u, v)` at every grid time.
pub fn integrate_lv(params: &LvParams, t_grid: &[f64], opts: &OdeOptions) -> Result<Vec<[f64; 2]>> {
    if !(params.u0 > 0.0 && params.v0 > 0.0) {
        return Err(Error::InvalidArgument("initial populations must be positive".into()));
    }
    let rates = params.rates();
    let out = solve_dopri45(
        |_, y| lv_rhs([y[0], y[1]], rates).to_vec(),
        0.0,
        &[params.u0, params.v0],
        t_grid,
        opts,
    )?;
    Ok(out.into_iter().map(|y| [y[0], y[1]]).collect())
}

/// `δu − γ ln u + βv − α ln v`, constant along exact trajectories.
pub fn lv_first_integral(params: &LvParams, state: [f64; 2]) -> f64 {
    let [u, v] = state;
    params.delta * u - params.gamma * u.ln() + params.beta * v - params.alpha * v.ln()
}

/// Observation times and the two observed series.
#[derive(Debug, Clone, PartialEq)]
pub struct LvData {
    pub times: Vec<f64>,
    pub hare: Vec<f64>,
    pub lynx: Vec<f64>,
}

impl LvData {
    /// The bundled Hudson's Bay record, 1900–1920, with `t = year − 1900`.
    pub fn hudson_bay() -> Self {
        Self::parse(HUDSON_BAY.as_bytes()).expect("bundled dataset is well formed")
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open dataset {}: {e}", path.display())))?;
        Self::parse(f)
    }

    /// Reads `year,hare,lynx` rows; times are measured from the first year.
    pub fn parse<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Config("dataset rows must be year,hare,lynx".into()));
            }
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Config(format!("bad value {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        if rows.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let t0 = rows[0][0];
        let data = Self {
            times: rows.iter().map(|r| r[0] - t0).collect(),
            hare: rows.iter().map(|r| r[1]).collect(),
            lynx: rows.iter().map(|r| r[2]).collect(),
        };
        if data.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("dataset years must be increasing".into()));
        }
        if data.hare.iter().chain(&data.lynx).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("observations must be positive".into()));
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Unnormalized posterior over `θ = log(α, β, γ, δ, u₀, v₀, σ₁, σ₂)`.
///
/// Log-normal priors on the positive parameters are Gaussian priors on `θ`,
/// so no Jacobian term appears.
#[derive(Debug, Clone)]
pub struct LotkaVolterraModel {
    pub data: LvData,
    pub prior_mean: [f64; 8],
    pub prior_sd: [f64; 8],
    pub ode: OdeOptions,
}

/// Log posterior value plus the reason when the ODE solve failed.
#[derive(Debug, Clone, PartialEq)]
pub struct LvLogPosterior {
    pub value: f64,
    pub ode_failure: Option<String>,
}

impl LotkaVolterraModel {
    pub fn new(data: LvData) -> Self {
        let l07 = 0.7f64.ln();
        let l002 = 0.02f64.ln();
        let l10 = 10f64.ln();
        let l025 = 0.25f64.ln();
        Self {
            data,
            prior_mean: [l07, l002, l07, l002, l10, l10, l025, l025],
            prior_sd: [0.6, 0.3, 0.6, 0.3, 1.0, 1.0, 0.02, 0.02],
            ode: OdeOptions { rtol: 1e-11, atol: 1e-11, ..Default::default() },
        }
    }

    pub fn hudson_bay() -> Self {
        Self::new(LvData::hudson_bay())
    }

    pub fn prior_mode(&self) -> Vec<f64> {
        self.prior_mean.to_vec()
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.prior_mean.iter().zip(&self.prior_sd))
            .map(|(t, (m, s))| -0.5 * ((t - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln())
            .sum()
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != 8 {
            return Err(Error::DimensionMismatch { expected: 8, got: theta.len() });
        }
        let params = LvParams::from_log(theta);
        let traj = integrate_lv(&params, &self.data.times, &self.ode)?;
        let (s1, s2) = (theta[6].exp(), theta[7].exp());
        let mut ll = 0.0;
        for (i, [u, v]) in traj.iter().enumerate() {
            if !(*u > 0.0 && *v > 0.0) {
                return Err(Error::Numeric(format!("non-positive ODE state at t = {}", self.data.times[i])));
            }
            ll += log_normal_pdf(self.data.hare[i], u.ln(), s1);
            ll += log_normal_pdf(self.data.lynx[i], v.ln(), s2);
        }
        Ok(ll)
    }

    pub fn log_posterior_checked(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_prior(theta) + self.log_likelihood(theta)?)
    }
}

fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x.ln() - mu) / sigma;
    -x.ln() - sigma.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
}

/// Log posterior, `−∞` with a diagnostic when the ODE solve fails.
pub fn lv_log_posterior(model: &LotkaVolterraModel, theta: &[f64]) -> LvLogPosterior {
    match model.log_posterior_checked(theta) {
        Ok(value) if value.is_finite() => LvLogPosterior { value, ode_failure: None },
        Ok(value) => LvLogPosterior { value: f64::NEG_INFINITY, ode_failure: Some(format!("non-finite value {value}")) },
        Err(e) => LvLogPosterior { value: f64::NEG_INFINITY, ode_failure: Some(e.to_string()) },
    }
}

impl Density for LotkaVolterraModel {
    fn dim(&self) -> usize {
        8
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Custom
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        lv_log_posterior(self, x).value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhs_examples() {
        assert_eq!(lv_rhs([0.0, 0.0], [0.7, 0.02, 0.7, 0.02]), [0.0, 0.0]);
        let p = [0.7, 0.02, 0.9, 0.03];
        let eq = lv_rhs([p[2] / p[3], p[0] / p[1]], p);
        assert!(eq[0].abs() < 1e-12 && eq[1].abs() < 1e-12);
        assert_eq!(lv_rhs([2.0, 3.0], [1.0, 0.0, 1.0, 0.0]), [2.0, -3.0]);
    }

    #[test]
    fn decoupled_closed_form() {
        let p = LvParams { alpha: 0.4, beta: 0.0, gamma: 0.3, delta: 0.0, u0: 2.0, v0: 5.0 };
        let grid: Vec<f64> = (0..=10).map(|i| 0.5 * i as f64).collect();
        let traj = integrate_lv(&p, &grid, &OdeOptions::default()).unwrap();
        for (t, [u, v]) in grid.iter().zip(&traj) {
            assert!((u / (2.0 * (0.4 * t).exp()) - 1.0).abs() < 1e-6);
            assert!((v / (5.0 * (-0.3 * t).exp()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn first_integral_conserved() {
        let p = LvParams { alpha: 0.55, beta: 0.028, gamma: 0.8, delta: 0.024, u0: 33.0, v0: 6.0 };
        let grid: Vec<f64> = (0..=100).map(|i| 0.2 * i as f64).collect();
        let traj = integrate_lv(&p, &grid, &OdeOptions::default()).unwrap();
        let h0 = lv_first_integral(&p, traj[0]);
        for s in &traj {
            assert!(((lv_first_integral(&p, *s) - h0) / h0).abs() < 1e-5);
        }
    }

    #[test]
    fn tolerance_consistency() {
        let p = LvParams { alpha: 0.55, beta: 0.028, gamma: 0.8, delta: 0.024, u0: 33.0, v0: 6.0 };
        let a = integrate_lv(&p, &[20.0], &OdeOptions { rtol: 1e-8, ..Default::default() }).unwrap();
        let b = integrate_lv(&p, &[20.0], &OdeOptions { rtol: 5e-9, ..Default::default() }).unwrap();
        for k in 0..2 {
            assert!(((a[0][k] - b[0][k]) / a[0][k]).abs() < 1e-7);
        }
    }

    #[test]
    fn bundled_data_shape() {
        let d = LvData::hudson_bay();
        assert_eq!(d.len(), 21);
        assert_eq!(d.times[0], 0.0);
        assert_eq!(d.times[20], 20.0);
    }

    #[test]
    fn prior_gradient_vanishes_at_mode() {
        let m = LotkaVolterraModel::hudson_bay();
        let t0 = m.prior_mode();
        for k in 0..8 {
            let h = 1e-5;
            let mut a = t0.clone();
            let mut b = t0.clone();
            a[k] += h;
            b[k] -= h;
            assert!(((m.log_prior(&a) - m.log_prior(&b)) / (2.0 * h)).abs() < 1e-8);
        }
        let g = crate::density::fd_score(&m, &t0, 1e-6);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn synthetic_data_prefers_true_parameters() {
        let truth = [0.55f64.ln(), 0.028f64.ln(), 0.8f64.ln(), 0.024f64.ln(), 33f64.ln(), 6f64.ln(), -5.0, -5.0];
        let times: Vec<f64> = (0..21).map(f64::from).collect();
        let traj = integrate_lv(&LvParams::from_log(&truth), &times, &OdeOptions::default()).unwrap();
        let data = LvData {
            times,
            hare: traj.iter().map(|s| s[0]).collect(),
            lynx: traj.iter().map(|s| s[1]).collect(),
        };
        let m = LotkaVolterraModel::new(data);
        let at_truth = m.log_likelihood(&truth).unwrap();
        for k in 0..6 {
            let mut t = truth;
            t[k] += 0.01;
            assert!(m.log_likelihood(&t).unwrap() < at_truth);
        }
    }

    #[test]
    fn observation_rescaling_shift() {
        // scaling every observation by c shifts each term by −ln c plus a
        // quadratic change in the residual; with zero residual shift only −ln c
        let theta = LotkaVolterraModel::hudson_bay().prior_mode();
        let times: Vec<f64> = (0..21).map(f64::from).collect();
        let traj = integrate_lv(&LvParams::from_log(&theta), &times, &OdeOptions::default()).unwrap();
        let base = LvData { times, hare: traj.iter().map(|s| s[0]).collect(), lynx: traj.iter().map(|s| s[1]).collect() };
        let c: f64 = 1.7;
        let scaled = LvData {
            times: base.times.clone(),
            hare: base.hare.iter().map(|v| v * c).collect(),
            lynx: base.lynx.iter().map(|v| v * c).collect(),
        };
        let m0 = LotkaVolterraModel::new(base);
        let m1 = LotkaVolterraModel::new(scaled);
        let s = theta[6].exp();
        let expected = 42.0 * (-c.ln() - 0.5 * (c.ln() / s).powi(2));
        let diff = m1.log_likelihood(&theta).unwrap() - m0.log_likelihood(&theta).unwrap();
        assert!((diff - expected).abs() < 1e-6 * expected.abs(), "{diff} vs {expected}");
    }

    #[test]
    fn ode_failure_is_flagged() {
        let m = LotkaVolterraModel::hudson_bay();
        let mut theta = m.prior_mode();
        theta[0] = 800.0;
        let r = lv_log_posterior(&m, &theta);
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert!(r.ode_failure.is_some());
    }
}
