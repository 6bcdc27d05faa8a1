//! Dormand–Prince 5(4) adaptive Runge–Kutta.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, max_steps: 1_000_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus the embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `(t0, y0)` and returns the state at every
/// time in `t_out` (non-decreasing, all `≥ t0`). Steps land exactly on the
/// output times.
pub fn solve_dopri45<F>(f: F, t0: f64, y0: &[f64], t_out: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if t_out.windows(2).any(|w| w[1] < w[0]) || t_out.first().is_some_and(|t| *t < t0) {
        return Err(Error::InvalidArgument("output times must be non-decreasing and ≥ t0".into()));
    }
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = f(t, &y);
    let span = t_out.last().map_or(0.0, |e| e - t0);
    let mut h = initial_step(&y, &k[0], opts, span);
    let mut steps = 0;
    let mut out = Vec::with_capacity(t_out.len());
    let mut stage = vec![0.0; n];
    for &target in t_out {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::Numeric(format!("ODE step limit reached at t = {t}")));
            }
            let last = h >= target - t;
            let hs = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += hs * A[s][j] * kj[i];
                    }
                    stage[i] = acc;
                }
                k[s] = f(t + C[s] * hs, &stage);
            }
            // stage 6 evaluates at the fifth-order solution (FSAL)
            let y_new = stage.clone();
            let mut err = 0.0;
            for i in 0..n {
                let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * hs;
                let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h = hs * 0.2;
            } else if err <= 1.0 {
                t = if last { target } else { t + hs };
                y = y_new;
                k[0] = k[6].clone();
                steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a shortened final step says nothing about the natural step size
                if !last || fac < 1.0 {
                    h = hs * fac;
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Numeric(format!("ODE step size underflow at t = {t} (stiff problem?)")));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], f0: &[f64], opts: &OdeOptions, span: f64) -> f64 {
    let d0 = y.iter().map(|v| (v / (opts.atol + opts.rtol * v.abs())).powi(2)).sum::<f64>().sqrt();
    let d1 = y
        .iter()
        .zip(f0)
        .map(|(v, fv)| (fv / (opts.atol + opts.rtol * v.abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    if span > 0.0 {
        h.min(span)
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let out = solve_dopri45(|_, y| vec![-y[0]], 0.0, &[1.0], &[0.5, 1.0, 3.0], &OdeOptions::default()).unwrap();
        for (y, t) in out.iter().zip([0.5f64, 1.0, 3.0]) {
            assert!((y[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let tp = 2.0 * std::f64::consts::PI;
        let out = solve_dopri45(|_, y| vec![y[1], -y[0]], 0.0, &[1.0, 0.0], &[tp], &opts).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-8 && out[0][1].abs() < 1e-8);
    }

    #[test]
    fn output_at_start_time() {
        let out = solve_dopri45(|_, y| vec![y[0]], 0.0, &[2.0], &[0.0, 0.0], &OdeOptions::default()).unwrap();
        assert_eq!(out, vec![vec![2.0], vec![2.0]]);
    }

    #[test]
    fn rejects_decreasing_times() {
        assert!(solve_dopri45(|_, y| vec![y[0]], 0.0, &[1.0], &[1.0, 0.5], &OdeOptions::default()).is_err());
    }

    #[test]
    fn blow_up_reports_failure() {
        // y' = y², y(0) = 1 blows up at t = 1
        let r = solve_dopri45(|_, y| vec![y[0] * y[0]], 0.0, &[1.0], &[2.0], &OdeOptions::default());
        assert!(r.is_err());
    }
}
