use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A finitely supported probability measure `Σ w_i δ(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("particle measure needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("points must have positive dimension".into()));
        }
        for p in &points {
            crate::error::check_dim(d, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite particle coordinate".into()));
            }
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight {i} is {}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self { points: vec![point], weights: vec![1.0] }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Same support, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }

    /// Applies `f` to every point, keeping weights.
    pub fn map_points<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        Self::new(self.points.iter().map(|x| f(x)).collect(), self.weights.clone())
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (x, w) in self.points.iter().zip(&self.weights) {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += w * xk;
            }
        }
        m
    }

    /// Writes `x1..xd,weight` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for (x, wt) in self.points.iter().zip(&self.weights) {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            row.push(format!("{wt:.17e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().last() != Some("weight") {
            return Err(Error::Config("particle CSV must end with a `weight` column".into()));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number {f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let (w, x) = vals.split_last().ok_or_else(|| Error::Config("empty CSV row".into()))?;
            points.push(x.to_vec());
            weights.push(*w);
        }
        Self::new(points, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_weights() {
        assert!(ParticleMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.4]).is_err());
        assert!(ParticleMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(ParticleMeasure::new(vec![], vec![]).is_err());
        assert!(ParticleMeasure::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(ParticleMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let m = ParticleMeasure::new(vec![vec![0.1, -2.0], vec![3.5, 1e-300]], vec![0.3, 0.7]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,weight\n"));
        assert_eq!(ParticleMeasure::read_csv(&buf[..]).unwrap(), m);
    }
}
