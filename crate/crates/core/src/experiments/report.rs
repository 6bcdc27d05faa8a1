use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One discrepancy evaluation along a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sequence_id: String,
    pub direction: String,
    pub n: usize,
    pub gfksd: f64,
    pub strategy: String,
    pub sigma: f64,
    pub beta: f64,
    /// Mode-specific companion value (for example an analytic bound).
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

/// SHA-256 of the canonical JSON encoding of `config`, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl ExperimentReport {
    pub fn new<T: Serialize>(experiment: &str, seed: u64, config: &T) -> Result<Self> {
        Ok(Self {
            metadata: ReportMetadata { experiment: experiment.into(), seed, config_hash: config_hash(config)? },
            rows: Vec::new(),
        })
    }

    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        if !(row.gfksd >= 0.0) {
            return Err(Error::Consistency(format!("negative or NaN discrepancy {} in report", row.gfksd)));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Rows of one sequence, in insertion order.
    pub fn sequence(&self, id: &str) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.sequence_id == id).collect()
    }

    pub fn sequence_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.sequence_id) {
                ids.push(r.sequence_id.clone());
            }
        }
        ids
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` (rows) and `<stem>.json` (metadata) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: f64) -> ReportRow {
        ReportRow {
            sequence_id: "s".into(),
            direction: "converging".into(),
            n: 1,
            gfksd: g,
            strategy: "oracle".into(),
            sigma: 1.0,
            beta: 0.5,
            reference: None,
        }
    }

    #[test]
    fn rejects_negative_rows() {
        let mut r = ExperimentReport::new("t", 0, &1).unwrap();
        assert!(r.push(row(-1.0)).is_err());
        assert!(r.push(row(f64::NAN)).is_err());
        r.push(row(0.5)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sequence_id,direction,n,gfksd,strategy,sigma,beta,reference\n"));
    }

    #[test]
    fn hash_depends_on_config() {
        assert_eq!(config_hash(&[1, 2]).unwrap(), config_hash(&[1, 2]).unwrap());
        assert_ne!(config_hash(&[1, 2]).unwrap(), config_hash(&[2, 1]).unwrap());
        assert_eq!(config_hash(&1).unwrap().len(), 64);
    }
}
