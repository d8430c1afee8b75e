use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One swept setting evaluated under several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub sd: f64,
}

impl SweepRow {
    pub fn from_values(label: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            label: label.into(),
            values,
            mean,
            sd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, label: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// `label,mean,sd,seed_<s>...` with values in mAP points.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,mean,sd");
        for seed in &self.seeds {
            let _ = write!(s, ",seed_{seed}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{:.6},{:.6}", r.label, 100.0 * r.mean, 100.0 * r.sd);
            for v in &r.values {
                let _ = write!(s, ",{:.6}", 100.0 * v);
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `run(setting, seed)` for every pair and tabulates the results.
pub fn sweep<S, F>(name: &str, settings: &[(String, S)], seeds: &[u64], mut run: F) -> Result<SweepTable>
where
    F: FnMut(&S, u64) -> Result<f64>,
{
    let mut rows = Vec::with_capacity(settings.len());
    for (label, setting) in settings {
        let values = seeds.iter().map(|&s| run(setting, s)).collect::<Result<Vec<_>>>()?;
        log::info!("{name} {label}: {values:?}");
        rows.push(SweepRow::from_values(label.clone(), values));
    }
    Ok(SweepTable {
        name: name.to_string(),
        seeds: seeds.to_vec(),
        rows,
    })
}
