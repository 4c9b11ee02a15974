use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five metrics of one fused image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub psnr: f64,
    pub ssim: f64,
    pub fmi: f64,
    pub fsim: f64,
    pub en: f64,
}

impl MetricRecord {
    pub const NAMES: [&'static str; 5] = ["psnr", "ssim", "fmi", "fsim", "en"];

    pub fn values(&self) -> [f64; 5] {
        [self.psnr, self.ssim, self.fmi, self.fsim, self.en]
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("cannot aggregate zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub fmi: MeanStd,
    pub fsim: MeanStd,
    pub en: MeanStd,
}

impl MetricSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a MetricRecord>) -> Result<Self> {
        let mut cols: [Vec<f64>; 5] = Default::default();
        for r in records {
            for (col, v) in cols.iter_mut().zip(r.values()) {
                col.push(v);
            }
        }
        Ok(Self {
            psnr: MeanStd::from_values(&cols[0])?,
            ssim: MeanStd::from_values(&cols[1])?,
            fmi: MeanStd::from_values(&cols[2])?,
            fsim: MeanStd::from_values(&cols[3])?,
            en: MeanStd::from_values(&cols[4])?,
        })
    }

    pub fn values(&self) -> [MeanStd; 5] {
        [self.psnr, self.ssim, self.fmi, self.fsim, self.en]
    }

    fn means(&self) -> MetricRecord {
        MetricRecord {
            psnr: self.psnr.mean,
            ssim: self.ssim.mean,
            fmi: self.fmi.mean,
            fsim: self.fsim.mean,
            en: self.en.mean,
        }
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = MetricRecord::NAMES
            .iter()
            .zip(self.values())
            .map(|(n, v)| format!("{}={v}", n.to_uppercase()))
            .collect();
        f.write_str(&cells.join("  "))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub strategy: String,
    pub checkpoint_id: String,
}

/// Per-pair records (sorted by pair id) and their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_pair: BTreeMap<String, MetricRecord>,
    pub aggregate: MetricSummary,
    pub run_metadata: RunMetadata,
}

impl MetricReport {
    pub fn new(per_pair: BTreeMap<String, MetricRecord>, run_metadata: RunMetadata) -> Result<Self> {
        let aggregate = MetricSummary::from_records(per_pair.values())?;
        Ok(Self {
            per_pair,
            aggregate,
            run_metadata,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per pair, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("id,{}\n", MetricRecord::NAMES.join(","));
        let row = |id: &str, v: [f64; 5]| {
            let cells: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            format!("{id},{}\n", cells.join(","))
        };
        for (id, r) in &self.per_pair {
            out += &row(id, r.values());
        }
        out += &row("mean", self.aggregate.values().map(|m| m.mean));
        out += &row("std", self.aggregate.values().map(|m| m.std));
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Mean and std across runs of each run's mean.
pub fn aggregate_runs(reports: &[MetricReport]) -> Result<MetricSummary> {
    let means: Vec<MetricRecord> = reports.iter().map(|r| r.aggregate.means()).collect();
    MetricSummary::from_records(&means)
}
