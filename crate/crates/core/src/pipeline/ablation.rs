use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::fuse::{evaluate, EvalOptions};
use super::manifest::RunManifest;
use super::trainer::train_stage1;
use super::{AblationFlags, TrainConfig};
use crate::error::Result;
use crate::fusion::FusionRegistry;
use crate::imaging::PairedDataset;
use crate::metrics::{MetricRecord, MetricReport};

pub const ARMS: [(&str, AblationFlags); 3] = [
    (
        "Base Model",
        AblationFlags {
            use_drgo: false,
            use_grad_loss: false,
        },
    ),
    (
        "Base Model+L_grad",
        AblationFlags {
            use_drgo: false,
            use_grad_loss: true,
        },
    ),
    (
        "Base Model+L_grad+DRGO",
        AblationFlags {
            use_drgo: true,
            use_grad_loss: true,
        },
    ),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub flags: AblationFlags,
    pub config_hash: String,
    /// Dotted config paths whose value differs from the first arm.
    pub config_diff: Vec<String>,
    pub final_train_loss: Option<f64>,
    pub report: MetricReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub strategy: String,
    pub arms: Vec<AblationArm>,
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.arms.iter().map(|a| a.name.len()).max().unwrap_or(0);
        write!(f, "{:<width$}", "")?;
        for n in MetricRecord::NAMES {
            write!(f, "  {:>15}", n.to_uppercase())?;
        }
        for arm in &self.arms {
            write!(f, "\n{:<width$}", arm.name)?;
            for v in arm.report.aggregate.values() {
                write!(f, "  {:>15}", v.to_string())?;
            }
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, serde_json::Value>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

/// Dotted paths at which two configs differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Result<Vec<String>> {
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    flatten("", &serde_json::to_value(a)?, &mut fa);
    flatten("", &serde_json::to_value(b)?, &mut fb);
    let mut keys: Vec<String> = fa.keys().chain(fb.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    Ok(keys.into_iter().filter(|k| fa.get(k) != fb.get(k)).collect())
}

/// The three arm configs: `base` with only the ablation flags replaced.
pub fn arm_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    ARMS.iter()
        .map(|(name, flags)| {
            let mut cfg = base.clone();
            cfg.ablation = *flags;
            (name.to_string(), cfg)
        })
        .collect()
}

/// Trains and evaluates every arm on the same data and seed. Each arm gets its
/// own subdirectory of `out_dir`.
pub fn ablate(
    base: &TrainConfig,
    train: &PairedDataset,
    test: &PairedDataset,
    strategy: &str,
    registry: &FusionRegistry,
    out_dir: Option<&Path>,
    device: &Device,
) -> Result<(AblationReport, RunManifest)> {
    registry.get(strategy)?;
    let configs = arm_configs(base);
    let mut arms = Vec::new();
    let mut manifest = RunManifest::new("ablate", base.seed, serde_json::to_value(base)?, base.hash());
    for (i, (name, cfg)) in configs.iter().enumerate() {
        let dir = out_dir.map(|d| d.join(format!("arm{i}")));
        let outcome = train_stage1(cfg, train, None, dir.as_deref(), device)?;
        let opts = EvalOptions {
            seed: cfg.seed,
            checkpoint_id: format!("{name} {}", cfg.hash()),
            image_dir: None,
        };
        let report = evaluate(&outcome.model, test, &[strategy.to_string()], registry, &opts)?
            .remove(strategy)
            .expect("strategy evaluated");
        if let Some(d) = &dir {
            report.save(d, "metrics")?;
        }
        let diff = config_diff(&configs[0].1, cfg)?;
        manifest.notes.insert(format!("arm{i}.name"), name.clone());
        manifest.notes.insert(format!("arm{i}.config_diff"), diff.join(","));
        manifest.timings.extend(
            outcome
                .manifest
                .timings
                .iter()
                .map(|(k, v)| (format!("arm{i}.{k}"), *v)),
        );
        arms.push(AblationArm {
            name: name.clone(),
            flags: cfg.ablation,
            config_hash: cfg.hash(),
            config_diff: diff,
            final_train_loss: outcome.state.epochs.last().map(|e| e.mean_train_loss),
            report,
        });
    }
    let report = AblationReport {
        strategy: strategy.to_string(),
        arms,
    };
    if let Some(d) = out_dir {
        let path = d.join("ablation.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .map_err(|e| crate::error::Error::io(&path, e))?;
        manifest.metric_report_path = Some(path);
        manifest.save(&d.join("ablation_manifest.json"))?;
    }
    Ok((report, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arms_differ_only_in_flags() {
        let arms = arm_configs(&TrainConfig::harvard());
        assert_eq!(arms.len(), 3);
        assert_eq!(config_diff(&arms[0].1, &arms[0].1).unwrap(), Vec::<String>::new());
        assert_eq!(config_diff(&arms[0].1, &arms[1].1).unwrap(), vec!["ablation.use_grad_loss"]);
        assert_eq!(
            config_diff(&arms[0].1, &arms[2].1).unwrap(),
            vec!["ablation.use_drgo", "ablation.use_grad_loss"]
        );
        assert!(!arms[0].1.effective_model().encoder.use_drgo);
    }
}
