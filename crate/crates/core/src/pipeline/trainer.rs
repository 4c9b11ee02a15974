use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::optim::Adam;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::imaging::{split_indices, GrayImage, PairedDataset};
use crate::losses::{LossComponents, ReconstructionLoss};
use crate::network::{read_tensors, write_tensors, AutoEncoder, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub components: LossComponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Progress that must survive a checkpoint for resumed training to match an
/// uninterrupted run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Fully completed epochs.
    pub epochs_done: usize,
    pub global_step: usize,
    pub best_val_loss: Option<f64>,
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
}

type Sample = (String, GrayImage);

/// Stage-1 reconstruction training over pooled single images.
pub struct Trainer {
    config: TrainConfig,
    model: AutoEncoder,
    loss: ReconstructionLoss,
    adam: Adam,
    state: TrainState,
    train: Vec<Sample>,
    val: Vec<Sample>,
}

fn split_validation(images: Vec<Sample>, fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let holdout = (images.len() as f64 * fraction).round() as usize;
    if holdout == 0 || holdout >= images.len() {
        return Ok((images, Vec::new()));
    }
    let (train_idx, val_idx) = split_indices(images.len(), holdout, seed ^ 0x7661_6c69_6461_7465)?;
    let mut slots: Vec<Option<Sample>> = images.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().expect("disjoint")).collect();
    let train = take(&train_idx);
    let val = take(&val_idx);
    Ok((train, val))
}

impl Trainer {
    /// Fresh model and optimizer. All images must share one size.
    pub fn new(config: TrainConfig, images: Vec<Sample>, device: &Device) -> Result<Self> {
        config.validate()?;
        let model = AutoEncoder::new(config.effective_model(), config.seed, DType::F32, device)?;
        let adam = Adam::new(config.optimizer.clone());
        Self::assemble(config, model, adam, TrainState::default(), images, device)
    }

    fn assemble(
        config: TrainConfig,
        model: AutoEncoder,
        adam: Adam,
        state: TrainState,
        images: Vec<Sample>,
        device: &Device,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
        let dims = first.1.dims();
        if let Some((id, _)) = images.iter().find(|(_, im)| im.dims() != dims) {
            return Err(Error::Shape(format!("training image {id} differs from {dims:?}")));
        }
        model.check_dims(dims.0, dims.1)?;
        let loss = ReconstructionLoss::new(
            config.loss.clone(),
            config.ablation.use_grad_loss,
            model.dtype(),
            device,
        )?;
        let (train, val) = split_validation(images, config.validation_fraction, config.seed)?;
        Ok(Self {
            config,
            model,
            loss,
            adam,
            state,
            train,
            val,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &AutoEncoder {
        &self.model
    }

    pub fn into_model(self) -> AutoEncoder {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn train_ids(&self) -> Vec<&str> {
        self.train.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn validation_ids(&self) -> Vec<&str> {
        self.val.iter().map(|(id, _)| id.as_str()).collect()
    }

    /// `Some(true)` when the perceptual extractor uses pretrained weights.
    pub fn extractor_pretrained(&self) -> Option<bool> {
        self.loss.extractor_pretrained()
    }

    pub fn is_finished(&self) -> bool {
        self.state.epochs_done >= self.config.epochs
            || self.config.max_steps.is_some_and(|m| self.state.global_step >= m)
    }

    /// Sample order of a 0-based epoch; depends only on the seed and the epoch.
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Mean total loss over the validation images, `None` without a validation set.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let mut weighted = 0.0;
        for chunk in self.val.chunks(self.config.batch_size) {
            let imgs: Vec<&GrayImage> = chunk.iter().map(|(_, im)| im).collect();
            let x = self.model.images_to_tensor(&imgs)?;
            let x_hat = self.model.reconstruct_tensor(&x)?.detach();
            let (_, parts) = self.loss.compute(&x, &x_hat)?;
            weighted += parts.total(self.loss.config(), self.loss.uses_grad()) * chunk.len() as f64;
        }
        Ok(Some(weighted / self.val.len() as f64))
    }

    /// Runs the next epoch (or what remains of the step budget).
    pub fn train_epoch(&mut self) -> Result<EpochSummary> {
        if self.is_finished() {
            return Err(Error::Config("training already finished".into()));
        }
        let epoch = self.state.epochs_done;
        let lr = self.config.lr_at(epoch);
        let order = self.epoch_order(epoch);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|m| self.state.global_step >= m) {
                break;
            }
            let imgs: Vec<&GrayImage> = chunk.iter().map(|&i| &self.train[i].1).collect();
            let x = self.model.images_to_tensor(&imgs)?;
            let x_hat = self.model.reconstruct_tensor(&x)?;
            let (loss, parts) = self.loss.compute(&x, &x_hat)?;
            let value = parts.total(self.loss.config(), self.loss.uses_grad());
            if !parts.is_finite() || !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: self.state.global_step,
                    batch_ids: chunk.iter().map(|&i| self.train[i].0.clone()).collect(),
                    pixel: parts.pixel,
                    grad: parts.grad,
                    perceptual: parts.perceptual,
                });
            }
            let grads = loss.backward()?;
            self.adam.step(self.model.params(), &grads, lr)?;
            self.state.history.push(StepRecord {
                epoch,
                step: self.state.global_step,
                lr,
                loss: value,
                components: parts,
            });
            self.state.global_step += 1;
            total += value;
            steps += 1;
        }
        let val_loss = self.validation_loss()?;
        let summary = EpochSummary {
            epoch,
            lr,
            steps,
            mean_train_loss: if steps > 0 { total / steps as f64 } else { f64::NAN },
            val_loss,
        };
        log::info!(
            "epoch {epoch} lr {lr:.3e} loss {:.6} val {:?}",
            summary.mean_train_loss,
            summary.val_loss
        );
        self.state.epochs_done += 1;
        self.state.epochs.push(summary.clone());
        Ok(summary)
    }

    /// Model, optimizer moments, config and progress in one safetensors file.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut archive = self.model.to_archive()?;
        archive.tensors.extend(self.adam.state_tensors());
        let meta = &mut archive.metadata;
        meta.insert("train_config".into(), serde_json::to_string(&self.config)?);
        meta.insert("train_config_hash".into(), self.config.hash());
        meta.insert("train_state".into(), serde_json::to_string(&self.state)?);
        meta.insert("adam_step".into(), self.adam.step_count().to_string());
        write_tensors(path, &archive)
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`]. `images` must be the
    /// same pool the run started from.
    pub fn from_checkpoint(path: &Path, images: Vec<Sample>, device: &Device) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let archive = read_tensors(path, device)?;
        let meta = &archive.metadata;
        if meta.get("version").map(String::as_str) != Some(CHECKPOINT_VERSION) {
            return Err(bad("unsupported checkpoint version"));
        }
        let config: TrainConfig =
            serde_json::from_str(meta.get("train_config").ok_or_else(|| bad("no training config"))?)?;
        if meta.get("train_config_hash") != Some(&config.hash()) {
            return Err(bad("training config hash mismatch"));
        }
        let state: TrainState =
            serde_json::from_str(meta.get("train_state").ok_or_else(|| bad("no training state"))?)?;
        let step: u64 = meta
            .get("adam_step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("no optimizer step count"))?;
        let model = AutoEncoder::from_archive(&archive, path, device)?;
        let adam_tensors: BTreeMap<_, _> = archive
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("adam."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let adam = Adam::from_state(config.optimizer.clone(), step, &adam_tensors)?;
        Self::assemble(config, model, adam, state, images, device)
    }

    /// Trains until finished, writing `last.safetensors` every epoch and
    /// `best.safetensors` whenever the validation loss improves.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<Checkpoints> {
        let mut paths = Checkpoints::default();
        while !self.is_finished() {
            let summary = self.train_epoch()?;
            let improved = match summary.val_loss {
                Some(v) if self.state.best_val_loss.is_none_or(|b| v < b) => {
                    self.state.best_val_loss = Some(v);
                    true
                }
                _ => false,
            };
            let Some(dir) = checkpoint_dir else { continue };
            let last = dir.join("last.safetensors");
            self.save_checkpoint(&last)?;
            paths.last = Some(last);
            if self.config.keep_epoch_checkpoints {
                self.save_checkpoint(&dir.join(format!("epoch-{:04}.safetensors", summary.epoch)))?;
            }
            if improved {
                let best = dir.join("best.safetensors");
                self.save_checkpoint(&best)?;
                paths.best = Some(best);
            }
        }
        Ok(paths)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoints {
    pub last: Option<PathBuf>,
    pub best: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub model: AutoEncoder,
    pub state: TrainState,
    pub manifest: RunManifest,
}

/// Trains on every image of both modalities of `data`, writing checkpoints and
/// the run manifest into `out_dir` when given.
pub fn train_stage1(
    config: &TrainConfig,
    data: &PairedDataset,
    dataset_hash: Option<String>,
    out_dir: Option<&Path>,
    device: &Device,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(config.clone(), data.pooled_images(), device)?;
    finish_run(trainer, dataset_hash, out_dir)
}

/// Continues a run from a checkpoint written by [`Trainer::save_checkpoint`].
pub fn resume_stage1(
    checkpoint: &Path,
    data: &PairedDataset,
    dataset_hash: Option<String>,
    out_dir: Option<&Path>,
    device: &Device,
) -> Result<TrainOutcome> {
    let trainer = Trainer::from_checkpoint(checkpoint, data.pooled_images(), device)?;
    let mut outcome = finish_run(trainer, dataset_hash, out_dir)?;
    outcome
        .manifest
        .notes
        .insert("resumed_from".into(), checkpoint.display().to_string());
    if let Some(dir) = out_dir {
        outcome.manifest.save(&dir.join("train_manifest.json"))?;
    }
    Ok(outcome)
}

fn finish_run(mut trainer: Trainer, dataset_hash: Option<String>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let checkpoints = trainer.run(out_dir)?;
    let config = trainer.config().clone();
    let mut manifest = RunManifest::new("train", config.seed, serde_json::to_value(&config)?, config.hash());
    manifest.dataset_manifest_hash = dataset_hash;
    manifest.checkpoint_path = checkpoints.last;
    manifest.best_checkpoint_path = checkpoints.best;
    manifest.set_extractor(trainer.extractor_pretrained());
    manifest.timings.insert("train_seconds".into(), started.elapsed().as_secs_f64());
    manifest.notes.insert("parameters".into(), trainer.model().param_count().to_string());
    manifest.notes.insert("steps".into(), trainer.state().global_step.to_string());
    if let Some(dir) = out_dir {
        manifest.save(&dir.join("train_manifest.json"))?;
        let history = dir.join("history.json");
        std::fs::write(&history, serde_json::to_string_pretty(trainer.state())?)
            .map_err(|e| Error::io(&history, e))?;
    }
    let state = trainer.state().clone();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        state,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossConfig;
    use crate::network::ModelConfig;

    fn tiny_config() -> TrainConfig {
        let mut model = ModelConfig::compact();
        model.encoder.shallow_channels = 4;
        model.encoder.branch_channels = 4;
        model.encoder.pyramid_channels = 4;
        model.encoder.latent_channels = 4;
        model.decoder.hidden_channels = [4, 4];
        TrainConfig {
            epochs: 3,
            initial_lr: 1e-3,
            final_lr: 1e-4,
            batch_size: 2,
            model,
            loss: LossConfig {
                perceptual_layers: vec!["relu1_1".into()],
                ..LossConfig::default()
            },
            validation_fraction: 0.2,
            ..TrainConfig::harvard()
        }
    }

    fn images(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let img = GrayImage::from_fn(16, 16, |y, x| {
                    (0.5 + 0.4 * ((x as f32 * 0.3 + i as f32).sin() * (y as f32 * 0.2).cos())).clamp(0.0, 1.0)
                })
                .unwrap();
                (format!("img{i}"), img)
            })
            .collect()
    }

    #[test]
    fn validation_split_is_disjoint() {
        let t = Trainer::new(tiny_config(), images(5), &Device::Cpu).unwrap();
        assert_eq!(t.validation_ids().len(), 1);
        assert_eq!(t.train_ids().len(), 4);
        assert!(t.validation_ids().iter().all(|v| !t.train_ids().contains(v)));
    }

    #[test]
    fn loss_decreases_and_history_is_recorded() {
        let mut cfg = tiny_config();
        cfg.validation_fraction = 0.0;
        cfg.epochs = 6;
        let mut t = Trainer::new(cfg, images(4), &Device::Cpu).unwrap();
        t.run(None).unwrap();
        let h = &t.state().history;
        assert_eq!(h.len(), 12);
        assert!(h.last().unwrap().loss < h[0].loss);
        assert!(t.train_epoch().is_err());
    }

    #[test]
    fn max_steps_cuts_training() {
        let mut cfg = tiny_config();
        cfg.max_steps = Some(3);
        let mut t = Trainer::new(cfg, images(5), &Device::Cpu).unwrap();
        t.run(None).unwrap();
        assert_eq!(t.state().global_step, 3);
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let mut imgs = images(3);
        imgs.push(("odd".into(), GrayImage::filled(32, 16, 0.5).unwrap()));
        assert!(matches!(Trainer::new(tiny_config(), imgs, &Device::Cpu), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut cfg = tiny_config();
        cfg.validation_fraction = 0.0;
        let mut t = Trainer::new(cfg, images(2), &Device::Cpu).unwrap();
        let w = t.model.params().get("decoder.conv3.bias").unwrap();
        t.model.params().set("decoder.conv3.bias", &w.ones_like().unwrap().affine(0.0, f64::NAN).unwrap()).unwrap();
        match t.train_epoch() {
            Err(Error::NonFiniteLoss { batch_ids, epoch, .. }) => {
                assert_eq!(epoch, 0);
                assert_eq!(batch_ids.len(), 2);
            }
            other => panic!("expected a non-finite loss error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let mut full = Trainer::new(cfg.clone(), images(5), &Device::Cpu).unwrap();
        full.run(None).unwrap();

        let mut part = Trainer::new(cfg, images(5), &Device::Cpu).unwrap();
        part.train_epoch().unwrap();
        let ckpt = dir.path().join("mid.safetensors");
        part.save_checkpoint(&ckpt).unwrap();
        drop(part);
        let mut resumed = Trainer::from_checkpoint(&ckpt, images(5), &Device::Cpu).unwrap();
        assert_eq!(resumed.state().epochs_done, 1);
        resumed.run(None).unwrap();

        assert_eq!(resumed.state().history, full.state().history);
        let a = full.model().params().snapshot().unwrap();
        let b = resumed.model().params().snapshot().unwrap();
        for (k, t) in &a {
            let x = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y, "{k}");
        }
    }
}
