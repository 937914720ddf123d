//! Training loop, validation and checkpoints.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, SampleSet};
use crate::error::{config_err, Error, Result};
use crate::losses::{chunked_l2_ranked, mse, ssim_loss, LossConfig, RankUpdate};
use crate::metrics::{evaluate, EvalReport};
use crate::network::{Network, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub loss: LossConfig,
    pub network: NetworkConfig,
    /// Optimise the chunked L2 term alone for this many steps before the
    /// SSIM term joins at full weight; 0 uses the compound loss throughout.
    ///
    /// SSIM scores a sign-flipped prediction almost as well as the target
    /// itself, so a run that starts on the SSIM term can settle on the
    /// negated height map. An L2-only start fixes the sign first. The
    /// recorded step losses are the full compound loss either way.
    pub alpha_warmup_steps: usize,
    /// Also keep `epoch_NNNN` checkpoints every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub device_hint: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 1e-4,
            adam_betas: (0.9, 0.999),
            seed: 0,
            loss: LossConfig::default(),
            network: NetworkConfig::default(),
            alpha_warmup_steps: 0,
            checkpoint_every: 0,
            device_hint: "cpu".to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning rate {} must be positive", self.learning_rate));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(config_err!("Adam betas must lie in [0, 1)"));
        }
        if self.device_hint != "cpu" {
            log::warn!("device hint `{}` ignored; training runs on the CPU", self.device_hint);
        }
        self.network.validate()?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_rmse_mm: f64,
    pub train_ssim: f64,
    pub val_rmse_mm: f64,
    pub val_ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) with the lowest validation RMSE.
    pub best_epoch: Option<usize>,
    /// Loss of every optimisation step, in order.
    pub step_losses: Vec<f64>,
}

impl History {
    fn push(&mut self, record: EpochRecord) {
        let better = match self.best_epoch {
            None => true,
            Some(b) => record.val_rmse_mm < self.records[b - 1].val_rmse_mm,
        };
        if better {
            self.best_epoch = Some(record.epoch);
        }
        self.records.push(record);
    }

    /// Trailing moving average of the step losses over `window` steps.
    pub fn smoothed_losses(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.step_losses
            .windows(w.min(self.step_losses.len()).max(1))
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

/// JSON sidecar stored next to every checkpoint's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub height_scale_mm: f64,
    pub canvas: (usize, usize),
    pub history: History,
}

pub struct TrainOutcome {
    /// The network after the last epoch.
    pub network: Network,
    pub history: History,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

/// Path of the JSON sidecar for a weights file.
pub fn meta_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

/// Writes weights and sidecar, each through a temporary file and a rename.
pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, weights: &Path) -> Result<()> {
    if let Some(dir) = weights.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = weights.with_extension("safetensors.tmp");
    net.save_weights(&tmp)?;
    fs::rename(&tmp, weights).map_err(|e| Error::io(weights, e))?;
    let meta_file = meta_path(weights);
    let tmp = meta_file.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &meta_file).map_err(|e| Error::io(&meta_file, e))
}

pub fn load_checkpoint(weights: &Path) -> Result<(Network, CheckpointMeta)> {
    let meta_file = meta_path(weights);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut net = Network::new(&meta.config.network, meta.config.seed)?;
    net.load_weights(weights)?;
    Ok((net, meta))
}

/// Stacks fringes and normalised heights of `batch` into `(B, 1, H, W)`.
pub fn batch_tensors(batch: &[&Sample], height_scale_mm: f64, device: &Device) -> Result<(Tensor, Tensor)> {
    let (h, w) = batch
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| config_err!("empty batch"))?;
    let mut x = Vec::with_capacity(batch.len() * h * w);
    let mut y = Vec::with_capacity(batch.len() * h * w);
    let inv = 1.0 / height_scale_mm;
    for s in batch {
        x.extend(s.fringe.iter().copied());
        y.extend(s.height.values.iter().map(|v| (*v as f64 * inv) as f32));
    }
    let shape = (batch.len(), 1, h, w);
    Ok((Tensor::from_vec(x, shape, device)?, Tensor::from_vec(y, shape, device)?))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Evaluation-mode RMSE (mm) and SSIM on `set`; the weights are untouched.
pub fn validate(net: &Network, set: &SampleSet) -> Result<(f64, f64)> {
    let report = evaluate(net, set)?;
    Ok((report.rmse_mm.mean, report.ssim.mean))
}

fn epoch_metrics(net: &Network, set: &SampleSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let EvalReport { rmse_mm, ssim, .. } = evaluate(net, set)?;
    Ok((rmse_mm.mean, ssim.mean))
}

/// Trains a fresh network on `train_set`, recording per-epoch metrics on
/// both sets and writing `best` and `last` checkpoints under `out_dir`.
///
/// Variant D optimises the compound loss, the other variants plain MSE.
/// With an empty validation set the best checkpoint follows train RMSE.
pub fn train(cfg: &TrainConfig, train_set: &SampleSet, val_set: &SampleSet, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(config_err!("the train split is empty"));
    }
    let canvas = train_set.canvas().unwrap_or((0, 0));
    if canvas.0 % 16 != 0 || canvas.1 % 16 != 0 {
        return Err(config_err!("canvas {canvas:?} is not divisible by 16"));
    }
    if val_set.canvas().is_some_and(|c| c != canvas) {
        return Err(config_err!("validation canvas differs from {canvas:?}"));
    }
    let fused = cfg.network.variant.uses_fusion_loss();
    if fused {
        cfg.loss.check_tiling(canvas.0, canvas.1)?;
    }
    let scale = train_set.height_scale_mm;

    let net = Network::new(&cfg.network, cfg.seed)?;
    let vars = net.trainable_vars().into_iter().map(|(_, v)| v).collect();
    let params = ParamsAdamW {
        lr: cfg.learning_rate,
        beta1: cfg.adam_betas.0,
        beta2: cfg.adam_betas.1,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt = AdamW::new(vars, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut frozen_orders: HashMap<String, Vec<usize>> = HashMap::new();
    let best = out_dir.join("best.safetensors");
    let last = out_dir.join("last.safetensors");
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut next_orders = HashMap::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let (x, y) = batch_tensors(&batch, scale, net.device())?;
            let pred = net.forward_t(&x, true)?;
            // `loss` is what the optimiser steps on; `value` is the
            // configured objective, which the history records throughout.
            let (loss, value) = if fused {
                let frozen: Option<Vec<Vec<usize>>> = match cfg.loss.rank_update {
                    RankUpdate::PerPass => None,
                    RankUpdate::PerEpoch => batch.iter().map(|s| frozen_orders.get(&s.id).cloned()).collect(),
                };
                let (chunked, current) = chunked_l2_ranked(&pred, &y, &cfg.loss, frozen.as_deref())?;
                for (s, o) in batch.iter().zip(current) {
                    next_orders.insert(s.id.clone(), o);
                }
                let structural = ssim_loss(&pred, &y, &cfg.loss)?;
                let full = (&chunked + structural.affine(cfg.loss.alpha, 0.0)?)?;
                let value = scalar(&full)?;
                if step < cfg.alpha_warmup_steps {
                    (chunked, value)
                } else {
                    (full, value)
                }
            } else {
                let loss = mse(&pred, &y)?;
                let value = scalar(&loss)?;
                (loss, value)
            };
            if !value.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: ids.join(", "),
                    value,
                });
            }
            opt.backward_step(&loss)?;
            step += 1;
            history.step_losses.push(value);
            epoch_loss += value * batch.len() as f64;
        }
        frozen_orders = next_orders;

        let (train_rmse, train_ssim) = epoch_metrics(&net, train_set)?;
        let (val_rmse, val_ssim) = if val_set.is_empty() {
            (train_rmse, train_ssim)
        } else {
            epoch_metrics(&net, val_set)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            train_rmse_mm: train_rmse,
            train_ssim,
            val_rmse_mm: val_rmse,
            val_ssim,
        });
        log::info!(
            "epoch {epoch}/{}: loss {:.5}, train rmse {train_rmse:.4} mm, val rmse {val_rmse:.4} mm, val ssim {val_ssim:.4}",
            cfg.epochs,
            epoch_loss / train_set.len() as f64
        );
        let meta = CheckpointMeta {
            config: cfg.clone(),
            epoch,
            height_scale_mm: scale,
            canvas,
            history: history.clone(),
        };
        if history.best_epoch == Some(epoch) {
            save_checkpoint(&net, &meta, &best)?;
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(&net, &meta, &out_dir.join(format!("epoch_{epoch:04}.safetensors")))?;
        }
        if epoch == cfg.epochs {
            save_checkpoint(&net, &meta, &last)?;
            fs::write(out_dir.join("history.json"), serde_json::to_string_pretty(&history)?)
                .map_err(|e| Error::io(out_dir.join("history.json"), e))?;
        }
    }
    Ok(TrainOutcome {
        network: net,
        history,
        best_checkpoint: best,
        last_checkpoint: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, val: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.0,
            train_rmse_mm: 0.0,
            train_ssim: 1.0,
            val_rmse_mm: val,
            val_ssim: 1.0,
        }
    }

    #[test]
    fn best_epoch_tracks_minimum() {
        let mut h = History::default();
        for (e, v) in [3.0, 1.0, 2.0, 1.0].iter().enumerate() {
            h.push(record(e + 1, *v));
        }
        assert_eq!(h.best_epoch, Some(2));
        assert_eq!(h.records.len(), 4);
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn smoothing_window() {
        let h = History {
            step_losses: vec![4.0, 2.0, 0.0, 2.0],
            ..Default::default()
        };
        assert_eq!(h.smoothed_losses(2), vec![3.0, 1.0, 1.0]);
    }
}
