//! Evaluation metrics, aggregate reports, timing and plots.

pub mod plots;

use std::time::Instant;

use candle_core::{Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Sample, SampleSet};
use crate::error::{config_err, shape_err, Error, Result};
use crate::fpp::HeightMap;
use crate::losses::{ssim_per_sample, LossConfig, SsimMode};
use crate::network::Network;

/// Root mean squared error over the pixels where `mask` is set.
pub fn rmse(pred: &Array2<f32>, gt: &Array2<f32>, mask: &Array2<bool>) -> Result<f64> {
    if pred.dim() != gt.dim() || gt.dim() != mask.dim() {
        return Err(shape_err!(
            "prediction {:?}, ground truth {:?} and mask {:?} differ",
            pred.dim(),
            gt.dim(),
            mask.dim()
        ));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            let d = *p as f64 - *g as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidSample("RMSE over an empty mask".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// SSIM between two height fields in millimetres.
///
/// Pixels outside `mask` are zeroed in both fields and the dynamic range is
/// the dataset height scale; statistics are whole-image.
pub fn ssim_metric(pred: &Array2<f32>, gt: &Array2<f32>, mask: &Array2<bool>, height_scale_mm: f64) -> Result<f64> {
    if pred.dim() != gt.dim() || gt.dim() != mask.dim() {
        return Err(shape_err!("SSIM inputs differ in shape"));
    }
    let (h, w) = gt.dim();
    let to_tensor = |a: &Array2<f32>| {
        let v: Vec<f64> = a
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| if *m { *v as f64 } else { 0.0 })
            .collect();
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu)
    };
    let cfg = LossConfig {
        dynamic_range: height_scale_mm,
        ssim_mode: SsimMode::Global,
        ..Default::default()
    };
    let s = ssim_per_sample(&to_tensor(pred)?, &to_tensor(gt)?, &cfg)?;
    Ok(s.to_vec1::<f64>()?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(per_sample: Vec<f64>) -> Self {
        let mean = if per_sample.is_empty() {
            f64::NAN
        } else {
            per_sample.iter().sum::<f64>() / per_sample.len() as f64
        };
        Self { mean, per_sample }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_mm: MetricSummary,
    pub ssim: MetricSummary,
    pub n_samples: usize,
    pub sample_ids: Vec<String>,
    pub params: usize,
    /// Mean seconds per pattern over the evaluation forward passes.
    pub inference_seconds: f64,
    pub config_digest: String,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hex SHA-256 of the JSON form of any serialisable config.
pub fn config_digest<T: Serialize>(cfg: &T) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Evaluates an arbitrary predictor returning heights in millimetres.
pub fn evaluate_with<F>(set: &SampleSet, params: usize, config_digest: String, mut predict_mm: F) -> Result<EvalReport>
where
    F: FnMut(&Sample) -> Result<Array2<f32>>,
{
    if set.is_empty() {
        return Err(config_err!("cannot evaluate an empty split"));
    }
    let mut rmses = Vec::with_capacity(set.len());
    let mut ssims = Vec::with_capacity(set.len());
    let mut elapsed = 0.0;
    for sample in &set.samples {
        let start = Instant::now();
        let pred = predict_mm(sample)?;
        elapsed += start.elapsed().as_secs_f64();
        let HeightMap { values, mask } = &sample.height;
        rmses.push(rmse(&pred, values, mask)?);
        ssims.push(ssim_metric(&pred, values, mask, set.height_scale_mm)?);
    }
    Ok(EvalReport {
        rmse_mm: MetricSummary::from_values(rmses),
        ssim: MetricSummary::from_values(ssims),
        n_samples: set.len(),
        sample_ids: set.samples.iter().map(|s| s.id.clone()).collect(),
        params,
        inference_seconds: elapsed / set.len() as f64,
        config_digest,
    })
}

/// Network prediction de-normalised to millimetres.
pub fn predict_mm(net: &Network, fringe: &Array2<f32>, height_scale_mm: f64) -> Result<Array2<f32>> {
    Ok(net.predict(fringe)?.mapv(|v| (v as f64 * height_scale_mm) as f32))
}

/// Per-sample evaluation-mode forward passes over `set`.
pub fn evaluate(net: &Network, set: &SampleSet) -> Result<EvalReport> {
    if let Some((h, w)) = set.canvas() {
        if h % 16 != 0 || w % 16 != 0 {
            return Err(shape_err!("sample canvas {h}x{w} does not fit the network (needs multiples of 16)"));
        }
    }
    let digest = config_digest(net.config())?;
    let scale = set.height_scale_mm;
    evaluate_with(set, net.count_parameters(), digest, |s| predict_mm(net, &s.fringe, scale))
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds_per_pattern: f64,
    pub reps: usize,
    pub hardware: String,
}

pub fn hardware_description() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("cpu: {model}, {threads} thread(s)")
}

/// Median wall-clock seconds of `reps` single-pattern forward passes after
/// `warmup` discarded runs.
pub fn time_inference(net: &Network, sample: &Sample, warmup: usize, reps: usize) -> Result<Timing> {
    if reps == 0 {
        return Err(config_err!("reps must be at least 1"));
    }
    for _ in 0..warmup {
        net.predict(&sample.fringe)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        net.predict(&sample.fringe)?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(Timing {
        seconds_per_pattern: median(&times).unwrap_or(f64::NAN),
        reps,
        hardware: hardware_description(),
    })
}
