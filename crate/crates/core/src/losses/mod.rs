//! Compound training loss: chunked L2 with rank-ordered patch weights plus
//! an SSIM term, `chunked_l2 + alpha * (1 - SSIM)`.
//!
//! All functions take `(B, C, H, W)` tensors and return scalar tensors that
//! support backpropagation. Each sample in a batch is ranked independently
//! and the results are averaged.

mod ssim;

pub use ssim::{gaussian_window, ssim, ssim_loss, ssim_per_sample, SsimStats};

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// One set of statistics over the whole image.
    Global,
    /// Gaussian-weighted local windows, averaged.
    Windowed,
}

/// When patch ranks are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankUpdate {
    /// On every forward pass.
    PerPass,
    /// Once per epoch, from the losses seen during the previous epoch.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    /// Patch grid `(rows, cols)`.
    pub grid: (usize, usize),
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the compared values.
    pub dynamic_range: f64,
    pub ssim_mode: SsimMode,
    pub window_size: usize,
    pub window_sigma: f64,
    pub rank_update: RankUpdate,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            grid: (4, 4),
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            ssim_mode: SsimMode::Global,
            window_size: 11,
            window_sigma: 1.5,
            rank_update: RankUpdate::PerPass,
        }
    }
}

impl LossConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dynamic_range > 0.0) {
            return Err(config_err!("dynamic range L must be positive"));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(config_err!("k1 and k2 must be non-zero"));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(config_err!("patch grid {:?} is empty", self.grid));
        }
        if self.ssim_mode == SsimMode::Windowed && (self.window_size % 2 == 0 || self.window_sigma <= 0.0) {
            return Err(config_err!("SSIM window must have odd size and positive sigma"));
        }
        Ok(())
    }

    pub fn check_tiling(&self, rows: usize, cols: usize) -> Result<()> {
        let (gr, gc) = self.grid;
        if gr == 0 || gc == 0 || rows % gr != 0 || cols % gc != 0 {
            return Err(shape_err!("{rows}x{cols} does not tile evenly into a {gr}x{gc} patch grid"));
        }
        Ok(())
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(shape_err!("shapes {:?} and {:?} differ", a.dims(), b.dims()));
    }
    let dims = a.dims4()?;
    if a.elem_count() == 0 {
        return Err(shape_err!("empty tensors"));
    }
    Ok(dims)
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(shape_err!("shapes {:?} and {:?} differ", pred.dims(), gt.dims()));
    }
    if pred.elem_count() == 0 {
        return Err(shape_err!("empty tensors"));
    }
    Ok((pred - gt)?.sqr()?.mean_all()?)
}

/// Rank weights `w_i = 0.2 i - 0.1`, `i = 1..=n`, for patches sorted by
/// ascending loss.
pub fn patch_weights(n_patches: usize) -> Result<Vec<f64>> {
    if n_patches < 1 {
        return Err(config_err!("need at least one patch"));
    }
    // (2i - 1) / 10 is the same value, rounded once instead of twice.
    Ok((1..=n_patches).map(|i| (2 * i - 1) as f64 / 10.0).collect())
}

/// Per-patch MSE, shape `(B, rows * cols)`, patches in row-major grid order.
pub fn patch_losses(pred: &Tensor, gt: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
    let (b, c, h, w) = check_pair(pred, gt)?;
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || h % gr != 0 || w % gc != 0 {
        return Err(shape_err!("{h}x{w} does not tile evenly into a {gr}x{gc} patch grid"));
    }
    let sq = (pred - gt)?.sqr()?;
    // (B, C, gr, ph, gc, pw) -> (B, gr, gc, C, ph, pw)
    let sq = sq
        .reshape((b, c, gr, h / gr, gc, w / gc))?
        .permute((0, 2, 4, 1, 3, 5))?
        .reshape((b, gr * gc, c * (h / gr) * (w / gc)))?;
    Ok(sq.mean(D::Minus1)?)
}

/// Patch indices sorted by ascending loss; ties keep patch-index order.
pub fn rank_order(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    order
}

/// Chunked L2 with caller-supplied rank orders (one per sample, each listing
/// patch indices from lowest to highest loss), or ranks from the current
/// losses when `orders` is `None`.
///
/// Returns the loss and the rank orders of the current pass. Weights are
/// constants of the backward pass.
pub fn chunked_l2_ranked(
    pred: &Tensor,
    gt: &Tensor,
    cfg: &LossConfig,
    orders: Option<&[Vec<usize>]>,
) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let losses = patch_losses(pred, gt, cfg.grid)?;
    let (b, n) = losses.dims2()?;
    let weights = patch_weights(n)?;
    let values = losses.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let current: Vec<Vec<usize>> = values.iter().map(|row| rank_order(row)).collect();
    let used = match orders {
        Some(o) => {
            if o.len() != b || o.iter().any(|r| r.len() != n) {
                return Err(shape_err!("rank orders do not match {b} samples x {n} patches"));
            }
            o
        }
        None => &current[..],
    };
    let mut w = vec![0f64; b * n];
    for (s, order) in used.iter().enumerate() {
        for (rank, &patch) in order.iter().enumerate() {
            w[s * n + patch] = weights[rank];
        }
    }
    let w = Tensor::from_vec(w, (b, n), losses.device())?.to_dtype(losses.dtype())?;
    let per_sample = (losses * w)?.sum(1)?.affine(1.0 / n as f64, 0.0)?;
    Ok((per_sample.mean_all()?, current))
}

/// `sum_i w_i L2_(i) / n` over patches sorted by ascending loss.
pub fn chunked_l2(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    Ok(chunked_l2_ranked(pred, gt, cfg, None)?.0)
}

/// `chunked_l2 + alpha * ssim_loss`.
pub fn fusion_loss(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    fusion_loss_ranked(pred, gt, cfg, None).map(|(l, _)| l)
}

pub fn fusion_loss_ranked(
    pred: &Tensor,
    gt: &Tensor,
    cfg: &LossConfig,
    orders: Option<&[Vec<usize>]>,
) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let (chunked, ranks) = chunked_l2_ranked(pred, gt, cfg, orders)?;
    if cfg.alpha == 0.0 {
        return Ok((chunked, ranks));
    }
    let structural = ssim_loss(pred, gt, cfg)?;
    Ok(((chunked + structural.affine(cfg.alpha, 0.0)?)?, ranks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64], shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = t(&[1.0, 2.0], (1, 1, 1, 2));
        let b = t(&[3.0, 2.0], (1, 1, 1, 2));
        assert_eq!(mse(&a, &b).unwrap().to_scalar::<f64>().unwrap(), 2.0);
        assert_eq!(mse(&a, &a).unwrap().to_scalar::<f64>().unwrap(), 0.0);
        let c = t(&[1.0, 2.0, 3.0], (1, 1, 1, 3));
        assert!(mse(&a, &c).is_err());
    }

    #[test]
    fn weights_follow_rank_formula() {
        let w = patch_weights(16).unwrap();
        assert!((w[0] - 0.1).abs() < 1e-15);
        assert!((w[15] - 3.1).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 25.6).abs() < 1e-12);
        assert!(patch_weights(0).is_err());
    }

    #[test]
    fn uniform_error_ties() {
        let cfg = LossConfig::default();
        let gt = Tensor::zeros((2, 1, 8, 8), DType::F64, &Device::Cpu).unwrap();
        let pred = (gt.clone() + 0.3).unwrap();
        let v = chunked_l2(&pred, &gt, &cfg).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 1.6 * 0.09).abs() < 1e-12);
    }

    #[test]
    fn indivisible_grid_is_a_shape_error() {
        let cfg = LossConfig::default();
        let a = Tensor::zeros((1, 1, 6, 8), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(chunked_l2(&a, &a, &cfg), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn patch_layout_is_row_major() {
        // 4x4 image, 2x2 grid; error only in the top-right patch.
        let mut e = vec![0.0; 16];
        e[2] = 2.0;
        let pred = t(&e, (1, 1, 4, 4));
        let gt = Tensor::zeros((1, 1, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let l = patch_losses(&pred, &gt, (2, 2)).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(l[0], vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_break_by_patch_index() {
        assert_eq!(rank_order(&[1.0, 0.0, 1.0, 0.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn frozen_orders_change_the_weighting() {
        let cfg = LossConfig { grid: (1, 2), ..Default::default() };
        let pred = t(&[1.0, 2.0], (1, 1, 1, 2));
        let gt = Tensor::zeros((1, 1, 1, 2), DType::F64, &Device::Cpu).unwrap();
        let (live, ranks) = chunked_l2_ranked(&pred, &gt, &cfg, None).unwrap();
        assert_eq!(ranks, vec![vec![0, 1]]);
        // 0.1 * 1 + 0.3 * 4 over two patches.
        assert!((live.to_scalar::<f64>().unwrap() - 0.65).abs() < 1e-12);
        let frozen = vec![vec![1, 0]];
        let (old, _) = chunked_l2_ranked(&pred, &gt, &cfg, Some(&frozen)).unwrap();
        assert!((old.to_scalar::<f64>().unwrap() - 0.35).abs() < 1e-12);
    }
}
