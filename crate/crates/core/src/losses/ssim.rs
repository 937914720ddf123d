use candle_core::{DType, Tensor, D};

use super::{check_pair, LossConfig, SsimMode};
use crate::error::{config_err, Result};

/// First and second moments entering the SSIM formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    /// Covariance of x and y.
    pub sigma_xy: f64,
}

impl SsimStats {
    /// Whole-image statistics of each sample in a `(B, C, H, W)` pair
    /// (population moments).
    pub fn global(x: &Tensor, y: &Tensor) -> Result<Vec<SsimStats>> {
        let (b, ..) = check_pair(x, y)?;
        let x = x.to_dtype(DType::F64)?.reshape((b, ()))?;
        let y = y.to_dtype(DType::F64)?.reshape((b, ()))?;
        let mu_x = x.mean_keepdim(1)?;
        let mu_y = y.mean_keepdim(1)?;
        let dx = x.broadcast_sub(&mu_x)?;
        let dy = y.broadcast_sub(&mu_y)?;
        let cols = [
            mu_x.squeeze(1)?,
            mu_y.squeeze(1)?,
            dx.sqr()?.mean(1)?,
            dy.sqr()?.mean(1)?,
            (dx * dy)?.mean(1)?,
        ];
        let cols: Vec<Vec<f64>> = cols.iter().map(|t| t.to_vec1()).collect::<candle_core::Result<_>>()?;
        Ok((0..b)
            .map(|i| SsimStats {
                mu_x: cols[0][i],
                mu_y: cols[1][i],
                sigma_x2: cols[2][i],
                sigma_y2: cols[3][i],
                sigma_xy: cols[4][i],
            })
            .collect())
    }

    pub fn index(&self, c1: f64, c2: f64) -> f64 {
        ((2.0 * self.mu_x * self.mu_y + c1) * (2.0 * self.sigma_xy + c2))
            / ((self.mu_x.powi(2) + self.mu_y.powi(2) + c1) * (self.sigma_x2 + self.sigma_y2 + c2))
    }
}

/// Normalised `size x size` Gaussian window, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn ssim_formula(
    mu_x: &Tensor,
    mu_y: &Tensor,
    var_x: &Tensor,
    var_y: &Tensor,
    cov: &Tensor,
    c1: f64,
    c2: f64,
) -> Result<Tensor> {
    let luminance_num = (mu_x * mu_y)?.affine(2.0, c1)?;
    let contrast_num = cov.affine(2.0, c2)?;
    let luminance_den = (mu_x.sqr()? + mu_y.sqr()?)?.affine(1.0, c1)?;
    let contrast_den = (var_x + var_y)?.affine(1.0, c2)?;
    Ok(((luminance_num * contrast_num)? / (luminance_den * contrast_den)?)?)
}

fn global_ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let b = x.dim(0)?;
    let x = x.reshape((b, ()))?;
    let y = y.reshape((b, ()))?;
    let mu_x = x.mean_keepdim(1)?;
    let mu_y = y.mean_keepdim(1)?;
    let dx = x.broadcast_sub(&mu_x)?;
    let dy = y.broadcast_sub(&mu_y)?;
    let var_x = dx.sqr()?.mean_keepdim(1)?;
    let var_y = dy.sqr()?.mean_keepdim(1)?;
    let cov = (dx * dy)?.mean_keepdim(1)?;
    Ok(ssim_formula(&mu_x, &mu_y, &var_x, &var_y, &cov, cfg.c1(), cfg.c2())?.squeeze(1)?)
}

/// Local statistics use the Gaussian window truncated at the image border
/// and renormalised, so every pixel owns one full-weight window.
fn windowed_ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let k = cfg.window_size;
    let pad = k / 2;
    let kernel = Tensor::from_vec(gaussian_window(k, cfg.window_sigma), (1, 1, k, k), x.device())?
        .to_dtype(x.dtype())?;
    let blur = |t: &Tensor| t.conv2d(&kernel, pad, 1, 1, 1);
    let ones = Tensor::ones((1, 1, h, w), x.dtype(), x.device())?;
    let norm = blur(&ones)?;
    let local_mean = |t: &Tensor| blur(t)?.broadcast_div(&norm);

    let x = x.reshape((b * c, 1, h, w))?;
    let y = y.reshape((b * c, 1, h, w))?;
    let mu_x = local_mean(&x)?;
    let mu_y = local_mean(&y)?;
    let var_x = (local_mean(&x.sqr()?)? - mu_x.sqr()?)?;
    let var_y = (local_mean(&y.sqr()?)? - mu_y.sqr()?)?;
    let cov = (local_mean(&(&x * &y)?)? - (&mu_x * &mu_y)?)?;
    let map = ssim_formula(&mu_x, &mu_y, &var_x, &var_y, &cov, cfg.c1(), cfg.c2())?;
    Ok(map.reshape((b, ()))?.mean(D::Minus1)?)
}

/// SSIM of each sample, shape `(B,)`.
pub fn ssim_per_sample(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_pair(x, y)?;
    if !(cfg.dynamic_range > 0.0) {
        return Err(config_err!("dynamic range L must be positive"));
    }
    match cfg.ssim_mode {
        SsimMode::Global => global_ssim(x, y, cfg),
        SsimMode::Windowed => {
            if cfg.window_size % 2 == 0 {
                return Err(config_err!("SSIM window size must be odd"));
            }
            windowed_ssim(x, y, cfg)
        }
    }
}

/// Batch-mean SSIM.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    Ok(ssim_per_sample(x, y, cfg)?.mean_all()?)
}

/// `1 - SSIM`.
pub fn ssim_loss(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    Ok(ssim(x, y, cfg)?.affine(-1.0, 1.0)?)
}
