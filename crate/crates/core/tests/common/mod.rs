//! Brute-force reference implementations shared by the integration tests.
//!
//! Everything here works on plain row-major `Vec<f64>` images with explicit
//! loops, so it shares no code path with the tensor implementations under test.

#![allow(dead_code)]

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()
}

pub fn tensor(v: &[f64], h: usize, w: usize) -> Tensor {
    Tensor::from_slice(v, (1, 1, h, w), &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

pub fn oracle_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// Per-patch MSEs in row-major grid order.
pub fn oracle_patch_losses(pred: &[f64], gt: &[f64], h: usize, w: usize, grid: (usize, usize)) -> Vec<f64> {
    let (ph, pw) = (h / grid.0, w / grid.1);
    let mut out = Vec::new();
    for gy in 0..grid.0 {
        for gx in 0..grid.1 {
            let mut s = 0.0;
            for y in gy * ph..(gy + 1) * ph {
                for x in gx * pw..(gx + 1) * pw {
                    let d = pred[y * w + x] - gt[y * w + x];
                    s += d * d;
                }
            }
            out.push(s / (ph * pw) as f64);
        }
    }
    out
}

/// Sorts ascending with an insertion sort, weights rank `i` (1-based) by
/// `0.2 i - 0.1` and divides by the patch count.
pub fn oracle_chunked_l2(pred: &[f64], gt: &[f64], h: usize, w: usize, grid: (usize, usize)) -> f64 {
    let mut losses = oracle_patch_losses(pred, gt, h, w, grid);
    for i in 1..losses.len() {
        let mut j = i;
        while j > 0 && losses[j - 1] > losses[j] {
            losses.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut total = 0.0;
    for (i, l) in losses.iter().enumerate() {
        total += (0.2 * (i + 1) as f64 - 0.1) * l;
    }
    total / losses.len() as f64
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn oracle_ssim_global(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    ssim_from_moments(mx, my, vx / n, vy / n, cxy / n, c1, c2)
}

/// Gaussian-weighted local SSIM averaged over all pixels; the window is
/// clipped at the border and its in-bounds weights renormalised.
pub fn oracle_ssim_windowed(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    size: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let r = (size / 2) as isize;
    let mut total = 0.0;
    for py in 0..h as isize {
        for px in 0..w as isize {
            let mut taps = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (py + dy, px + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let g = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                    taps.push((g, yy as usize * w + xx as usize));
                }
            }
            let norm: f64 = taps.iter().map(|t| t.0).sum();
            let (mut mx, mut my) = (0.0, 0.0);
            for &(g, i) in &taps {
                mx += g * x[i];
                my += g * y[i];
            }
            mx /= norm;
            my /= norm;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for &(g, i) in &taps {
                vx += g * (x[i] - mx) * (x[i] - mx);
                vy += g * (y[i] - my) * (y[i] - my);
                cxy += g * (x[i] - mx) * (y[i] - my);
            }
            total += ssim_from_moments(mx, my, vx / norm, vy / norm, cxy / norm, c1, c2);
        }
    }
    total / (h * w) as f64
}

/// Masked RMSE straight from its definition.
pub fn oracle_rmse(pred: &[f64], gt: &[f64], mask: &[bool]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            s += (gt[i] - pred[i]).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

/// 4-connected components of `mask`.
pub fn connected_components(mask: &ndarray::Array2<bool>) -> usize {
    let (h, w) = mask.dim();
    let mut seen = vec![false; h * w];
    let mut count = 0;
    for start in 0..h * w {
        if !mask[(start / w, start % w)] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut push = |ny: usize, nx: usize| {
                let q = ny * w + nx;
                if mask[(ny, nx)] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(y - 1, x);
            }
            if y + 1 < h {
                push(y + 1, x);
            }
            if x > 0 {
                push(y, x - 1);
            }
            if x + 1 < w {
                push(y, x + 1);
            }
        }
    }
    count
}
