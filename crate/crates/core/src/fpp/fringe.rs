use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FringePattern, HeightMap};
use crate::error::{config_err, Result};

/// Cosine fringe forward model with a linear phase-to-height relation.
///
/// At the main carrier frequency a height `h` shifts the fringe phase by
/// `h / mm_per_radian`. At any other frequency the shift scales with the
/// frequency ratio, which is what makes two-frequency unwrapping consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FppConfig {
    /// Background intensity `A`.
    pub ambient: f64,
    /// Fringe amplitude `B`; `A + B <= 1`.
    pub modulation: f64,
    /// Carrier periods across the image width.
    pub fringe_periods: f64,
    pub phase_steps: usize,
    /// Height per radian of phase at the main carrier frequency.
    pub mm_per_radian: f64,
    /// Carrier periods of the auxiliary low-frequency set.
    pub low_freq_periods: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
    pub noise_seed: u64,
}

impl Default for FppConfig {
    fn default() -> Self {
        Self {
            ambient: 0.5,
            modulation: 0.4,
            fringe_periods: 32.0,
            phase_steps: 4,
            mm_per_radian: 2.0,
            low_freq_periods: 4.0,
            noise_sigma: 0.0,
            gamma: 1.0,
            noise_seed: 0,
        }
    }
}

impl FppConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ambient > 0.0 && self.ambient < 1.0) {
            return Err(config_err!("ambient {} outside (0, 1)", self.ambient));
        }
        if !(self.modulation > 0.0) {
            return Err(config_err!("modulation {} must be positive", self.modulation));
        }
        if self.ambient + self.modulation > 1.0 + 1e-12 {
            return Err(config_err!(
                "ambient + modulation = {} exceeds 1",
                self.ambient + self.modulation
            ));
        }
        if !(self.fringe_periods > 0.0) {
            return Err(config_err!("fringe_periods must be positive"));
        }
        if !(self.low_freq_periods > 0.0 && self.low_freq_periods < self.fringe_periods) {
            return Err(config_err!(
                "low_freq_periods {} must lie in (0, fringe_periods)",
                self.low_freq_periods
            ));
        }
        if self.phase_steps < 3 {
            return Err(config_err!("phase_steps must be at least 3"));
        }
        if !(self.mm_per_radian > 0.0) {
            return Err(config_err!("mm_per_radian must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(config_err!("noise_sigma must be nonnegative"));
        }
        if !(self.gamma > 0.0) {
            return Err(config_err!("gamma must be positive"));
        }
        Ok(())
    }

    /// Ratio between the main and the auxiliary carrier frequency.
    pub fn frequency_ratio(&self) -> f64 {
        self.fringe_periods / self.low_freq_periods
    }

    /// Checks that a scene with heights in `[0, height_range_mm]` keeps the
    /// low-frequency height phase inside `(-pi, pi)`, so it can be unwrapped
    /// against the reference plane without ambiguity.
    pub fn check_unwrap_budget(&self, height_range_mm: f64) -> Result<()> {
        let excursion = height_range_mm / self.mm_per_radian / self.frequency_ratio();
        if excursion >= PI {
            return Err(config_err!(
                "low-frequency height phase reaches {excursion:.3} rad; needs < pi"
            ));
        }
        Ok(())
    }

    /// Height-induced phase at a carrier of `periods` cycles per width.
    pub fn height_phase(&self, height_mm: f64, periods: f64) -> f64 {
        height_mm / self.mm_per_radian * (periods / self.fringe_periods)
    }
}

/// Renders a fringe image of `height`:
/// `I = A + B cos(2 pi periods x / W + phi_h + shift)`, then gamma,
/// additive Gaussian noise and clipping to `[0, 1]`.
pub fn render_fringe(
    height: &HeightMap,
    cfg: &FppConfig,
    shift: f64,
    periods: f64,
) -> Result<FringePattern> {
    cfg.validate()?;
    if !(periods > 0.0) {
        return Err(config_err!("periods must be positive"));
    }
    let (rows, cols) = height.dim();
    let carrier = 2.0 * PI * periods / cols as f64;
    let mut out = Array2::<f64>::zeros((rows, cols));
    for ((y, x), v) in out.indexed_iter_mut() {
        let phase = carrier * x as f64 + cfg.height_phase(height.values[(y, x)] as f64, periods) + shift;
        *v = cfg.ambient + cfg.modulation * phase.cos();
    }
    if cfg.gamma != 1.0 {
        out.mapv_inplace(|v| v.max(0.0).powf(cfg.gamma));
    }
    if cfg.noise_sigma > 0.0 {
        let seed = cfg.noise_seed
            ^ shift.to_bits().rotate_left(17)
            ^ periods.to_bits().rotate_left(41);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| config_err!("{e}"))?;
        out.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(FringePattern::new(out))
}

/// Renders the uniform N-step set with shifts `2 pi k / N`, `k = 0..N-1`.
pub fn render_phase_shifted_set(
    height: &HeightMap,
    cfg: &FppConfig,
    periods: f64,
) -> Result<Vec<FringePattern>> {
    let n = cfg.phase_steps;
    (0..n)
        .map(|k| {
            let shift = 2.0 * PI * k as f64 / n as f64;
            let mut p = render_fringe(height, cfg, shift, periods)?;
            p.phase_shift_index = Some(k);
            Ok(p)
        })
        .collect()
}
