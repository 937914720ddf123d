use std::f64::consts::PI;

use ndarray::{Array2, Zip};

use super::{render_phase_shifted_set, FppConfig, FringePattern, HeightMap, PhaseMap};
use crate::error::{config_err, shape_err, Error, Result};

/// Pixels whose fitted fringe amplitude falls below this are marked invalid.
pub const MODULATION_THRESHOLD: f64 = 0.01;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi - 2.0 * PI * (phi / (2.0 * PI)).round();
    if w <= -PI {
        w + 2.0 * PI
    } else if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// N-step phase-shifting estimate of the wrapped fringe phase.
///
/// The patterns must carry the uniform shifts `2 pi k / N` in order. With
/// `I_k = A + B cos(phi + 2 pi k / N)` the estimator is
/// `phi = atan2(-sum I_k sin(2 pi k / N), sum I_k cos(2 pi k / N))`.
/// Pixels with modulation `(2/N) sqrt(S^2 + C^2)` below
/// [`MODULATION_THRESHOLD`] are marked invalid and set to 0.
pub fn psp_wrapped_phase(patterns: &[FringePattern]) -> Result<PhaseMap> {
    let n = patterns.len();
    if n < 3 {
        return Err(config_err!("phase shifting needs at least 3 patterns, got {n}"));
    }
    let dim = patterns[0].dim();
    if let Some(p) = patterns.iter().find(|p| p.dim() != dim) {
        return Err(shape_err!("pattern {:?} differs from {:?}", p.dim(), dim));
    }
    let mut sin_sum = Array2::<f64>::zeros(dim);
    let mut cos_sum = Array2::<f64>::zeros(dim);
    for (k, p) in patterns.iter().enumerate() {
        let delta = 2.0 * PI * k as f64 / n as f64;
        let (s, c) = delta.sin_cos();
        Zip::from(&mut sin_sum)
            .and(&mut cos_sum)
            .and(&p.intensities)
            .for_each(|ss, cs, &i| {
                *ss += i * s;
                *cs += i * c;
            });
    }
    let mut values = Array2::<f64>::zeros(dim);
    let mut valid = Array2::from_elem(dim, false);
    Zip::from(&mut values)
        .and(&mut valid)
        .and(&sin_sum)
        .and(&cos_sum)
        .for_each(|v, ok, &s, &c| {
            let modulation = 2.0 / n as f64 * s.hypot(c);
            if modulation >= MODULATION_THRESHOLD {
                *v = wrap_phase((-s).atan2(c));
                *ok = true;
            }
        });
    Ok(PhaseMap {
        values,
        wrapped: true,
        valid,
    })
}

/// Two-frequency temporal unwrapping:
/// `phi_high = wrapped_high + 2 pi round((ratio phi_low - wrapped_high) / 2 pi)`.
///
/// `low` may be unwrapped, or wrapped provided its excursion never left
/// `(-pi, pi]`.
pub fn unwrap_two_frequency(high: &PhaseMap, low: &PhaseMap, ratio: f64) -> Result<PhaseMap> {
    if !(ratio > 1.0) {
        return Err(config_err!("frequency ratio {ratio} must exceed 1"));
    }
    if !high.wrapped {
        return Err(Error::State("high-frequency phase is already unwrapped".into()));
    }
    if high.dim() != low.dim() {
        return Err(shape_err!("phase maps {:?} and {:?} differ", high.dim(), low.dim()));
    }
    let mut values = high.values.clone();
    Zip::from(&mut values)
        .and(&low.values)
        .for_each(|h, &l| {
            let order = ((ratio * l - *h) / (2.0 * PI)).round();
            *h += 2.0 * PI * order;
        });
    let valid = Zip::from(&high.valid)
        .and(&low.valid)
        .map_collect(|&a, &b| a && b);
    values.zip_mut_with(&valid, |v, &ok| {
        if !ok {
            *v = 0.0
        }
    });
    Ok(PhaseMap {
        values,
        wrapped: false,
        valid,
    })
}

/// Unwraps `wrapped` against a known unwrapped reference phase, valid while
/// the deviation from the reference stays inside `(-pi, pi)`.
pub fn unwrap_against_reference(wrapped: &PhaseMap, reference: &PhaseMap) -> Result<PhaseMap> {
    if !wrapped.wrapped || reference.wrapped {
        return Err(Error::State(
            "expected a wrapped phase and an unwrapped reference".into(),
        ));
    }
    if wrapped.dim() != reference.dim() {
        return Err(shape_err!(
            "phase maps {:?} and {:?} differ",
            wrapped.dim(),
            reference.dim()
        ));
    }
    let values = Zip::from(&wrapped.values)
        .and(&reference.values)
        .and(&wrapped.valid)
        .map_collect(|&w, &r, &ok| if ok { r + wrap_phase(w - r) } else { 0.0 });
    Ok(PhaseMap {
        values,
        wrapped: false,
        valid: wrapped.valid.clone(),
    })
}

/// Unwrapped carrier phase of the flat reference plane.
pub fn reference_phase(periods: f64, rows: usize, cols: usize) -> PhaseMap {
    let carrier = 2.0 * PI * periods / cols as f64;
    PhaseMap::unwrapped(Array2::from_shape_fn((rows, cols), |(_, x)| carrier * x as f64))
}

/// Linear phase-to-height map `h = K (phi - phi_ref)`.
pub fn phase_to_height(phase: &PhaseMap, reference: &PhaseMap, cfg: &FppConfig) -> Result<HeightMap> {
    if phase.wrapped || reference.wrapped {
        return Err(Error::State("phase_to_height needs unwrapped phase maps".into()));
    }
    if phase.dim() != reference.dim() {
        return Err(shape_err!(
            "phase maps {:?} and {:?} differ",
            phase.dim(),
            reference.dim()
        ));
    }
    let mask = Zip::from(&phase.valid)
        .and(&reference.valid)
        .map_collect(|&a, &b| a && b);
    let values = Zip::from(&phase.values)
        .and(&reference.values)
        .map_collect(|&p, &r| (cfg.mm_per_radian * (p - r)) as f32);
    HeightMap::new(values, mask)
}

/// Full synthetic PSP measurement of `height`: render N-step sets at both
/// carrier frequencies, estimate wrapped phases, unwrap the low frequency
/// against the reference plane, unwrap the high frequency temporally and map
/// phase to height.
pub fn measure_height(height: &HeightMap, cfg: &FppConfig) -> Result<HeightMap> {
    cfg.validate()?;
    let (rows, cols) = height.dim();
    let high = psp_wrapped_phase(&render_phase_shifted_set(height, cfg, cfg.fringe_periods)?)?;
    let low = psp_wrapped_phase(&render_phase_shifted_set(height, cfg, cfg.low_freq_periods)?)?;
    let low_ref = reference_phase(cfg.low_freq_periods, rows, cols);
    let low = unwrap_against_reference(&low, &low_ref)?;
    let high = unwrap_two_frequency(&high, &low, cfg.frequency_ratio())?;
    let high_ref = reference_phase(cfg.fringe_periods, rows, cols);
    phase_to_height(&high, &high_ref, cfg)
}
