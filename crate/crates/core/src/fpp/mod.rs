//! Synthetic fringe projection: scene generation, fringe rendering and a
//! phase-shifting (PSP) oracle that recovers height from multi-shot patterns.

mod fringe;
mod psp;
mod scene;

pub use fringe::{render_fringe, render_phase_shifted_set, FppConfig};
pub use psp::{
    measure_height, phase_to_height, psp_wrapped_phase, reference_phase,
    unwrap_against_reference, unwrap_two_frequency, wrap_phase, MODULATION_THRESHOLD,
};
pub use scene::{generate_height_map, Layout, SceneSpec};

use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

/// Surface heights in millimetres with a validity mask.
///
/// Masked-out pixels always carry the value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub values: Array2<f32>,
    pub mask: Array2<bool>,
}

impl HeightMap {
    pub const UNITS: &'static str = "mm";

    /// Builds a height map, zeroing masked-out pixels and rejecting non-finite
    /// values inside the mask.
    pub fn new(mut values: Array2<f32>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(shape_err!(
                "height values {:?} and mask {:?} differ",
                values.dim(),
                mask.dim()
            ));
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidSample(format!(
                    "non-finite height {v} inside the mask"
                )));
            }
        }
        Ok(Self { values, mask })
    }

    /// Flat zero surface, valid everywhere.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Array2::zeros((height, width)),
            mask: Array2::from_elem((height, width), true),
        }
    }

    /// Height field valid everywhere.
    pub fn from_values(values: Array2<f32>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(values, mask)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Checks that the map can serve as a training or evaluation sample.
    pub fn ensure_sample(&self) -> Result<()> {
        if self.valid_count() == 0 {
            return Err(Error::InvalidSample("mask covers no pixel".into()));
        }
        Ok(())
    }

    /// `(min, max)` over the masked pixels, `None` for an empty mask.
    pub fn masked_range(&self) -> Option<(f32, f32)> {
        self.values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Grayscale fringe intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FringePattern {
    pub intensities: Array2<f64>,
    /// Position inside an N-step phase-shifted set, if the pattern belongs to one.
    pub phase_shift_index: Option<usize>,
}

impl FringePattern {
    pub fn new(intensities: Array2<f64>) -> Self {
        Self {
            intensities,
            phase_shift_index: None,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.intensities.dim()
    }
}

/// Phase field in radians.
///
/// `valid` marks pixels whose fringe modulation was high enough to trust the
/// phase; invalid pixels carry the value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub values: Array2<f64>,
    pub wrapped: bool,
    pub valid: Array2<bool>,
}

impl PhaseMap {
    pub fn unwrapped(values: Array2<f64>) -> Self {
        let valid = Array2::from_elem(values.dim(), true);
        Self {
            values,
            wrapped: false,
            valid,
        }
    }

    /// Wraps every value into `(-pi, pi]`.
    pub fn wrapped_from(values: &Array2<f64>) -> Self {
        Self {
            values: values.mapv(wrap_phase),
            wrapped: true,
            valid: Array2::from_elem(values.dim(), true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}
