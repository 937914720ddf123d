use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HeightMap;
use crate::error::{config_err, Result};

/// Spatial arrangement of the objects in a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One object.
    Single,
    /// Objects with disjoint footprints.
    Separated,
    /// Objects whose footprints intersect; heights combine by maximum.
    Overlapping,
}

/// Parameters of a synthetic scene of sculpture-like objects on a flat
/// reference plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub object_count: usize,
    /// Upper bound on the peak-to-peak surface height.
    pub height_range_mm: f64,
    /// Inclusive range for the number of Gaussian bumps per object.
    pub blob_count_range: (usize, usize),
    /// Amplitude of the fine surface texture.
    pub detail_amplitude_mm: f64,
    /// `(rows, cols)` in pixels.
    pub canvas: (usize, usize),
    pub layout: Layout,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            object_count: 1,
            height_range_mm: 20.0,
            blob_count_range: (3, 8),
            detail_amplitude_mm: 0.2,
            canvas: (352, 640),
            layout: Layout::Single,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(config_err!(
                "canvas {h}x{w} must be non-empty and divisible by 16"
            ));
        }
        if self.object_count < 1 {
            return Err(config_err!("object_count must be at least 1"));
        }
        match self.layout {
            Layout::Single if self.object_count != 1 => {
                return Err(config_err!(
                    "single layout takes exactly one object, got {}",
                    self.object_count
                ))
            }
            Layout::Separated | Layout::Overlapping if self.object_count < 2 => {
                return Err(config_err!(
                    "{:?} layout needs at least two objects",
                    self.layout
                ))
            }
            _ => {}
        }
        if !(self.height_range_mm > 0.0 && self.height_range_mm.is_finite()) {
            return Err(config_err!("height_range_mm must be positive"));
        }
        if !(self.detail_amplitude_mm >= 0.0) {
            return Err(config_err!("detail_amplitude_mm must be nonnegative"));
        }
        let (lo, hi) = self.blob_count_range;
        if lo > hi {
            return Err(config_err!("blob_count_range ({lo}, {hi}) is empty"));
        }
        if self.layout == Layout::Separated && w / self.object_count < 16 {
            return Err(config_err!(
                "canvas width {w} too small for {} separated objects",
                self.object_count
            ));
        }
        Ok(())
    }
}

struct Blob {
    u: f64,
    v: f64,
    sigma: f64,
    amp: f64,
}

struct Wave {
    fu: f64,
    fv: f64,
    phase: f64,
}

/// One sculpture-like object with a superelliptic footprint.
struct Object {
    cy: f64,
    cx: f64,
    semi_a: f64,
    semi_b: f64,
    cos_t: f64,
    sin_t: f64,
    exponent: f64,
    pedestal: f64,
    peak_mm: f64,
    blobs: Vec<Blob>,
    waves: Vec<Wave>,
}

impl Object {
    fn sample(rng: &mut ChaCha8Rng, spec: &SceneSpec, cy: f64, cx: f64, radius: f64) -> Self {
        let theta = rng.random_range(0.0..PI);
        let (lo, hi) = spec.blob_count_range;
        let n_blobs = rng.random_range(lo..=hi);
        let blobs = (0..n_blobs)
            .map(|_| Blob {
                u: rng.random_range(-0.6..0.6),
                v: rng.random_range(-0.6..0.6),
                sigma: rng.random_range(0.12..0.4),
                amp: rng.random_range(0.3..1.0),
            })
            .collect();
        let waves = (0..3)
            .map(|_| {
                let freq = rng.random_range(2.0..6.0);
                let dir = rng.random_range(0.0..PI);
                Wave {
                    fu: freq * dir.cos(),
                    fv: freq * dir.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Object {
            cy,
            cx,
            semi_a: radius * rng.random_range(0.75..1.0),
            semi_b: radius * rng.random_range(0.55..1.0),
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            exponent: rng.random_range(2.0..4.0),
            pedestal: rng.random_range(0.1..0.3),
            peak_mm: spec.height_range_mm * rng.random_range(0.6..0.9),
            blobs,
            waves,
        }
    }

    /// Footprint-normalised coordinates; the object covers `r < 1`.
    fn local(&self, y: f64, x: f64) -> (f64, f64, f64) {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.semi_a;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.semi_b;
        let r = (u.abs().powf(self.exponent) + v.abs().powf(self.exponent)).powf(1.0 / self.exponent);
        (u, v, r)
    }

    /// Smooth profile without texture, `None` outside the footprint.
    fn smooth(&self, u: f64, v: f64, r: f64) -> Option<f64> {
        if r >= 1.0 {
            return None;
        }
        let envelope = 1.0 - r.powf(self.exponent);
        let bumps: f64 = self
            .blobs
            .iter()
            .map(|b| {
                let d2 = (u - b.u).powi(2) + (v - b.v).powi(2);
                b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        Some(self.pedestal + (1.0 - self.pedestal) * envelope.sqrt() * (0.5 + bumps))
    }

    fn texture(&self, u: f64, v: f64, r: f64) -> f64 {
        let envelope = 1.0 - r.powf(self.exponent);
        let t: f64 = self
            .waves
            .iter()
            .map(|w| (PI * (w.fu * u + w.fv * v) + w.phase).sin())
            .sum();
        envelope * t / self.waves.len() as f64
    }
}

fn place_objects(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<Object> {
    let (h, w) = (spec.canvas.0 as f64, spec.canvas.1 as f64);
    let margin = 3.0;
    match spec.layout {
        Layout::Single => {
            let radius = (h.min(w) / 2.0 - margin) * rng.random_range(0.6..0.95);
            let cy = h / 2.0 + rng.random_range(-0.1..0.1) * h;
            let cx = w / 2.0 + rng.random_range(-0.1..0.1) * w;
            let radius = radius.min(cy - margin).min(h - cy - margin).min(cx - margin).min(w - cx - margin);
            vec![Object::sample(rng, spec, cy, cx, radius)]
        }
        Layout::Separated => {
            // Each object stays inside its own column, so footprints never touch.
            let column = w / spec.object_count as f64;
            let max_radius = (column / 2.0 - margin).min(h / 2.0 - margin);
            (0..spec.object_count)
                .map(|i| {
                    let radius = max_radius * rng.random_range(0.65..0.95);
                    let slack_x = column / 2.0 - margin - radius;
                    let slack_y = h / 2.0 - margin - radius;
                    let cx = column * (i as f64 + 0.5) + rng.random_range(-1.0..1.0) * slack_x;
                    let cy = h / 2.0 + rng.random_range(-1.0..1.0) * slack_y;
                    Object::sample(rng, spec, cy, cx, radius)
                })
                .collect()
        }
        Layout::Overlapping => {
            let radius_hi = (h.min(w) / 2.0 - margin) * 0.7;
            let mut objects: Vec<Object> = Vec::with_capacity(spec.object_count);
            let mut cy = h / 2.0;
            let mut cx = w / 2.0 - 0.15 * w;
            for _ in 0..spec.object_count {
                let radius = radius_hi * rng.random_range(0.6..1.0);
                let cy_c = cy.clamp(radius + margin, h - radius - margin);
                let cx_c = cx.clamp(radius + margin, w - radius - margin);
                objects.push(Object::sample(rng, spec, cy_c, cx_c, radius));
                // Next center lands inside the current footprint's inner half.
                let angle: f64 = rng.random_range(-0.6..0.6);
                let step = 0.45 * radius * rng.random_range(0.5..1.0);
                cy = cy_c + step * angle.sin();
                cx = cx_c + step * angle.cos();
            }
            objects
        }
    }
}

/// Generates a deterministic synthetic height map for `spec`.
///
/// Objects are smooth Gaussian-bump composites on superelliptic footprints
/// with an optional sinusoidal texture. Heights are clamped into
/// `[0, height_range_mm]`, and the background is masked out with value 0.
pub fn generate_height_map(spec: &SceneSpec) -> Result<HeightMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(&mut rng, spec);
    let (rows, cols) = spec.canvas;
    let mut values = Array2::<f32>::zeros((rows, cols));
    let mut mask = Array2::from_elem((rows, cols), false);

    // Normalise each object's smooth profile so its maximum maps to peak_mm.
    let maxima: Vec<f64> = objects
        .iter()
        .map(|o| {
            let mut m = f64::MIN_POSITIVE;
            for y in 0..rows {
                for x in 0..cols {
                    let (u, v, r) = o.local(y as f64 + 0.5, x as f64 + 0.5);
                    if let Some(s) = o.smooth(u, v, r) {
                        m = m.max(s);
                    }
                }
            }
            m
        })
        .collect();

    for y in 0..rows {
        for x in 0..cols {
            let mut best: Option<f64> = None;
            for (o, &m) in objects.iter().zip(&maxima) {
                let (u, v, r) = o.local(y as f64 + 0.5, x as f64 + 0.5);
                if let Some(s) = o.smooth(u, v, r) {
                    let h = o.peak_mm * s / m + spec.detail_amplitude_mm * o.texture(u, v, r);
                    best = Some(best.map_or(h, |b: f64| b.max(h)));
                }
            }
            if let Some(h) = best {
                values[(y, x)] = h.clamp(0.0, spec.height_range_mm) as f32;
                mask[(y, x)] = true;
            }
        }
    }
    HeightMap::new(values, mask)
}
