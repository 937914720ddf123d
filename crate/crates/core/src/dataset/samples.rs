use std::path::Path;

use ndarray::Array2;

use super::manifest::{load_sample, Manifest, Split};
use crate::error::{config_err, shape_err, Result};
use crate::fpp::{FringePattern, HeightMap};

/// A sample held in memory: the network input and its height label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// Fringe intensities in `[0, 1]`.
    pub fringe: Array2<f32>,
    pub height: HeightMap,
}

impl Sample {
    pub fn new(id: impl Into<String>, fringe: &FringePattern, height: HeightMap) -> Result<Self> {
        if fringe.dim() != height.dim() {
            return Err(shape_err!(
                "fringe {:?} and height {:?} differ",
                fringe.dim(),
                height.dim()
            ));
        }
        Ok(Self {
            id: id.into(),
            fringe: fringe.intensities.mapv(|v| v as f32),
            height,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.height.dim()
    }
}

/// Samples of one split plus the dataset-wide height normalisation.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub height_scale_mm: f64,
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>, height_scale_mm: f64) -> Result<Self> {
        if !(height_scale_mm > 0.0) {
            return Err(config_err!("height scale must be positive"));
        }
        if let Some(first) = samples.first() {
            if let Some(s) = samples.iter().find(|s| s.dim() != first.dim()) {
                return Err(shape_err!(
                    "sample `{}` is {:?}, expected {:?}",
                    s.id,
                    s.dim(),
                    first.dim()
                ));
            }
        }
        Ok(Self {
            samples,
            height_scale_mm,
        })
    }

    /// Loads every record of `split` from the manifest directory `root`.
    pub fn load(manifest: &Manifest, root: &Path, split: Split) -> Result<Self> {
        let samples = manifest
            .records_in(split)
            .map(|r| {
                let (fringe, height) = load_sample(root, r)?;
                Sample::new(r.id.clone(), &fringe, height)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, manifest.height_scale_mm)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn canvas(&self) -> Option<(usize, usize)> {
        self.samples.first().map(Sample::dim)
    }
}
