use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{write_sample, Manifest, Provenance, MANIFEST_FILE};
use crate::error::Result;
use crate::fpp::{generate_height_map, render_fringe, FppConfig, FringePattern, HeightMap, Layout, SceneSpec};

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Template scene; its seed is replaced per sample.
    pub scene: SceneSpec,
    pub fpp: FppConfig,
    /// Cycle single / separated / overlapping scenes instead of using the
    /// template layout for every sample.
    pub mixed_layouts: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            fpp: FppConfig::default(),
            mixed_layouts: true,
        }
    }
}

impl SynthConfig {
    /// Desk-scale preset: a small canvas with the carrier scaled so one
    /// fringe period spans 8 pixels.
    pub fn desk(rows: usize, cols: usize) -> Self {
        let periods = cols as f64 / 8.0;
        Self {
            scene: SceneSpec {
                canvas: (rows, cols),
                height_range_mm: 10.0,
                detail_amplitude_mm: 0.1,
                blob_count_range: (2, 5),
                ..SceneSpec::default()
            },
            fpp: FppConfig {
                fringe_periods: periods,
                low_freq_periods: periods / 8.0,
                ..FppConfig::default()
            },
            mixed_layouts: true,
        }
    }

    fn scene_for(&self, seed: u64, index: usize) -> SceneSpec {
        let mut scene = self.scene.clone();
        scene.seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64);
        if self.mixed_layouts {
            (scene.layout, scene.object_count) = match index % 3 {
                0 => (Layout::Single, 1),
                1 => (Layout::Separated, 2),
                _ => (Layout::Overlapping, 2),
            };
        }
        scene
    }
}

/// Generates sample `index` of the dataset seeded by `seed`: the height label
/// and the single fringe image rendered from it (zero phase shift).
pub fn synth_sample(cfg: &SynthConfig, seed: u64, index: usize) -> Result<(FringePattern, HeightMap)> {
    let scene = cfg.scene_for(seed, index);
    let height = generate_height_map(&scene)?;
    let mut fpp = cfg.fpp.clone();
    fpp.noise_seed = scene.seed ^ cfg.fpp.noise_seed;
    let fringe = render_fringe(&height, &fpp, 0.0, fpp.fringe_periods)?;
    Ok((fringe, height))
}

/// Writes `count` synthetic samples plus `manifest.json` into `out_dir`.
/// Records are left unassigned; the height scale is the scene height range.
pub fn generate_dataset(cfg: &SynthConfig, count: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    cfg.fpp.validate()?;
    cfg.scene.validate()?;
    let mut manifest = Manifest::new(cfg.scene.canvas, cfg.scene.height_range_mm);
    for i in 0..count {
        let (fringe, height) = synth_sample(cfg, seed, i)?;
        let id = format!("syn{seed}_{i:05}");
        manifest
            .records
            .push(write_sample(&fringe, &height, out_dir, &id, Provenance::Synthetic)?);
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
