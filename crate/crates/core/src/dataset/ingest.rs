//! Conversion of externally produced datasets into the repository layout.
//!
//! An [`IngestAdapter`] knows how to find fringe/height pairs in a foreign
//! directory layout; [`ingest_external`] converts them into PNG/PFM samples
//! and writes a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::image_io::{read_gray_png, read_mask_png};
use super::manifest::{
    write_sample, Manifest, Provenance, Split, MANIFEST_FILE,
};
use super::pfm::read_pfm;
use crate::error::{Error, Result};
use crate::fpp::{FringePattern, HeightMap};

/// A sample located by an adapter, not yet loaded.
#[derive(Debug, Clone)]
pub struct Entry {
    pub id: String,
    pub fringe: PathBuf,
    pub height: PathBuf,
    pub mask: Option<PathBuf>,
    pub provenance: Provenance,
    pub split: Split,
}

pub trait IngestAdapter {
    fn name(&self) -> &'static str;

    /// Lists the samples under `dir`, failing on the first file it cannot
    /// place.
    fn entries(&self, dir: &Path) -> Result<Vec<Entry>>;

    fn load(&self, entry: &Entry) -> Result<(FringePattern, HeightMap)>;

    /// Normalisation constant the source declares, if any.
    fn declared_scale(&self, _dir: &Path) -> Result<Option<f64>> {
        Ok(None)
    }
}

fn adapter_err(adapter: &str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
    Error::Adapter {
        adapter: adapter.to_string(),
        path: path.into(),
        reason: reason.into(),
    }
}

/// Reads a directory written by this crate (`manifest.json` plus samples).
pub struct NativeAdapter;

impl IngestAdapter for NativeAdapter {
    fn name(&self) -> &'static str {
        "native"
    }

    fn entries(&self, dir: &Path) -> Result<Vec<Entry>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(adapter_err(self.name(), path, "manifest not found"));
        }
        let manifest = Manifest::load(&path)
            .map_err(|e| adapter_err(self.name(), &path, e.to_string()))?;
        if manifest.records.is_empty() {
            return Err(adapter_err(self.name(), path, "manifest lists no records"));
        }
        Ok(manifest
            .records
            .iter()
            .map(|r| Entry {
                id: r.id.clone(),
                fringe: dir.join(&r.fringe_path),
                height: dir.join(&r.height_path),
                mask: Some(dir.join(&r.mask_path)),
                provenance: r.provenance,
                split: r.split,
            })
            .collect())
    }

    fn load(&self, entry: &Entry) -> Result<(FringePattern, HeightMap)> {
        let fringe = read_gray_png(&entry.fringe)?;
        let values = read_pfm(&entry.height)?;
        let mask_path = entry.mask.as_deref().ok_or_else(|| {
            adapter_err(self.name(), &entry.height, "record has no mask file")
        })?;
        let mask = read_mask_png(mask_path)?;
        if fringe.dim() != values.dim() || values.dim() != mask.dim() {
            return Err(adapter_err(
                self.name(),
                &entry.height,
                format!(
                    "fringe {:?}, height {:?} and mask {:?} differ",
                    fringe.dim(),
                    values.dim(),
                    mask.dim()
                ),
            ));
        }
        Ok((FringePattern::new(fringe), HeightMap::new(values, mask)?))
    }

    fn declared_scale(&self, dir: &Path) -> Result<Option<f64>> {
        Ok(Some(Manifest::load(&dir.join(MANIFEST_FILE))?.height_scale_mm))
    }
}

/// Paired files matched by stem: `fringe/<stem>.png`, `height/<stem>.pfm`
/// and optionally `mask/<stem>.png`. Without a mask file, pixels with a
/// finite non-zero height are valid.
pub struct PairsAdapter;

impl PairsAdapter {
    fn list(&self, dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
        let mut out = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        paths.sort();
        for p in paths {
            let ok_ext = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(ext));
            let stem = p.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
            match (p.is_file() && ok_ext, stem) {
                (true, Some(stem)) => {
                    out.insert(stem, p);
                }
                _ => return Err(adapter_err(self.name(), p, format!("expected a .{ext} file"))),
            }
        }
        Ok(out)
    }
}

impl IngestAdapter for PairsAdapter {
    fn name(&self) -> &'static str {
        "pairs"
    }

    fn entries(&self, dir: &Path) -> Result<Vec<Entry>> {
        let fringe_dir = dir.join("fringe");
        let height_dir = dir.join("height");
        if !fringe_dir.is_dir() || !height_dir.is_dir() {
            return Err(adapter_err(
                self.name(),
                dir,
                "expected `fringe/` and `height/` subdirectories",
            ));
        }
        let fringes = self.list(&fringe_dir, "png")?;
        let heights = self.list(&height_dir, "pfm")?;
        let mask_dir = dir.join("mask");
        let masks = if mask_dir.is_dir() {
            self.list(&mask_dir, "png")?
        } else {
            BTreeMap::new()
        };
        if let Some((stem, p)) = heights.iter().find(|(s, _)| !fringes.contains_key(*s)) {
            return Err(adapter_err(self.name(), p, format!("no fringe image for `{stem}`")));
        }
        let mut out = Vec::with_capacity(fringes.len());
        for (stem, fringe) in fringes {
            let Some(height) = heights.get(&stem) else {
                return Err(adapter_err(self.name(), fringe, "no matching height file"));
            };
            out.push(Entry {
                id: stem.clone(),
                fringe,
                height: height.clone(),
                mask: masks.get(&stem).cloned(),
                provenance: Provenance::External,
                split: Split::Unassigned,
            });
        }
        if out.is_empty() {
            return Err(adapter_err(self.name(), fringe_dir, "no samples found"));
        }
        Ok(out)
    }

    fn load(&self, entry: &Entry) -> Result<(FringePattern, HeightMap)> {
        let fringe = read_gray_png(&entry.fringe)
            .map_err(|e| adapter_err(self.name(), &entry.fringe, e.to_string()))?;
        let values = read_pfm(&entry.height)
            .map_err(|e| adapter_err(self.name(), &entry.height, e.to_string()))?;
        let mask = match &entry.mask {
            Some(p) => read_mask_png(p).map_err(|e| adapter_err(self.name(), p, e.to_string()))?,
            None => values.mapv(|v| v.is_finite() && v != 0.0),
        };
        if fringe.dim() != values.dim() || mask.dim() != values.dim() {
            return Err(adapter_err(
                self.name(),
                &entry.height,
                format!("size {:?} differs from fringe {:?}", values.dim(), fringe.dim()),
            ));
        }
        let values = Array2::from_shape_fn(values.dim(), |ix| if mask[ix] { values[ix] } else { 0.0 });
        Ok((FringePattern::new(fringe), HeightMap::new(values, mask)?))
    }
}

pub fn adapter_by_name(name: &str) -> Result<Box<dyn IngestAdapter>> {
    match name {
        "native" => Ok(Box::new(NativeAdapter)),
        "pairs" => Ok(Box::new(PairsAdapter)),
        other => Err(Error::Config(format!(
            "unknown adapter `{other}` (known: native, pairs)"
        ))),
    }
}

/// Converts the dataset under `dir` into `out_dir` and writes its manifest.
///
/// The height scale is the one the source declares, otherwise the maximum
/// absolute height found.
pub fn ingest_external(dir: &Path, adapter: &dyn IngestAdapter, out_dir: &Path) -> Result<Manifest> {
    if !dir.is_dir() {
        return Err(adapter_err(adapter.name(), dir, "not a directory"));
    }
    let entries = adapter.entries(dir)?;
    let mut canvas = None;
    let mut max_abs = 0.0f32;
    let mut records = Vec::with_capacity(entries.len());
    for entry in &entries {
        let (fringe, height) = adapter.load(entry)?;
        match canvas {
            None => canvas = Some(height.dim()),
            Some(c) if c != height.dim() => {
                return Err(adapter_err(
                    adapter.name(),
                    &entry.height,
                    format!("size {:?} differs from dataset canvas {:?}", height.dim(), c),
                ))
            }
            _ => {}
        }
        if height.valid_count() == 0 {
            return Err(adapter_err(adapter.name(), &entry.height, "mask covers no pixel"));
        }
        max_abs = max_abs.max(height.max_abs());
        let mut record = write_sample(&fringe, &height, out_dir, &entry.id, entry.provenance)?;
        record.split = entry.split;
        records.push(record);
    }
    let scale = match adapter.declared_scale(dir)? {
        Some(s) => s,
        None if max_abs > 0.0 => max_abs as f64,
        None => 1.0,
    };
    let mut manifest = Manifest::new(canvas.unwrap_or((0, 0)), scale);
    manifest.records = records;
    if let Some(seed) = native_split_seed(dir, adapter) {
        manifest.split_seed = seed;
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn native_split_seed(dir: &Path, adapter: &dyn IngestAdapter) -> Option<u64> {
    (adapter.name() == "native")
        .then(|| Manifest::load(&dir.join(MANIFEST_FILE)).ok().map(|m| m.split_seed))
        .flatten()
}
