use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::{read_gray_png, read_mask_png, write_gray_png, write_mask_png};
use super::pfm::{read_pfm, write_pfm};
use crate::error::{config_err, shape_err, Error, Result};
use crate::fpp::{FringePattern, HeightMap};

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(config_err!("unknown split `{other}`")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

/// One stored sample. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub fringe_path: PathBuf,
    pub height_path: PathBuf,
    pub mask_path: PathBuf,
    pub provenance: Provenance,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// `(rows, cols)`.
    pub canvas: (usize, usize),
    /// Dataset-wide height normalisation constant.
    pub height_scale_mm: f64,
    pub records: Vec<SampleRecord>,
    pub split_seed: u64,
}

impl Manifest {
    pub fn new(canvas: (usize, usize), height_scale_mm: f64) -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            canvas,
            height_scale_mm,
            records: Vec::new(),
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(config_err!("duplicate record id `{}`", r.id));
            }
        }
        if !(self.height_scale_mm > 0.0 && self.height_scale_mm.is_finite()) {
            return Err(config_err!(
                "height_scale_mm {} must be positive",
                self.height_scale_mm
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// `(train, val, test, unassigned)` record counts.
    pub fn split_counts(&self) -> (usize, usize, usize, usize) {
        self.records.iter().fold((0, 0, 0, 0), |(a, b, c, d), r| match r.split {
            Split::Train => (a + 1, b, c, d),
            Split::Val => (a, b + 1, c, d),
            Split::Test => (a, b, c + 1, d),
            Split::Unassigned => (a, b, c, d + 1),
        })
    }
}

/// Stores one sample under `dir`: the fringe as 8-bit PNG, heights as PFM
/// and the mask as 0/255 PNG.
pub fn write_sample(
    fringe: &FringePattern,
    height: &HeightMap,
    dir: &Path,
    id: &str,
    provenance: Provenance,
) -> Result<SampleRecord> {
    if fringe.dim() != height.dim() {
        return Err(shape_err!(
            "fringe {:?} and height {:?} differ",
            fringe.dim(),
            height.dim()
        ));
    }
    height.ensure_sample()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let record = SampleRecord {
        id: id.to_string(),
        fringe_path: PathBuf::from(format!("{id}_fringe.png")),
        height_path: PathBuf::from(format!("{id}_height.pfm")),
        mask_path: PathBuf::from(format!("{id}_mask.png")),
        provenance,
        split: Split::Unassigned,
    };
    write_gray_png(&dir.join(&record.fringe_path), &fringe.intensities)?;
    write_pfm(&dir.join(&record.height_path), &height.values)?;
    write_mask_png(&dir.join(&record.mask_path), &height.mask)?;
    Ok(record)
}

/// Loads a stored sample, checking that all three files agree in size.
pub fn load_sample(dir: &Path, record: &SampleRecord) -> Result<(FringePattern, HeightMap)> {
    let fringe = read_gray_png(&dir.join(&record.fringe_path))?;
    let values = read_pfm(&dir.join(&record.height_path))?;
    let mask = read_mask_png(&dir.join(&record.mask_path))?;
    if fringe.dim() != values.dim() || values.dim() != mask.dim() {
        return Err(shape_err!(
            "sample `{}`: fringe {:?}, height {:?}, mask {:?}",
            record.id,
            fringe.dim(),
            values.dim(),
            mask.dim()
        ));
    }
    Ok((FringePattern::new(fringe), HeightMap::new(values, mask)?))
}

/// Split proportions; each must be nonnegative and they must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.train, self.val, self.test].iter().all(|v| *v >= 0.0);
        if !ok || (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(config_err!(
                "split ratios {}/{}/{} must be nonnegative and sum to 1",
                self.train,
                self.val,
                self.test
            ));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for `n` records: train and val are
    /// rounded half-up, test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64) + 0.5).floor() as usize;
        let train = train.min(n);
        let val = (((self.val * n as f64) + 0.5).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Assigns every record to train/val/test.
///
/// Records are ordered by id, shuffled with `seed`, and the first
/// `round(train n)` become train, the next `round(val n)` val, the rest test.
/// The assignment depends only on the record ids, the ratios and the seed.
/// Fewer than three records (or any empty split) is an error unless
/// `allow_degenerate` is set.
pub fn split_manifest(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
    allow_degenerate: bool,
) -> Result<Manifest> {
    ratios.validate()?;
    manifest.validate()?;
    let n = manifest.records.len();
    if n == 0 {
        return Err(config_err!("cannot split an empty manifest"));
    }
    let (train, val, test) = ratios.counts(n);
    if (n < 3 || train == 0 || val == 0 || test == 0) && !allow_degenerate {
        return Err(config_err!(
            "{n} records give a degenerate split {train}/{val}/{test}"
        ));
    }
    if n < 3 {
        log::warn!("splitting only {n} records; some splits are empty");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| manifest.records[a].id.cmp(&manifest.records[b].id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = manifest.clone();
    out.split_seed = seed;
    for (rank, &idx) in order.iter().enumerate() {
        out.records[idx].split = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}
