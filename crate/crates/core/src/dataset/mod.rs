//! Sample storage (PNG fringes, PFM heights, PNG masks), JSON manifests,
//! train/val/test splitting and ingestion of external datasets.

pub mod image_io;
mod ingest;
mod manifest;
pub mod pfm;
mod samples;
mod synth;

pub use ingest::{adapter_by_name, ingest_external, Entry, IngestAdapter, NativeAdapter, PairsAdapter};
pub use manifest::{
    load_sample, split_manifest, write_sample, Manifest, Provenance, SampleRecord, Split,
    SplitRatios, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use samples::{Sample, SampleSet};
pub use synth::{generate_dataset, synth_sample, SynthConfig};
