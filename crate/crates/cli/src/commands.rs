use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;

use uhrnet::dataset::image_io::{read_gray_png, read_mask_png};
use uhrnet::dataset::pfm::{read_pfm, write_pfm};
use uhrnet::dataset::{
    adapter_by_name, generate_dataset, ingest_external, split_manifest, Manifest, SampleSet, Split, SplitRatios,
    SynthConfig, MANIFEST_FILE,
};
use uhrnet::metrics::plots::{cross_section_svg, error_map_png, line_chart_svg, write_svg, Series};
use uhrnet::metrics::{evaluate, predict_mm, EvalReport};
use uhrnet::network::{NetworkConfig, Variant};
use uhrnet::trainer::{load_checkpoint, train as run_training, History, TrainConfig};

use crate::config::{digest, load_config, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}

fn load_manifest(data: &Path) -> Result<Manifest> {
    let path = data.join(MANIFEST_FILE);
    require_file(&path)?;
    Ok(Manifest::load(&path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn parse_canvas(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once('x')
        .and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)));
    parsed.ok_or_else(|| usage(format!("canvas `{s}` is not ROWSxCOLS")))
}

#[derive(Serialize)]
struct GenRecord<'a> {
    synth: &'a SynthConfig,
    count: usize,
    seed: u64,
}

pub fn gen(out: &Path, count: usize, seed: u64, config: Option<&Path>, canvas: Option<&str>) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let cfg = match (config, canvas) {
        (Some(p), _) => {
            require_file(p)?;
            load_config::<SynthConfig>(p)?
        }
        (None, Some(c)) => {
            let (rows, cols) = parse_canvas(c)?;
            SynthConfig::desk(rows, cols)
        }
        (None, None) => SynthConfig::default(),
    };
    let manifest = generate_dataset(&cfg, count, seed, out)?;
    let record = GenRecord { synth: &cfg, count, seed };
    log::info!("generated {} samples, config digest {}", manifest.records.len(), digest(&record)?);
    let provenance = write_json(&out.join("gen_config.json"), &record)?;
    Ok(vec![out.join(MANIFEST_FILE), provenance])
}

pub fn ingest(input: &Path, adapter: &str, out: &Path) -> Result<Vec<PathBuf>> {
    if !input.exists() {
        bail!("input directory not found: {}", input.display());
    }
    let adapter = adapter_by_name(adapter).map_err(|e| usage(e.to_string()))?;
    let manifest = ingest_external(input, adapter.as_ref(), out)?;
    log::info!("ingested {} records from {}", manifest.records.len(), input.display());
    Ok(vec![out.join(MANIFEST_FILE)])
}

pub fn split(data: &Path, ratios: (f64, f64, f64), seed: u64, allow_degenerate: bool) -> Result<Vec<PathBuf>> {
    let ratios = SplitRatios::new(ratios.0, ratios.1, ratios.2).map_err(|e| usage(e.to_string()))?;
    let manifest = load_manifest(data)?;
    let split = split_manifest(&manifest, ratios, seed, allow_degenerate)?;
    let (tr, va, te, _) = split.split_counts();
    log::info!("split {} records into {tr}/{va}/{te}", split.records.len());
    let path = data.join(MANIFEST_FILE);
    split.save(&path)?;
    Ok(vec![path])
}

fn train_config(config: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => {
            require_file(p)?;
            load_config::<TrainConfig>(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_splits(data: &Path) -> Result<(Manifest, SampleSet, SampleSet)> {
    let manifest = load_manifest(data)?;
    let train = SampleSet::load(&manifest, data, Split::Train)?;
    let val = SampleSet::load(&manifest, data, Split::Val)?;
    if train.is_empty() {
        bail!("manifest in {} has no train records; run `uhrnet split` first", data.display());
    }
    Ok((manifest, train, val))
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = train_config(config, seed)?;
    let (_, train_set, val_set) = load_splits(data)?;
    log::info!("training variant {}, config digest {}", cfg.network.variant, digest(&cfg)?);
    let outcome = run_training(&cfg, &train_set, &val_set, out)?;
    let mut artifacts = vec![outcome.best_checkpoint.clone(), outcome.last_checkpoint.clone()];
    artifacts.push(out.join("history.json"));
    artifacts.extend(plot_history_into(&outcome.history, out)?);
    Ok(artifacts)
}

fn plot_history_into(history: &History, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let epochs: Vec<f64> = history.records.iter().map(|r| r.epoch as f64).collect();
    let series = |name: &str, f: fn(&uhrnet::trainer::EpochRecord) -> f64| Series {
        name: name.to_string(),
        x: epochs.clone(),
        y: history.records.iter().map(f).collect(),
    };
    let charts = [
        (
            "rmse.svg",
            "RMSE",
            "RMSE (mm)",
            vec![series("train", |r| r.train_rmse_mm), series("val", |r| r.val_rmse_mm)],
        ),
        (
            "ssim.svg",
            "SSIM",
            "SSIM",
            vec![series("train", |r| r.train_ssim), series("val", |r| r.val_ssim)],
        ),
        ("loss.svg", "training loss", "loss", vec![series("train", |r| r.train_loss)]),
    ];
    let mut written = Vec::new();
    for (file, title, label, s) in charts {
        let path = out.join(file);
        write_svg(&path, &line_chart_svg(title, "epoch", label, &s)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn eval(checkpoint: &Path, data: &Path, split: &str, out: &Path, row: Option<usize>) -> Result<Vec<PathBuf>> {
    let split: Split = split.parse().map_err(|e: uhrnet::Error| usage(e.to_string()))?;
    require_file(checkpoint)?;
    let (net, meta) = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(data)?;
    let set = SampleSet::load(&manifest, data, split)?;
    if set.is_empty() {
        bail!("split `{split}` of {} is empty", data.display());
    }
    if set.canvas() != Some(meta.canvas) {
        bail!("checkpoint canvas {:?} does not match samples {:?}", meta.canvas, set.canvas());
    }
    let report = evaluate(&net, &set)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut artifacts = vec![write_json(&out.join("report.json"), &report)?];
    println!(
        "{} samples: RMSE {:.4} mm, SSIM {:.4}",
        report.n_samples, report.rmse_mm.mean, report.ssim.mean
    );

    let first = &set.samples[0];
    let pred = predict_mm(&net, &first.fringe, set.height_scale_mm)?;
    let row = row.unwrap_or(first.dim().0 / 2);
    let cs = out.join("cross_section.svg");
    write_svg(&cs, &cross_section_svg(&pred, &first.height.values, row)?)?;
    let em = out.join("error_map.png");
    let max_err = (set.height_scale_mm * 0.05).max(f64::EPSILON);
    error_map_png(&em, &pred, &first.height.values, &first.height.mask, max_err)?;
    artifacts.extend([cs, em]);
    Ok(artifacts)
}

pub fn predict(checkpoint: &Path, fringe: &Path, out: &Path, plot: Option<&Path>) -> Result<Vec<PathBuf>> {
    require_file(checkpoint)?;
    require_file(fringe)?;
    let (net, meta) = load_checkpoint(checkpoint)?;
    let image = read_gray_png(fringe)?.mapv(|v| v as f32);
    let pred = predict_mm(&net, &image, meta.height_scale_mm)
        .with_context(|| format!("cannot predict from {}", fringe.display()))?;
    write_pfm(out, &pred)?;
    let mut artifacts = vec![out.to_path_buf()];
    if let Some(p) = plot {
        let row = pred.nrows() / 2;
        let values = pred.row(row).iter().map(|v| *v as f64).collect();
        let svg = line_chart_svg(
            &format!("prediction at row {row}"),
            "column (px)",
            "height (mm)",
            &[Series::new("prediction", values)],
        )?;
        write_svg(p, &svg)?;
        artifacts.push(p.to_path_buf());
    }
    Ok(artifacts)
}

pub fn plot_history(history: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    require_file(history)?;
    let text = fs::read_to_string(history)?;
    let history: History =
        serde_json::from_str(&text).with_context(|| format!("{} is not a training history", history.display()))?;
    plot_history_into(&history, out)
}

fn read_pair(pred: &Path, gt: &Path) -> Result<(Array2<f32>, Array2<f32>)> {
    require_file(pred)?;
    require_file(gt)?;
    Ok((read_pfm(pred)?, read_pfm(gt)?))
}

pub fn plot_cross_section(pred: &Path, gt: &Path, row: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let (p, g) = read_pair(pred, gt)?;
    write_svg(out, &cross_section_svg(&p, &g, row)?)?;
    Ok(vec![out.to_path_buf()])
}

pub fn plot_error_map(pred: &Path, gt: &Path, mask: &Path, max_error: f64, out: &Path) -> Result<Vec<PathBuf>> {
    let (p, g) = read_pair(pred, gt)?;
    require_file(mask)?;
    let m = read_mask_png(mask)?;
    error_map_png(out, &p, &g, &m, max_error)?;
    Ok(vec![out.to_path_buf()])
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: Variant,
    params: usize,
    report: EvalReport,
}

/// Table with the columns Model, Param(M), RMSE(mm), SSIM.
fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<6} {:>9} {:>9} {:>7}\n", "Model", "Param(M)", "RMSE(mm)", "SSIM");
    for r in rows {
        s.push_str(&format!(
            "{:<6} {:>9.3} {:>9.4} {:>7.4}\n",
            r.variant.to_string(),
            r.params as f64 / 1e6,
            r.report.rmse_mm.mean,
            r.report.ssim.mean
        ));
    }
    s
}

pub fn ablate(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    width_divisor: usize,
    variants: &str,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>> {
    let base = train_config(config, seed)?;
    let variants = variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let (manifest, train_set, val_set) = load_splits(data)?;
    let test_set = SampleSet::load(&manifest, data, Split::Test)?;
    if test_set.is_empty() {
        bail!("manifest in {} has no test records", data.display());
    }
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for variant in variants {
        let network = NetworkConfig::for_variant(variant)
            .narrowed(width_divisor)
            .map_err(|e| usage(e.to_string()))?;
        let cfg = TrainConfig { network, ..base.clone() };
        let dir = out.join(format!("variant_{variant}"));
        log::info!("ablation: training variant {variant}");
        let outcome = run_training(&cfg, &train_set, &val_set, &dir)?;
        let (best, _) = load_checkpoint(&outcome.best_checkpoint)?;
        let report = evaluate(&best, &test_set)?;
        artifacts.push(outcome.best_checkpoint);
        rows.push(AblationRow {
            variant,
            params: best.count_parameters(),
            report,
        });
    }
    let table = ablation_table(&rows);
    print!("{table}");
    let table_path = out.join("ablation.txt");
    fs::write(&table_path, &table).with_context(|| format!("cannot write {}", table_path.display()))?;
    artifacts.push(table_path);
    artifacts.push(write_json(&out.join("ablation.json"), &rows)?);
    Ok(artifacts)
}
