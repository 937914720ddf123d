use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;
use uhrnet::dataset::image_io::{quantize, read_gray_png, write_gray_png};
use uhrnet::dataset::pfm::{read_pfm, read_pfm_from, write_pfm, write_pfm_to};
use uhrnet::dataset::*;
use uhrnet::fpp::{FringePattern, HeightMap};
use uhrnet::Error;

fn tiny_synth() -> SynthConfig {
    SynthConfig::desk(32, 48)
}

fn ids(m: &Manifest) -> Vec<String> {
    m.records.iter().map(|r| r.id.clone()).collect()
}

#[test]
fn height_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let field = Array2::from_shape_fn((5, 7), |(y, x)| ((y * 7 + x) as f32).sin() * 1e3 + f32::EPSILON);
    let p = dir.path().join("h.pfm");
    write_pfm(&p, &field).unwrap();
    let back = read_pfm(&p).unwrap();
    assert_eq!(back.dim(), field.dim());
    assert!(back.iter().zip(field.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn pfm_layout_is_little_endian_bottom_up() {
    let field = Array2::from_shape_vec((2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let mut bytes = Vec::new();
    write_pfm_to(&mut bytes, &field).unwrap();
    let header = b"Pf\n2 2\n-1.0\n";
    assert_eq!(&bytes[..header.len()], header);
    let body = &bytes[header.len()..];
    let first = f32::from_le_bytes(body[0..4].try_into().unwrap());
    assert_eq!(first, 3.0, "the first stored scanline is the bottom row");
}

#[test]
fn pfm_reader_rejects_garbage() {
    assert!(matches!(read_pfm_from(Cursor::new(b"P6\n1 1\n255\n".to_vec())), Err(Error::Pfm(_))));
    assert!(matches!(read_pfm_from(Cursor::new(b"Pf\n4 4\n-1.0\n\0\0".to_vec())), Err(Error::Pfm(_))));
}

#[test]
fn fringe_png_quantisation_bound() {
    let dir = tempfile::tempdir().unwrap();
    let field = Array2::from_shape_fn((9, 13), |(y, x)| ((y * 13 + x) as f64 * 0.0137).fract());
    let p = dir.path().join("f.png");
    write_gray_png(&p, &field).unwrap();
    let back = read_gray_png(&p).unwrap();
    let worst = back.iter().zip(field.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst <= 0.5 / 255.0 + 1e-12, "{worst}");
    assert_eq!(quantize(0.5 / 255.0), 1);
    assert_eq!(quantize(1.0), 255);
}

#[test]
fn all_invalid_sample_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let height = HeightMap::new(Array2::zeros((4, 4)), Array2::from_elem((4, 4), false)).unwrap();
    let fringe = FringePattern::new(Array2::zeros((4, 4)));
    let err = write_sample(&fringe, &height, dir.path(), "empty", Provenance::Synthetic).unwrap_err();
    assert!(matches!(err, Error::InvalidSample(_)));
}

#[test]
fn write_sample_into_unwritable_location_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let fringe = FringePattern::new(Array2::zeros((4, 4)));
    let err = write_sample(&fringe, &HeightMap::zeros(4, 4), &blocker.join("sub"), "a", Provenance::Synthetic).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn stored_sample_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let (fringe, height) = synth_sample(&tiny_synth(), 3, 1).unwrap();
    let rec = write_sample(&fringe, &height, dir.path(), "x1", Provenance::Synthetic).unwrap();
    let (f2, h2) = load_sample(dir.path(), &rec).unwrap();
    assert_eq!(h2, height);
    let worst = f2
        .intensities
        .iter()
        .zip(fringe.intensities.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst <= 0.5 / 255.0 + 1e-12);
}

#[test]
fn split_counts_follow_the_rounding_rule() {
    let r = SplitRatios::default();
    assert_eq!(r.counts(1532), (1226, 153, 153));
    assert_eq!(r.counts(10), (8, 1, 1));
    assert_eq!(r.counts(128), (102, 13, 13));
    assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
}

fn fake_manifest(n: usize) -> Manifest {
    let mut m = Manifest::new((16, 16), 1.0);
    for i in 0..n {
        m.records.push(SampleRecord {
            id: format!("r{i:04}"),
            fringe_path: format!("r{i}_f.png").into(),
            height_path: format!("r{i}_h.pfm").into(),
            mask_path: format!("r{i}_m.png").into(),
            provenance: Provenance::Synthetic,
            split: Split::Unassigned,
        });
    }
    m
}

#[test]
fn split_is_deterministic_and_order_free() {
    let m = fake_manifest(1532);
    let a = split_manifest(&m, SplitRatios::default(), 42, false).unwrap();
    let b = split_manifest(&m, SplitRatios::default(), 42, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.split_counts(), (1226, 153, 153, 0));
    assert_eq!(a.split_seed, 42);

    let mut reversed = m.clone();
    reversed.records.reverse();
    let c = split_manifest(&reversed, SplitRatios::default(), 42, false).unwrap();
    let assignment = |m: &Manifest| {
        let mut v: Vec<(String, Split)> = m.records.iter().map(|r| (r.id.clone(), r.split)).collect();
        v.sort_by(|x, y| x.0.cmp(&y.0));
        v
    };
    assert_eq!(assignment(&a), assignment(&c));
    let d = split_manifest(&m, SplitRatios::default(), 43, false).unwrap();
    assert_ne!(assignment(&a), assignment(&d));
}

#[test]
fn tiny_manifests_need_the_degenerate_flag() {
    let m = fake_manifest(2);
    assert!(matches!(split_manifest(&m, SplitRatios::default(), 0, false), Err(Error::Config(_))));
    let forced = split_manifest(&m, SplitRatios::default(), 0, true).unwrap();
    let (tr, va, te, un) = forced.split_counts();
    assert_eq!(tr + va + te, 2);
    assert_eq!(un, 0);
    assert!(split_manifest(&fake_manifest(0), SplitRatios::default(), 0, true).is_err());
}

#[test]
fn duplicate_ids_are_invalid() {
    let mut m = fake_manifest(3);
    m.records[2].id = m.records[0].id.clone();
    assert!(m.validate().is_err());
}

#[test]
fn generated_dataset_round_trips_through_native_ingest() {
    let src = tempfile::tempdir().unwrap();
    let generated = generate_dataset(&tiny_synth(), 6, 9, src.path()).unwrap();
    assert_eq!(generated.records.len(), 6);
    let split = split_manifest(&generated, SplitRatios::default(), 1, true).unwrap();
    split.save(&src.path().join(MANIFEST_FILE)).unwrap();

    let out = tempfile::tempdir().unwrap();
    let ingested = ingest_external(src.path(), &NativeAdapter, out.path()).unwrap();
    let mut a = split.records.clone();
    let mut b = ingested.records.clone();
    a.sort_by(|x, y| x.id.cmp(&y.id));
    b.sort_by(|x, y| x.id.cmp(&y.id));
    assert_eq!(a, b);
    assert_eq!(ingested.canvas, split.canvas);
    assert_eq!(ingested.height_scale_mm, split.height_scale_mm);
    assert_eq!(ingested.split_seed, split.split_seed);

    let reloaded = Manifest::load(&out.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded, ingested);
    for rec in &ingested.records {
        let original = load_sample(src.path(), split.records.iter().find(|r| r.id == rec.id).unwrap()).unwrap();
        let copy = load_sample(out.path(), rec).unwrap();
        assert_eq!(original.1, copy.1);
        assert_eq!(original.0, copy.0);
    }
}

#[test]
fn empty_directory_is_an_adapter_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    for adapter in ["native", "pairs"] {
        let a = adapter_by_name(adapter).unwrap();
        let err = ingest_external(dir.path(), a.as_ref(), out.path()).unwrap_err();
        assert!(matches!(err, Error::Adapter { .. }), "{err}");
    }
    assert!(adapter_by_name("figshare").is_err());
}

fn write_pairs(dir: &Path, n: usize) {
    for sub in ["fringe", "height"] {
        fs::create_dir_all(dir.join(sub)).unwrap();
    }
    for i in 0..n {
        let (f, h) = synth_sample(&tiny_synth(), 4, i).unwrap();
        write_gray_png(&dir.join("fringe").join(format!("p{i}.png")), &f.intensities).unwrap();
        write_pfm(&dir.join("height").join(format!("p{i}.pfm")), &h.values).unwrap();
    }
}

#[test]
fn pairs_ingest_counts_match_the_files_on_disk() {
    let src = tempfile::tempdir().unwrap();
    write_pairs(src.path(), 5);
    let on_disk = fs::read_dir(src.path().join("height")).unwrap().count();
    let out = tempfile::tempdir().unwrap();
    let m = ingest_external(src.path(), &PairsAdapter, out.path()).unwrap();
    assert_eq!(m.records.len(), on_disk);
    assert!(m.records.iter().all(|r| r.provenance == Provenance::External));
    let unique: HashSet<String> = ids(&m).into_iter().collect();
    assert_eq!(unique.len(), 5);
    let max_abs = m
        .records
        .iter()
        .map(|r| load_sample(out.path(), r).unwrap().1.max_abs())
        .fold(0.0f32, f32::max);
    assert_eq!(m.height_scale_mm, max_abs as f64);
}

#[test]
fn pairs_ingest_names_the_first_unparseable_file() {
    let src = tempfile::tempdir().unwrap();
    write_pairs(src.path(), 2);
    let bad = src.path().join("height").join("notes.txt");
    fs::write(&bad, b"hello").unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = ingest_external(src.path(), &PairsAdapter, out.path()).unwrap_err();
    assert!(err.to_string().contains("notes.txt"), "{err}");

    fs::remove_file(&bad).unwrap();
    fs::write(src.path().join("height").join("p1.pfm"), b"Pf\n1 1\n").unwrap();
    let err = ingest_external(src.path(), &PairsAdapter, out.path()).unwrap_err();
    assert!(err.to_string().contains("p1.pfm"), "{err}");
}

#[test]
fn sample_set_loads_one_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&tiny_synth(), 10, 2, dir.path()).unwrap();
    let m = split_manifest(&m, SplitRatios::default(), 0, false).unwrap();
    let train = SampleSet::load(&m, dir.path(), Split::Train).unwrap();
    assert_eq!(train.len(), 8);
    assert_eq!(train.canvas(), Some((32, 48)));
    assert_eq!(train.height_scale_mm, m.height_scale_mm);
    let test = SampleSet::load(&m, dir.path(), Split::Test).unwrap();
    assert_eq!(test.len(), 1);
}

#[test]
fn synthetic_samples_are_deterministic() {
    let a = synth_sample(&tiny_synth(), 5, 3).unwrap();
    let b = synth_sample(&tiny_synth(), 5, 3).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfm_round_trip_for_any_finite_field(rows in 1usize..6, cols in 1usize..6, bits in prop::collection::vec(any::<u32>(), 36)) {
        let field = Array2::from_shape_fn((rows, cols), |(y, x)| {
            let v = f32::from_bits(bits[y * 6 + x]);
            if v.is_finite() { v } else { -0.0 }
        });
        let mut bytes = Vec::new();
        write_pfm_to(&mut bytes, &field).unwrap();
        let back = read_pfm_from(Cursor::new(bytes)).unwrap();
        prop_assert!(back.iter().zip(field.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn split_assignment_covers_every_record(n in 3usize..200, seed in any::<u64>()) {
        let m = split_manifest(&fake_manifest(n), SplitRatios::default(), seed, true).unwrap();
        let (tr, va, te, un) = m.split_counts();
        prop_assert_eq!(un, 0);
        prop_assert_eq!((tr, va, te), SplitRatios::default().counts(n));
    }
}
