mod common;

use std::f64::consts::PI;

use ndarray::Array2;
use proptest::prelude::*;
use uhrnet::fpp::*;
use uhrnet::Error;

use common::connected_components;

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        canvas: (64, 96),
        ..SceneSpec::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate_height_map(&small_spec(7)).unwrap();
    let b = generate_height_map(&small_spec(7)).unwrap();
    assert_eq!(a, b);
    let c = generate_height_map(&small_spec(8)).unwrap();
    assert_ne!(a.values, c.values);
}

#[test]
fn separated_layout_has_two_components() {
    for seed in 0..6 {
        let spec = SceneSpec {
            object_count: 2,
            layout: Layout::Separated,
            ..small_spec(seed)
        };
        let h = generate_height_map(&spec).unwrap();
        assert!(connected_components(&h.mask) >= 2, "seed {seed}");
    }
}

#[test]
fn height_range_is_bounded() {
    for (seed, layout, count) in [(1, Layout::Single, 1), (2, Layout::Overlapping, 3), (3, Layout::Separated, 2)] {
        let spec = SceneSpec {
            height_range_mm: 20.0,
            object_count: count,
            layout,
            ..small_spec(seed)
        };
        let h = generate_height_map(&spec).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (v, m) in h.values.iter().zip(h.mask.iter()) {
            if *m {
                lo = lo.min(*v as f64);
                hi = hi.max(*v as f64);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(hi - lo <= 20.0 + 1e-4, "{}", hi - lo);
        assert!(h.valid_count() > 0);
    }
}

#[test]
fn invalid_scene_specs_are_rejected() {
    let bad_canvas = SceneSpec {
        canvas: (100, 96),
        ..small_spec(0)
    };
    assert!(matches!(generate_height_map(&bad_canvas), Err(Error::Config(_))));
    let no_objects = SceneSpec {
        object_count: 0,
        ..small_spec(0)
    };
    assert!(matches!(generate_height_map(&no_objects), Err(Error::Config(_))));
}

#[test]
fn flat_scene_renders_the_reference_carrier() {
    let cfg = FppConfig::default();
    let (rows, cols) = (16, 64);
    let p = render_fringe(&HeightMap::zeros(rows, cols), &cfg, 0.0, 5.0).unwrap();
    for ((_, x), v) in p.intensities.indexed_iter() {
        let expected = cfg.ambient + cfg.modulation * (2.0 * PI * 5.0 * x as f64 / cols as f64).cos();
        assert!((v - expected).abs() < 1e-12);
    }
}

#[test]
fn antiphase_patterns_sum_to_twice_the_ambient() {
    let cfg = FppConfig::default();
    let h = generate_height_map(&small_spec(3)).unwrap();
    let a = render_fringe(&h, &cfg, 0.0, cfg.fringe_periods).unwrap();
    let b = render_fringe(&h, &cfg, PI, cfg.fringe_periods).unwrap();
    for (x, y) in a.intensities.iter().zip(b.intensities.iter()) {
        assert!((x + y - 2.0 * cfg.ambient).abs() < 1e-12);
    }
}

#[test]
fn height_ramp_shifts_the_fringe_frequency() {
    let cfg = FppConfig::default();
    let (rows, cols) = (2, 8192);
    let periods = cfg.fringe_periods;
    let slope = 0.01; // mm per pixel
    let ramp = Array2::from_shape_fn((rows, cols), |(_, x)| (slope * x as f64) as f32);
    let p = render_fringe(&HeightMap::from_values(ramp).unwrap(), &cfg, 0.0, periods).unwrap();
    // Count upward crossings of the ambient level along one row.
    let row = p.intensities.row(1);
    let crossings: Vec<usize> = (1..cols)
        .filter(|&x| row[x - 1] < cfg.ambient && row[x] >= cfg.ambient)
        .collect();
    let spacing = (crossings[crossings.len() - 1] - crossings[0]) as f64 / (crossings.len() - 1) as f64;
    let measured = 1.0 / spacing;
    let carrier = periods / cols as f64;
    let expected_shift = slope / cfg.mm_per_radian / (2.0 * PI);
    assert!(
        (measured - carrier - expected_shift).abs() < 0.02 * expected_shift,
        "measured {measured}, carrier {carrier}, expected shift {expected_shift}"
    );
}

#[test]
fn render_rejects_overbright_config() {
    let cfg = FppConfig {
        ambient: 0.7,
        modulation: 0.5,
        ..FppConfig::default()
    };
    assert!(matches!(
        render_fringe(&HeightMap::zeros(16, 16), &cfg, 0.0, 4.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn noisy_render_is_clipped_and_deterministic() {
    let cfg = FppConfig {
        ambient: 0.5,
        modulation: 0.5,
        noise_sigma: 0.2,
        gamma: 1.4,
        ..FppConfig::default()
    };
    let h = generate_height_map(&small_spec(4)).unwrap();
    let a = render_fringe(&h, &cfg, 0.3, 12.0).unwrap();
    let b = render_fringe(&h, &cfg, 0.3, 12.0).unwrap();
    assert_eq!(a, b);
    assert!(a.intensities.iter().all(|v| (0.0..=1.0).contains(v)));
}

fn patterns_from_phase(phase: &Array2<f64>, a: f64, b: f64, n: usize) -> Vec<FringePattern> {
    (0..n)
        .map(|k| FringePattern::new(phase.mapv(|p| a + b * (p + 2.0 * PI * k as f64 / n as f64).cos())))
        .collect()
}

#[test]
fn psp_recovers_a_known_phase_field() {
    let phase = Array2::from_shape_fn((24, 40), |(y, x)| 0.3 * x as f64 - 0.17 * y as f64 + (0.1 * (x * y) as f64).sin());
    let got = psp_wrapped_phase(&patterns_from_phase(&phase, 0.5, 0.4, 4)).unwrap();
    assert!(got.wrapped);
    let mut worst = 0.0f64;
    for (g, p) in got.values.iter().zip(phase.iter()) {
        assert!(*g > -PI && *g <= PI);
        worst = worst.max(wrap_phase(g - p).abs());
    }
    assert!(worst < 1e-6, "{worst}");

    let zero = psp_wrapped_phase(&patterns_from_phase(&Array2::zeros((8, 8)), 0.5, 0.4, 5)).unwrap();
    assert!(zero.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn psp_masks_unmodulated_pixels() {
    let flat = vec![FringePattern::new(Array2::from_elem((8, 8), 0.5)); 4];
    let got = psp_wrapped_phase(&flat).unwrap();
    assert!(got.valid.iter().all(|v| !v));
    assert!(got.values.iter().all(|v| *v == 0.0));
}

#[test]
fn psp_rejects_bad_sets() {
    let p = FringePattern::new(Array2::zeros((4, 4)));
    assert!(matches!(psp_wrapped_phase(&[p.clone(), p.clone()]), Err(Error::Config(_))));
    let q = FringePattern::new(Array2::zeros((4, 8)));
    assert!(matches!(psp_wrapped_phase(&[p.clone(), p, q]), Err(Error::Shape(_))));
}

#[test]
fn unwrap_is_identity_without_wraps() {
    let phase = Array2::from_shape_fn((4, 16), |(_, x)| -2.0 + 0.25 * x as f64);
    let high = PhaseMap::wrapped_from(&phase);
    let low = PhaseMap::unwrapped(phase.mapv(|p| p / 8.0));
    let out = unwrap_two_frequency(&high, &low, 8.0).unwrap();
    assert!(!out.wrapped);
    assert_eq!(out.values, high.values);
}

#[test]
fn unwrap_restores_a_six_pi_ramp() {
    let (rows, cols) = (8, 400);
    let cfg = FppConfig::default();
    let ramp = Array2::from_shape_fn((rows, cols), |(_, x)| 6.0 * PI * x as f64 / (cols - 1) as f64);
    let ratio = cfg.frequency_ratio();
    let high = psp_wrapped_phase(&patterns_from_phase(&ramp, 0.5, 0.4, 4)).unwrap();
    let low = psp_wrapped_phase(&patterns_from_phase(&ramp.mapv(|p| p / ratio), 0.5, 0.4, 4)).unwrap();
    let out = unwrap_two_frequency(&high, &low, ratio).unwrap();
    let worst = out
        .values
        .iter()
        .zip(ramp.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn unwrap_rejects_unit_ratio() {
    let p = PhaseMap::wrapped_from(&Array2::zeros((2, 2)));
    assert!(matches!(unwrap_two_frequency(&p, &p, 1.0), Err(Error::Config(_))));
}

#[test]
fn phase_to_height_is_linear() {
    let cfg = FppConfig {
        mm_per_radian: 2.0,
        ..FppConfig::default()
    };
    let reference = PhaseMap::unwrapped(Array2::from_shape_fn((4, 6), |(y, x)| (x + y) as f64 * 0.3));
    let same = phase_to_height(&reference, &reference, &cfg).unwrap();
    assert!(same.values.iter().all(|v| *v == 0.0));
    let shifted = PhaseMap::unwrapped(reference.values.mapv(|v| v + 1.0));
    let h = phase_to_height(&shifted, &reference, &cfg).unwrap();
    assert!(h.values.iter().all(|v| (v - 2.0).abs() < 1e-5));
    let wrapped = PhaseMap::wrapped_from(&reference.values);
    assert!(matches!(phase_to_height(&wrapped, &reference, &cfg), Err(Error::State(_))));
}

fn round_trip_rmse(spec: &SceneSpec, cfg: &FppConfig) -> f64 {
    let truth = generate_height_map(spec).unwrap();
    let measured = measure_height(&truth, cfg).unwrap();
    let mut s = 0.0;
    let mut n = 0;
    for ((t, m), valid) in truth.values.iter().zip(measured.values.iter()).zip(truth.mask.iter()) {
        if *valid {
            s += ((t - m) as f64).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

#[test]
fn psp_round_trip_matches_generated_height() {
    for layout in [Layout::Single, Layout::Separated, Layout::Overlapping] {
        let spec = SceneSpec {
            layout,
            object_count: if layout == Layout::Single { 1 } else { 2 },
            ..small_spec(21)
        };
        let rmse = round_trip_rmse(&spec, &FppConfig::default());
        assert!(rmse < 1e-3 * spec.height_range_mm, "{layout:?}: {rmse}");
    }
}

#[test]
fn phase_shifted_set_sums_to_n_times_ambient() {
    let cfg = FppConfig::default();
    let h = generate_height_map(&small_spec(5)).unwrap();
    let set = render_phase_shifted_set(&h, &cfg, cfg.fringe_periods).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set[2].phase_shift_index, Some(2));
    let mut sum = Array2::<f64>::zeros(h.dim());
    for p in &set {
        sum += &p.intensities;
    }
    assert!(sum.iter().all(|v| (v - 4.0 * cfg.ambient).abs() < 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn round_trip_holds_for_random_scenes(seed in 0u64..10_000, range in 2.0f64..30.0, steps in 3usize..7) {
        let spec = SceneSpec { height_range_mm: range, canvas: (32, 64), ..small_spec(seed) };
        let cfg = FppConfig { phase_steps: steps, ..FppConfig::default() };
        prop_assume!(cfg.check_unwrap_budget(range).is_ok());
        let rmse = round_trip_rmse(&spec, &cfg);
        prop_assert!(rmse < 1e-3 * range, "{rmse}");
    }

    #[test]
    fn wrapped_values_stay_in_range(phi in -1e4f64..1e4) {
        let w = wrap_phase(phi);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((phi - w) / (2.0 * PI) - ((phi - w) / (2.0 * PI)).round()).abs() < 1e-6);
    }
}
