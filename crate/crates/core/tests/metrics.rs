mod support;

use dyntomo::metrics::ssim::SSIM_K1;
use dyntomo::metrics::transport::{support as layer_support, MassPoint};
use dyntomo::metrics::*;
use dyntomo::net::tape::npcc_slices;
use dyntomo::Error;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::transport::w1_enumerate;

fn volume(bits: Vec<bool>, shape: (usize, usize, usize)) -> BinaryVolume {
    BinaryVolume::from_bits(Array3::from_shape_vec(shape, bits).unwrap(), BitsSource::Reconstruction)
}

fn random_volume(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), fill: f64) -> BinaryVolume {
    volume((0..shape.0 * shape.1 * shape.2).map(|_| rng.random::<f64>() < fill).collect(), shape)
}

/// Random 3×3 layer with between 1 and 4 set pixels.
fn small_layer(rng: &mut ChaCha8Rng) -> Array2<bool> {
    let k = rng.random_range(1..=4);
    let mut idx: Vec<usize> = (0..9).collect();
    for i in 0..k {
        let j = rng.random_range(i..9);
        idx.swap(i, j);
    }
    let mut a = Array2::from_elem((3, 3), false);
    for &i in &idx[..k] {
        a[(i / 3, i % 3)] = true;
    }
    a
}

fn coords(a: &Array2<bool>) -> Vec<(f64, f64)> {
    a.indexed_iter().filter(|(_, &b)| b).map(|((i, j), _)| (i as f64, j as f64)).collect()
}

#[test]
fn w1_matches_enumeration_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let (f, g) = (small_layer(&mut rng), small_layer(&mut rng));
        let exact = wasserstein1(f.view(), g.view()).unwrap();
        let oracle = w1_enumerate(&coords(&f), &coords(&g));
        assert!((exact - oracle).abs() <= 1e-9, "{exact} vs {oracle}\n{f:?}\n{g:?}");
    }
}

#[test]
fn w1_plan_has_the_right_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = Array2::from_shape_fn((12, 12), |_| rng.random::<f64>() < 0.3);
    let g = Array2::from_shape_fn((12, 12), |_| rng.random::<f64>() < 0.2);
    let (s, t) = (layer_support(f.view()), layer_support(g.view()));
    let plan = wasserstein1_points(&s, &t).unwrap();
    assert!(plan.entries.iter().all(|e| e.2 > 0.0));
    for r in plan.row_sums(s.len()) {
        assert!((r - 1.0 / s.len() as f64).abs() < 1e-12);
    }
    for c in plan.col_sums(t.len()) {
        assert!((c - 1.0 / t.len() as f64).abs() < 1e-12);
    }
    let recomputed: f64 = plan
        .entries
        .iter()
        .map(|&(i, j, m)| m * (s[i].x - t[j].x).hypot(s[i].y - t[j].y))
        .sum();
    assert!((recomputed - plan.cost).abs() < 1e-12);
}

#[test]
fn w1_translation_of_a_shape_costs_the_shift() {
    let f = Array2::from_shape_fn((10, 10), |(i, j)| (2..5).contains(&i) && (1..6).contains(&j));
    let g = Array2::from_shape_fn((10, 10), |(i, j)| (5..8).contains(&i) && (5..10).contains(&j));
    assert!((wasserstein1(f.view(), g.view()).unwrap() - 5.0).abs() < 1e-9);
    assert!((wasserstein1_pooled(f.view(), g.view(), 1).unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn w1_rejects_empty_layers() {
    let f = Array2::from_elem((4, 4), false);
    let mut g = f.clone();
    g[(1, 1)] = true;
    assert!(matches!(wasserstein1(f.view(), g.view()), Err(Error::EmptySupport(_))));
    assert!(matches!(wasserstein1(g.view(), f.view()), Err(Error::EmptySupport(_))));
}

#[test]
fn pe_transport_form_equals_pe_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..50 {
        let fill = 0.1 + 0.8 * (k as f64 / 50.0);
        let f = random_volume(&mut rng, (4, 16, 16), fill);
        let g = random_volume(&mut rng, (4, 16, 16), 0.5);
        let pe = probability_of_error(&f, &g).unwrap().overall;
        assert!((pe_transport_form(&f, &g).unwrap() - pe).abs() <= 1e-12);
    }
}

#[test]
fn pe_transport_form_holds_for_any_admissible_coupling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let f = random_volume(&mut rng, (2, 6, 6), 0.4);
        let g = random_volume(&mut rng, (2, 6, 6), 0.4);
        let n = f.bits.len();
        let coupling: Vec<(usize, usize)> = f
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i, rng.random_range(0..n)))
            .collect();
        let pe = probability_of_error(&f, &g).unwrap().overall;
        assert!((pe_transport_form_with(&f, &g, &coupling).unwrap() - pe).abs() <= 1e-12);
    }
}

#[test]
fn pe_rejects_shape_mismatch() {
    let a = volume(vec![false; 8], (2, 2, 2));
    let b = volume(vec![false; 12], (3, 2, 2));
    assert!(matches!(probability_of_error(&a, &b), Err(Error::ShapeMismatch { .. })));
    assert!(pe_transport_form(&a, &b).is_err());
}

#[test]
fn pcc_equals_negative_npcc() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let f: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = f.iter().map(|v| v * 0.3 + rng.random_range(-1.0..1.0)).collect();
        let p = pcc(&f, &g).unwrap();
        let n = npcc_slices(&f, &g).unwrap();
        assert!((p + n).abs() <= 1e-12, "{p} {n}");
        assert!((npcc_slices(&f, &f).unwrap() + 1.0).abs() <= 1e-12);
    }
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = Array2::from_shape_fn((24, 20), |_| rng.random::<f64>());
    assert!((ssim(f.view(), f.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
    let inv = f.mapv(|v| 1.0 - v);
    assert!(ssim(f.view(), inv.view(), 1.0).unwrap() < 1.0);
}

#[test]
fn ssim_of_constants_is_the_luminance_term() {
    let c1 = SSIM_K1 * SSIM_K1;
    for (a, b) in [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0), (0.9, 0.85)] {
        let f = Array2::from_elem((16, 16), a);
        let g = Array2::from_elem((16, 16), b);
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(f.view(), g.view(), 1.0).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn ssim_rejects_images_smaller_than_the_window() {
    let f = Array2::<f64>::zeros((8, 8));
    assert!(matches!(ssim(f.view(), f.view(), 1.0), Err(Error::InvalidParameter(_))));
}

#[test]
fn report_has_one_row_per_layer_and_overall() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = Array3::from_shape_fn((4, 16, 16), |_| if rng.random::<f64>() < 0.4 { -0.3 } else { 0.0 });
    let recon = truth.mapv(|v| v + rng.random_range(-0.1..0.1));
    let report = evaluate(&recon, &truth, &EvalOptions::default()).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l.split(',').count() == 5));
    let layers = &report.rows[..4];
    let mean_pe = layers.iter().map(|r| r.pe).sum::<f64>() / 4.0;
    assert!((report.overall().pe - mean_pe).abs() < 1e-15);
    assert_eq!(evaluate(&recon, &truth, &EvalOptions::default()).unwrap().to_csv(), csv);
}

fn bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n)
}

fn nonempty_points(n: usize) -> impl Strategy<Value = Vec<MassPoint>> {
    prop::collection::vec((0u8..6, 0u8..6, 1u64..4), 1..=n).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, mass)| MassPoint { x: x as f64, y: y as f64, mass })
            .collect()
    })
}

proptest! {
    #[test]
    fn pe_is_a_bounded_symmetric_metric(a in bits(48), b in bits(48), c in bits(48)) {
        let (a, b, c) = (volume(a, (3, 4, 4)), volume(b, (3, 4, 4)), volume(c, (3, 4, 4)));
        let ab = probability_of_error(&a, &b).unwrap().overall;
        let ba = probability_of_error(&b, &a).unwrap().overall;
        let bc = probability_of_error(&b, &c).unwrap().overall;
        let ac = probability_of_error(&a, &c).unwrap().overall;
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-15);
        prop_assert!((pe_transport_form(&a, &b).unwrap() - ab).abs() <= 1e-12);
    }

    #[test]
    fn w1_is_symmetric_and_satisfies_the_triangle_inequality(
        a in nonempty_points(6), b in nonempty_points(6), c in nonempty_points(6),
    ) {
        let ab = wasserstein1_points(&a, &b).unwrap().cost;
        let ba = wasserstein1_points(&b, &a).unwrap().cost;
        let bc = wasserstein1_points(&b, &c).unwrap().cost;
        let ac = wasserstein1_points(&a, &c).unwrap().cost;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(wasserstein1_points(&a, &a).unwrap().cost.abs() <= 1e-12);
    }

    #[test]
    fn pcc_is_invariant_under_positive_affine_maps(
        f in prop::collection::vec(-1.0f64..1.0, 16),
        g in prop::collection::vec(-1.0f64..1.0, 16),
        s in 0.1f64..10.0, t in -5.0f64..5.0,
    ) {
        let base = match pcc(&f, &g) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let h: Vec<f64> = g.iter().map(|v| s * v + t).collect();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
        prop_assert!((pcc(&f, &h).unwrap() - base).abs() <= 1e-10);
        let k: Vec<f64> = f.iter().map(|v| s * v - t).collect();
        prop_assert!((pcc(&k, &g).unwrap() - base).abs() <= 1e-10);
    }

    #[test]
    fn binarize_produces_bits_and_respects_polarity(
        x in prop::collection::vec(-3.0f64..3.0, 32), thr in 0.05f64..0.95,
    ) {
        let v = Array3::from_shape_vec((2, 4, 4), x).unwrap();
        let pos = binarize(&v, thr, Polarity::Positive, BitsSource::Reconstruction);
        let neg = binarize(&v.mapv(|a| -a), thr, Polarity::Negative, BitsSource::Reconstruction);
        prop_assert_eq!(&pos.bits, &neg.bits);
        prop_assert_eq!(pos.threshold, thr);
    }
}

#[test]
fn binarize_ramp_sets_the_upper_half() {
    let x = Array3::from_shape_fn((1, 1, 10), |(_, _, k)| k as f64 / 9.0);
    let b = binarize(&x, 0.5, Polarity::Positive, BitsSource::Reconstruction);
    let got: Vec<bool> = b.bits.iter().copied().collect();
    assert_eq!(got, (0..10).map(|k| k >= 5).collect::<Vec<_>>());
    assert_eq!(b.source, BitsSource::Reconstruction);
}
