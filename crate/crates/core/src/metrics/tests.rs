use approx::assert_relative_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_image(seed: u64, h: usize, w: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>())
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = random_image(1, 16, 16);
    assert_relative_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn ssim_of_constant_images_reduces_to_luminance_term() {
    let a = Array2::from_elem((12, 12), 0.2);
    let b = Array2::from_elem((12, 12), 0.4);
    let c1 = 0.01f64 * 0.01;
    let expected = (2.0 * 0.2 * 0.4 + c1) / (0.2f64 * 0.2 + 0.4 * 0.4 + c1);
    assert_relative_eq!(ssim(&a, &b, 1.0).unwrap(), expected, max_relative = 1e-10);
}

#[test]
fn ssim_is_negative_for_inverted_checkerboard() {
    let x = Array2::from_shape_fn((16, 16), |(i, j)| ((i + j) % 2) as f64);
    let inv = x.mapv(|v| 1.0 - v);
    let s = ssim(&x, &inv, 1.0).unwrap();
    assert!(s < 0.0, "anti-correlated structure should give negative SSIM, got {s}");
}

#[test]
fn ssim_stays_in_range_on_random_pairs() {
    for seed in 0..10 {
        let a = random_image(seed, 8, 8);
        let b = random_image(seed + 100, 8, 8);
        let s = ssim(&a, &b, 1.0).unwrap();
        assert!((-1.0..=1.0).contains(&s), "ssim {s} out of range");
    }
}

#[test]
fn separable_gaussian_matches_dense_convolution() {
    let x = random_image(3, 8, 8);
    let fast = gaussian_filter(&x, 7, 1.5);
    let dense = convolve_reflect(&x, &ssim_window::<f64>());
    for (a, b) in fast.iter().zip(dense.iter()) {
        assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-12);
    }
}

/// SSIM recomputed with explicit per-window loops over the dense kernel.
fn ssim_reference(pred: &Array2<f64>, reference: &Array2<f64>, range: f64) -> f64 {
    let win = ssim_window::<f64>();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (h, w) = pred.dim();
    let mut acc = 0.0;
    for i in 0..h as isize {
        for j in 0..w as isize {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in -3..=3isize {
                for dj in -3..=3isize {
                    let k = win[[(di + 3) as usize, (dj + 3) as usize]];
                    let p = pred[[reflect(i + di, h), reflect(j + dj, w)]];
                    let r = reference[[reflect(i + di, h), reflect(j + dj, w)]];
                    mx += k * p;
                    my += k * r;
                    xx += k * p * p;
                    yy += k * r * r;
                    xy += k * p * r;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    acc / (h * w) as f64
}

#[test]
fn ssim_agrees_with_direct_reference_loops() {
    let a = random_image(4, 8, 8);
    let b = random_image(5, 8, 8);
    assert_relative_eq!(
        ssim(&a, &b, 1.0).unwrap(),
        ssim_reference(&a, &b, 1.0),
        max_relative = 1e-6
    );
}

#[test]
fn psnr_closed_forms() {
    let x = random_image(6, 8, 8);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), 100.0);
    let off_01 = x.mapv(|v| v + 0.1);
    assert_relative_eq!(psnr(&off_01, &x, 1.0).unwrap(), 20.0, max_relative = 1e-10);
    let off_001 = x.mapv(|v| v + 0.01);
    assert_relative_eq!(psnr(&off_001, &x, 1.0).unwrap(), 40.0, max_relative = 1e-8);
}

#[test]
fn nmse_closed_forms_and_errors() {
    let x = random_image(7, 8, 8);
    assert_eq!(nmse(&x, &x).unwrap(), 0.0);
    let doubled = x.mapv(|v| 2.0 * v);
    assert_relative_eq!(nmse(&doubled, &x).unwrap(), 1.0, max_relative = 1e-12);
    let zero = Array2::zeros((8, 8));
    assert_relative_eq!(nmse(&zero, &x).unwrap(), 1.0, max_relative = 1e-12);
    assert!(nmse(&x, &zero).is_err());
}

#[test]
fn nmse_grows_with_residual_scale() {
    let reference = random_image(8, 8, 8);
    let pred = random_image(9, 8, 8);
    let mut last = -1.0;
    for k in 0..5 {
        let a = k as f64 * 0.5;
        let blend = &pred * a + &reference * (1.0 - a);
        let v = nmse(&blend, &reference).unwrap();
        assert!(v > last, "nmse must increase with |a|");
        last = v;
    }
}

#[test]
fn nhfen_closed_forms() {
    let x = random_image(10, 16, 16);
    assert_eq!(nhfen(&x, &x).unwrap(), 0.0);
    let shifted = x.mapv(|v| v + 0.37);
    assert!(nhfen(&shifted, &x).unwrap() < 1e-6, "LoG must annihilate constants");
    let zero = Array2::zeros((16, 16));
    assert_relative_eq!(nhfen(&zero, &x).unwrap(), 1.0, max_relative = 1e-12);
    let flat = Array2::from_elem((16, 16), 0.5);
    assert!(nhfen(&x, &flat).is_err());
}

#[test]
fn nhfen_ignores_global_offsets_on_both_images() {
    let a = random_image(11, 12, 12);
    let b = random_image(12, 12, 12);
    let base = nhfen(&a, &b).unwrap();
    let off = nhfen(&a.mapv(|v| v + 3.0), &b.mapv(|v| v + 3.0)).unwrap();
    assert_relative_eq!(base, off, max_relative = 1e-6);
}

#[test]
fn full_mask_reproduces_global_metrics() {
    let a = random_image(13, 12, 12);
    let b = random_image(14, 12, 12);
    let mask = Array2::from_elem((12, 12), 1.0);
    let global = evaluate(&a, &b, 1.0).unwrap();
    let masked = masked_metrics(&a, &b, &mask, 1.0).unwrap();
    assert_eq!(global, masked);
}

#[test]
fn masked_metrics_on_identical_images() {
    let a = random_image(15, 12, 12);
    let mut mask = Array2::zeros((12, 12));
    for i in 3..8 {
        for j in 4..9 {
            mask[[i, j]] = 1.0;
        }
    }
    let m = masked_metrics(&a, &a, &mask, 1.0).unwrap();
    assert_relative_eq!(m.ssim, 1.0, max_relative = 1e-12);
    assert_eq!(m.psnr, 100.0);
    assert_eq!(m.nmse, 0.0);
    assert_eq!(m.nhfen, 0.0);
}

#[test]
fn two_pixel_mask_matches_hand_computed_nmse() {
    let mut pred = Array2::zeros((4, 4));
    let mut reference = Array2::zeros((4, 4));
    pred[[1, 1]] = 0.9;
    pred[[1, 2]] = 0.1;
    reference[[1, 1]] = 0.5;
    reference[[1, 2]] = 0.25;
    // distractor values outside the mask must be ignored
    pred[[0, 0]] = 7.0;
    reference[[3, 3]] = -2.0;
    let mut mask = Array2::zeros((4, 4));
    mask[[1, 1]] = 1.0;
    mask[[1, 2]] = 1.0;
    let m = masked_metrics(&pred, &reference, &mask, 1.0).unwrap();
    let expected = ((0.9f64 - 0.5).powi(2) + (0.1f64 - 0.25).powi(2))
        / (0.5f64.powi(2) + 0.25f64.powi(2));
    assert_relative_eq!(m.nmse, expected, max_relative = 1e-12);
}

#[test]
fn empty_mask_is_rejected() {
    let a = random_image(16, 8, 8);
    let mask = Array2::zeros((8, 8));
    assert!(masked_metrics(&a, &a, &mask, 1.0).is_err());
}

#[test]
fn report_summarizes_mean_and_std() {
    let mut report = MetricReport::<f64>::new(MetricScope::Global);
    for (i, s) in [0.8, 0.9, 1.0].iter().enumerate() {
        report.push(i as u64, MetricValues { ssim: *s, psnr: 30.0, nmse: 0.1, nhfen: 0.2 });
    }
    let (mean, std) = report.mean_std(|v| v.ssim);
    assert_relative_eq!(mean, 0.9, max_relative = 1e-12);
    assert_relative_eq!(std, (2.0 / 300.0f64).sqrt(), max_relative = 1e-9);
}
