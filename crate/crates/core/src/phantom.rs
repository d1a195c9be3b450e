//! Synthetic paired-case generator: a half-ellipse breast with band-limited
//! parenchymal texture, 0-2 elliptical tumors, diffusion-weighted condition
//! channels, and an analytic enhancement target that is fully determined by
//! the conditions plus a seed-fixed smooth vascular field.

use alloc::format;
use alloc::vec::Vec;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Elem;
use crate::error::{CoreError, Result};
use crate::metrics::gaussian_filter;

/// One synthetic case: three condition channels, the enhancement target, and
/// the three region masks (mutually exclusive, jointly exhaustive).
#[derive(Debug, Clone)]
pub struct PhantomCase<F: Elem> {
    pub case_id: u64,
    pub seed: u64,
    pub t1_pre: Array2<F>,
    pub dwi_b0: Array2<F>,
    pub dwi_b800: Array2<F>,
    pub t1_post: Array2<F>,
    pub background_mask: Array2<F>,
    pub breast_mask: Array2<F>,
    pub tumor_mask: Array2<F>,
}

/// Dataset split labels; assignment is case-level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

fn clip01<F: Elem>(v: F) -> F {
    if v < F::zero() {
        F::zero()
    } else if v > F::one() {
        F::one()
    } else {
        v
    }
}

/// Normalize an array to [0, 1]; constant inputs map to 0.5.
fn normalize01<F: Elem>(x: &Array2<F>) -> Array2<F> {
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for &v in x.iter() {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi == lo {
        return Array2::from_elem(x.dim(), F::lit(0.5));
    }
    x.mapv(|v| (v - lo) / (hi - lo))
}

/// Deterministically generate one case. `size` must be divisible by 16 so
/// the default network accepts the images.
pub fn generate_case<F: Elem>(seed: u64, size: usize) -> Result<PhantomCase<F>> {
    if size % 16 != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "phantom size {size} not divisible by 16"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;

    // half-ellipse breast resting on the bottom edge
    let cx = s * (0.5 + 0.08 * (rng.gen::<f64>() - 0.5));
    let a = s * (0.32 + 0.08 * rng.gen::<f64>()); // horizontal semi-axis
    let b = s * (0.60 + 0.15 * rng.gen::<f64>()); // vertical semi-axis
    let inside_breast = |i: usize, j: usize| -> bool {
        let dy = (s - 1.0 - i as f64) / b;
        let dx = (j as f64 - cx) / a;
        dx * dx + dy * dy <= 1.0
    };

    // band-limited parenchymal texture: blurred white noise
    let noise = Array2::<F>::from_shape_simple_fn((size, size), || F::lit(rng.gen::<f64>()));
    let texture = normalize01(&gaussian_filter(&noise, 13, 3.0));

    // 0-2 elliptical tumors fully inside the breast
    let num_tumors = rng.gen_range(0..=2usize);
    let mut tumors: Vec<(f64, f64, f64, f64)> = Vec::new();
    for _ in 0..num_tumors {
        for _attempt in 0..64 {
            let ti = rng.gen_range(0.0..s);
            let tj = rng.gen_range(0.0..s);
            let rx = s / 24.0 + rng.gen::<f64>() * s / 32.0;
            let ry = s / 24.0 + rng.gen::<f64>() * s / 32.0;
            if inside_breast(ti as usize, tj as usize) {
                tumors.push((ti, tj, rx, ry));
                break;
            }
        }
    }
    let inside_tumor = |i: usize, j: usize| -> bool {
        tumors.iter().any(|&(ti, tj, rx, ry)| {
            let dy = (i as f64 - ti) / ry;
            let dx = (j as f64 - tj) / rx;
            dx * dx + dy * dy <= 1.0
        })
    };

    let mut breast_ellipse = Array2::<F>::zeros((size, size));
    let mut tumor_mask = Array2::<F>::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            if inside_breast(i, j) {
                if inside_tumor(i, j) {
                    tumor_mask[[i, j]] = F::one();
                } else {
                    breast_ellipse[[i, j]] = F::one();
                }
            }
        }
    }
    let breast_region = &breast_ellipse + &tumor_mask; // full ellipse
    let background_mask = breast_region.mapv(|v| F::one() - v);

    // pre-contrast anatomy: high-contrast parenchyma inside the breast over
    // a uniform nonzero signal floor (air/coil offset) outside it
    let t1_pre = ndarray::Zip::from(&breast_region)
        .and(&texture)
        .map_collect(|&m, &t| F::lit(0.15) + m * (F::lit(0.05) + F::lit(0.6) * t));

    // smoothed anatomy and its diffusion attenuation; tumors stay bright
    let dwi_b0 = gaussian_filter(&t1_pre, 7, 1.5).mapv(clip01);
    let dwi_b800 = ndarray::Zip::from(&dwi_b0)
        .and(&tumor_mask)
        .map_collect(|&b0, &tm| clip01(F::lit(0.3) * b0 + F::lit(0.6) * tm));

    // smooth vascular field: a local blur of the anatomy (no per-case
    // normalization), so the target is a local deterministic function of the
    // condition channels
    let vasc = gaussian_filter(&t1_pre, 11, 3.0).mapv(|v| clip01(F::lit(1.5) * v));

    let mut t1_post = Array2::<F>::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            let ratio = dwi_b800[[i, j]] / (dwi_b0[[i, j]] + F::lit(0.05));
            let enh = F::lit(0.15) * breast_ellipse[[i, j]] * vasc[[i, j]]
                + F::lit(0.6) * tumor_mask[[i, j]] * (F::lit(0.5) + F::lit(0.5) * ratio);
            t1_post[[i, j]] = clip01(t1_pre[[i, j]] + enh);
        }
    }

    Ok(PhantomCase {
        case_id: seed,
        seed,
        t1_pre,
        dwi_b0,
        dwi_b800,
        t1_post,
        background_mask,
        breast_mask: breast_ellipse,
        tumor_mask,
    })
}

/// Case-level split assignment for `num_cases` cases under the given
/// fractions; counts are rounded, with the test split absorbing remainders.
pub fn plan_splits(num_cases: usize, fractions: (f64, f64, f64)) -> Result<Vec<Split>> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "split fractions ({ft}, {fv}, {fe}) must be nonnegative and sum to 1"
        )));
    }
    if num_cases < 10 {
        return Err(CoreError::InvalidArgument(format!(
            "need at least 10 cases for a meaningful split, got {num_cases}"
        )));
    }
    let n_train = (num_cases as f64 * ft).round() as usize;
    let n_val = (num_cases as f64 * fv).round() as usize;
    if n_train + n_val > num_cases {
        return Err(CoreError::InvalidArgument(
            "rounded split exceeds the case count".into(),
        ));
    }
    let mut out = Vec::with_capacity(num_cases);
    for i in 0..num_cases {
        out.push(if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(out)
}
