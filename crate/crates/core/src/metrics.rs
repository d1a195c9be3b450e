//! Image-quality metrics for [0,1]-normalized slices: SSIM (7x7 Gaussian
//! window), PSNR (capped at 100 dB), NMSE, and nHFEN (15x15
//! Laplacian-of-Gaussian, reflected boundaries), each with a tumor-masked
//! variant computed on the tight bounding box of the mask.

use alloc::format;
use alloc::vec::Vec;

use ndarray::Array2;

#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Elem;
use crate::error::{CoreError, Result};

/// One evaluation scope of the reporting protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricScope {
    Global,
    Tumor,
}

/// The four metric values for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues<F: Elem> {
    pub ssim: F,
    pub psnr: F,
    pub nmse: F,
    pub nhfen: F,
}

/// Per-case metric collection for one scope, with summary statistics.
#[derive(Debug, Clone)]
pub struct MetricReport<F: Elem> {
    pub scope: MetricScope,
    pub per_case: Vec<(u64, MetricValues<F>)>,
}

impl<F: Elem> MetricReport<F> {
    pub fn new(scope: MetricScope) -> Self {
        MetricReport { scope, per_case: Vec::new() }
    }

    pub fn push(&mut self, case_id: u64, values: MetricValues<F>) {
        self.per_case.push((case_id, values));
    }

    /// (mean, standard deviation) of one metric over the collected cases.
    pub fn mean_std(&self, select: impl Fn(&MetricValues<F>) -> F) -> (F, F) {
        let n = self.per_case.len();
        assert!(n > 0, "empty report");
        let nf = F::from_usize_(n);
        let mean = self
            .per_case
            .iter()
            .map(|(_, v)| select(v))
            .fold(F::zero(), |a, b| a + b)
            / nf;
        let var = self
            .per_case
            .iter()
            .map(|(_, v)| {
                let d = select(v) - mean;
                d * d
            })
            .fold(F::zero(), |a, b| a + b)
            / nf;
        (mean, var.sqrt())
    }
}

fn check_shapes<F: Elem>(pred: &Array2<F>, reference: &Array2<F>) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(CoreError::ShapeMismatch(format!(
            "metric inputs disagree: {:?} vs {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    Ok(())
}

/// Mirror index into [0, n): ...2 1 0 | 0 1 2 ... n-1 | n-1 n-2...
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Dense 2D convolution with reflected boundaries.
pub fn convolve_reflect<F: Elem>(img: &Array2<F>, kernel: &Array2<F>) -> Array2<F> {
    let (h, w) = img.dim();
    let (kh, kw) = kernel.dim();
    let (rh, rw) = (kh as isize / 2, kw as isize / 2);
    let mut out = Array2::<F>::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = F::zero();
            for di in 0..kh as isize {
                for dj in 0..kw as isize {
                    let src = img[[reflect(i + di - rh, h), reflect(j + dj - rw, w)]];
                    acc = acc + src * kernel[[di as usize, dj as usize]];
                }
            }
            out[[i as usize, j as usize]] = acc;
        }
    }
    out
}

/// Normalized 1D Gaussian taps of the given half-width.
fn gaussian_taps<F: Elem>(size: usize, sigma: f64) -> Vec<F> {
    let r = size as isize / 2;
    let mut taps: Vec<F> = (-r..=r)
        .map(|i| F::lit((-((i * i) as f64) / (2.0 * sigma * sigma)).exp()))
        .collect();
    let sum = taps.iter().fold(F::zero(), |a, b| a + *b);
    for t in &mut taps {
        *t = *t / sum;
    }
    taps
}

/// Separable Gaussian filtering with reflected boundaries (the optimized
/// path; tests compare it against dense 2D convolution).
pub fn gaussian_filter<F: Elem>(img: &Array2<F>, size: usize, sigma: f64) -> Array2<F> {
    let taps = gaussian_taps::<F>(size, sigma);
    let r = size as isize / 2;
    let (h, w) = img.dim();
    let mut tmp = Array2::<F>::zeros((h, w));
    for i in 0..h {
        for j in 0..w as isize {
            let mut acc = F::zero();
            for (t, k) in taps.iter().zip(-r..=r) {
                acc = acc + img[[i, reflect(j + k, w)]] * *t;
            }
            tmp[[i, j as usize]] = acc;
        }
    }
    let mut out = Array2::<F>::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w {
            let mut acc = F::zero();
            for (t, k) in taps.iter().zip(-r..=r) {
                acc = acc + tmp[[reflect(i + k, h), j]] * *t;
            }
            out[[i as usize, j]] = acc;
        }
    }
    out
}

/// 7x7, sigma 1.5 Gaussian window as a dense kernel (reference path).
pub fn ssim_window<F: Elem>() -> Array2<F> {
    let taps = gaussian_taps::<F>(7, 1.5);
    Array2::from_shape_fn((7, 7), |(i, j)| taps[i] * taps[j])
}

/// Zero-mean 15x15 Laplacian-of-Gaussian kernel with sigma 1.5.
pub fn log_kernel<F: Elem>() -> Array2<F> {
    let sigma = 1.5f64;
    let r = 7isize;
    let mut k = Array2::<F>::zeros((15, 15));
    for i in -r..=r {
        for j in -r..=r {
            let r2 = (i * i + j * j) as f64;
            let v = (r2 - 2.0 * sigma * sigma) / sigma.powi(4)
                * (-r2 / (2.0 * sigma * sigma)).exp();
            k[[(i + r) as usize, (j + r) as usize]] = F::lit(v);
        }
    }
    // exact zero mean so constant offsets are annihilated
    let mean = k.mean().unwrap();
    k.mapv_inplace(|v| v - mean);
    k
}

/// Mean local SSIM over a 7x7 Gaussian window (sigma 1.5), with
/// C1 = (0.01 * range)^2 and C2 = (0.03 * range)^2.
pub fn ssim<F: Elem>(pred: &Array2<F>, reference: &Array2<F>, data_range: F) -> Result<F> {
    check_shapes(pred, reference)?;
    if data_range <= F::zero() {
        return Err(CoreError::InvalidArgument(format!(
            "data_range must be positive, got {:?}",
            data_range.to_f64_()
        )));
    }
    let c1 = (F::lit(0.01) * data_range) * (F::lit(0.01) * data_range);
    let c2 = (F::lit(0.03) * data_range) * (F::lit(0.03) * data_range);

    let mu_x = gaussian_filter(pred, 7, 1.5);
    let mu_y = gaussian_filter(reference, 7, 1.5);
    let xx = gaussian_filter(&(pred * pred), 7, 1.5);
    let yy = gaussian_filter(&(reference * reference), 7, 1.5);
    let xy = gaussian_filter(&(pred * reference), 7, 1.5);

    let mut acc = F::zero();
    for idx in ndarray::indices(pred.dim()) {
        let (mx, my) = (mu_x[idx], mu_y[idx]);
        let vx = xx[idx] - mx * mx;
        let vy = yy[idx] - my * my;
        let cxy = xy[idx] - mx * my;
        let two = F::lit(2.0);
        let num = (two * mx * my + c1) * (two * cxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        acc = acc + num / den;
    }
    Ok(acc / F::from_usize_(pred.len()))
}

/// Documented cap for identical images (and a ceiling in general).
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 * log10(range^2 / MSE)`, capped at 100 dB.
pub fn psnr<F: Elem>(pred: &Array2<F>, reference: &Array2<F>, data_range: F) -> Result<F> {
    check_shapes(pred, reference)?;
    let mse = pred
        .iter()
        .zip(reference.iter())
        .map(|(&p, &r)| (p - r) * (p - r))
        .fold(F::zero(), |a, b| a + b)
        / F::from_usize_(pred.len());
    if mse == F::zero() {
        return Ok(F::lit(PSNR_CAP_DB));
    }
    let v = F::lit(10.0) * (data_range * data_range / mse).log10();
    Ok(if v > F::lit(PSNR_CAP_DB) { F::lit(PSNR_CAP_DB) } else { v })
}

/// `||pred - ref||^2 / ||ref||^2` over all pixels.
pub fn nmse<F: Elem>(pred: &Array2<F>, reference: &Array2<F>) -> Result<F> {
    check_shapes(pred, reference)?;
    let den = reference.iter().map(|&r| r * r).fold(F::zero(), |a, b| a + b);
    if den == F::zero() {
        return Err(CoreError::DegenerateReference(
            "NMSE reference is identically zero".into(),
        ));
    }
    let num = pred
        .iter()
        .zip(reference.iter())
        .map(|(&p, &r)| (p - r) * (p - r))
        .fold(F::zero(), |a, b| a + b);
    Ok(num / den)
}

/// `||LoG(pred) - LoG(ref)||_2 / ||LoG(ref)||_2`.
pub fn nhfen<F: Elem>(pred: &Array2<F>, reference: &Array2<F>) -> Result<F> {
    check_shapes(pred, reference)?;
    let k = log_kernel::<F>();
    let hp = convolve_reflect(pred, &k);
    let hr = convolve_reflect(reference, &k);
    let den = hr.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b).sqrt();
    // a flat reference leaves only rounding residue in the LoG response
    let ref_l2 = reference.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b).sqrt();
    if den <= F::lit(1e-9) * (F::one() + ref_l2) {
        return Err(CoreError::DegenerateReference(
            "reference has no high-frequency content".into(),
        ));
    }
    let num = hp
        .iter()
        .zip(hr.iter())
        .map(|(&p, &r)| (p - r) * (p - r))
        .fold(F::zero(), |a, b| a + b)
        .sqrt();
    Ok(num / den)
}

/// All four metrics for one pair.
pub fn evaluate<F: Elem>(
    pred: &Array2<F>,
    reference: &Array2<F>,
    data_range: F,
) -> Result<MetricValues<F>> {
    Ok(MetricValues {
        ssim: ssim(pred, reference, data_range)?,
        psnr: psnr(pred, reference, data_range)?,
        nmse: nmse(pred, reference)?,
        nhfen: nhfen(pred, reference)?,
    })
}

/// All four metrics restricted to the tight bounding box of `mask`, with
/// out-of-mask pixels inside the box zeroed in both images.
pub fn masked_metrics<F: Elem>(
    pred: &Array2<F>,
    reference: &Array2<F>,
    mask: &Array2<F>,
    data_range: F,
) -> Result<MetricValues<F>> {
    check_shapes(pred, reference)?;
    if pred.dim() != mask.dim() {
        return Err(CoreError::ShapeMismatch(format!(
            "mask shape {:?} vs image {:?}",
            mask.dim(),
            pred.dim()
        )));
    }
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((i, j), &m) in mask.indexed_iter() {
        if m != F::zero() {
            bounds = Some(match bounds {
                None => (i, i, j, j),
                Some((i0, i1, j0, j1)) => (i0.min(i), i1.max(i), j0.min(j), j1.max(j)),
            });
        }
    }
    let (i0, i1, j0, j1) =
        bounds.ok_or_else(|| CoreError::InvalidMask("mask selects no pixels".into()))?;
    let crop = |img: &Array2<F>| {
        Array2::from_shape_fn((i1 - i0 + 1, j1 - j0 + 1), |(i, j)| {
            let m = mask[[i0 + i, j0 + j]];
            if m != F::zero() { img[[i0 + i, j0 + j]] } else { F::zero() }
        })
    };
    evaluate(&crop(pred), &crop(reference), data_range)
}

#[cfg(test)]
mod tests;
