//! Training objective: uncertainty-weighted reconstruction, batch-dispersive
//! feature regularization, mask-aware multi-scale perceptual loss, the
//! perceptual-weight schedule, and their combination.

use alloc::format;
use alloc::vec::Vec;

use ndarray::{ArrayD, Axis, IxDyn};

use crate::autodiff::Tensor;
use crate::elem::Elem;
use crate::error::{CoreError, Result};
use crate::net::FeatureTaps;

/// Per-pixel spatial weights, already normalized to batch mean 1.
#[derive(Debug, Clone)]
pub struct WeightMap<F: Elem> {
    pub omega: ArrayD<F>,
}

/// Fixed loss hyperparameters; the perceptual weight alpha comes from
/// [`alpha_schedule`] instead.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights<F: Elem> {
    pub beta: F,
    pub tau: F,
    pub logvar_clamp: (F, F),
}

impl<F: Elem> Default for LossWeights<F> {
    fn default() -> Self {
        LossWeights {
            beta: F::lit(0.002),
            tau: F::lit(0.1),
            logvar_clamp: (F::lit(-1.5), F::lit(3.0)),
        }
    }
}

/// Raw region weights: background 1, breast 20, tumor 1000.
pub const REGION_WEIGHTS: [f64; 3] = [1.0, 20.0, 1000.0];

/// Assign 1/20/1000 by region and normalize to batch mean 1. The three
/// binary masks must partition every pixel.
pub fn build_weight_map<F: Elem>(
    background: &ArrayD<F>,
    breast: &ArrayD<F>,
    tumor: &ArrayD<F>,
) -> Result<WeightMap<F>> {
    if background.shape() != breast.shape() || breast.shape() != tumor.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "mask shapes disagree: {:?} / {:?} / {:?}",
            background.shape(),
            breast.shape(),
            tumor.shape()
        )));
    }
    let mut omega = ArrayD::<F>::zeros(background.raw_dim());
    for (((o, &bg), &br), &tu) in omega
        .iter_mut()
        .zip(background.iter())
        .zip(breast.iter())
        .zip(tumor.iter())
    {
        let binary = |v: F| v == F::zero() || v == F::one();
        if !(binary(bg) && binary(br) && binary(tu)) {
            return Err(CoreError::InvalidMask(format!(
                "masks must be binary, got ({:?}, {:?}, {:?})",
                bg.to_f64_(),
                br.to_f64_(),
                tu.to_f64_()
            )));
        }
        if bg + br + tu != F::one() {
            return Err(CoreError::InvalidMask(format!(
                "masks must partition each pixel; sum = {:?}",
                (bg + br + tu).to_f64_()
            )));
        }
        *o = bg * F::lit(REGION_WEIGHTS[0])
            + br * F::lit(REGION_WEIGHTS[1])
            + tu * F::lit(REGION_WEIGHTS[2]);
    }
    let mean = omega.mean().expect("non-empty mask");
    omega.mapv_inplace(|v| v / mean);
    Ok(WeightMap { omega })
}

/// Straight clamp: gradient is identity inside the interval, zero outside.
pub fn clamp_log_var<F: Elem>(log_var: &Tensor<F>, interval: (F, F)) -> Tensor<F> {
    log_var.clamp(interval.0, interval.1)
}

/// Uncertainty-weighted reconstruction loss:
/// `(1/N) sum_i omega_i * [exp(-log_var_i) * (mu_i - x_i)^2 + log_var_i]`
/// with N counting every pixel in the batch.
pub fn uncertainty_loss<F: Elem>(
    mu: &Tensor<F>,
    log_var: &Tensor<F>,
    target: &ArrayD<F>,
    weights: &WeightMap<F>,
) -> Result<Tensor<F>> {
    if mu.shape() != target.shape().to_vec()
        || mu.shape() != log_var.shape()
        || mu.shape() != weights.omega.shape().to_vec()
    {
        return Err(CoreError::ShapeMismatch(format!(
            "uncertainty loss: mu {:?}, log_var {:?}, target {:?}, omega {:?}",
            mu.shape(),
            log_var.shape(),
            target.shape(),
            weights.omega.shape()
        )));
    }
    let x = Tensor::constant(target.clone());
    let omega = Tensor::constant(weights.omega.clone());
    let diff = mu.sub(&x);
    let term = log_var.neg().exp().mul(&diff.square()).add(log_var);
    Ok(omega.mul(&term).mean_all())
}

/// Dispersive loss over a batch of feature vectors (rows of `features`):
/// unit-normalize rows, then `(1/B) sum_k log sum_{j != k} exp(<f_k, f_j>/tau)`.
pub fn dispersive_loss<F: Elem>(features: &Tensor<F>, tau: F) -> Result<Tensor<F>> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(CoreError::InvalidArgument(format!(
            "dispersive loss expects (B, D) features, got {shape:?}"
        )));
    }
    let b = shape[0];
    if b < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "dispersive loss needs a batch of at least 2, got {b}"
        )));
    }
    {
        let v = features.value();
        for (k, row) in v.axis_iter(Axis(0)).enumerate() {
            let norm: F = row.iter().map(|x| *x * *x).fold(F::zero(), |a, b| a + b);
            if norm == F::zero() {
                return Err(CoreError::InvalidArgument(format!(
                    "dispersive loss: feature vector {k} has zero norm"
                )));
            }
        }
    }
    let f = features.l2_normalize_rows();
    let sims = f.matmul(&f.permute(&[1, 0])).mul_scalar(F::one() / tau);
    // mask out the j = k diagonal after exponentiation
    let mut mask = ArrayD::<F>::ones(IxDyn(&[b, b]));
    for k in 0..b {
        mask[[k, k]] = F::zero();
    }
    let exp = sims.exp().mul(&Tensor::constant(mask));
    let ones = Tensor::constant(ArrayD::ones(IxDyn(&[b, 1])));
    let row_sums = exp.matmul(&ones);
    Ok(row_sums.ln().mean_all())
}

/// Dispersive loss applied to both feature taps (spatially average-pooled to
/// one vector per sample), averaged over the taps.
pub fn dispersive_from_taps<F: Elem>(taps: &FeatureTaps<F>, tau: F) -> Result<Tensor<F>> {
    let a = dispersive_loss(&taps.bottleneck.spatial_mean(), tau)?;
    let b = dispersive_loss(&taps.final_decoder.spatial_mean(), tau)?;
    Ok(a.add(&b).mul_scalar(F::lit(0.5)))
}

/// Produces a fixed-depth pyramid of feature maps at strictly decreasing
/// resolutions; gradients flow through the input, not the extractor.
pub trait FeatureExtractor<F: Elem> {
    fn num_scales(&self) -> usize;
    fn features(&self, x: &Tensor<F>) -> Vec<Tensor<F>>;
}

/// Per-scale weights for the perceptual loss.
pub fn default_layer_weights<F: Elem>() -> Vec<F> {
    alloc::vec![F::lit(0.25), F::lit(0.5), F::lit(0.5), F::lit(1.0), F::lit(1.0)]
}

/// Average-pool a (B, 1, H, W) map down to (B, 1, h, w); H and W must be
/// integer multiples of h and w.
pub fn average_pool_to<F: Elem>(x: &ArrayD<F>, h: usize, w: usize) -> ArrayD<F> {
    let s = x.shape();
    assert_eq!(s.len(), 4);
    let (b, c, hh, ww) = (s[0], s[1], s[2], s[3]);
    assert!(hh % h == 0 && ww % w == 0, "pooling requires integer factors");
    let (fh, fw) = (hh / h, ww / w);
    let inv = F::one() / F::from_usize_(fh * fw);
    let mut out = ArrayD::<F>::zeros(IxDyn(&[b, c, h, w]));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = F::zero();
                    for di in 0..fh {
                        for dj in 0..fw {
                            acc = acc + x[[bi, ci, i * fh + di, j * fw + dj]];
                        }
                    }
                    out[[bi, ci, i, j]] = acc * inv;
                }
            }
        }
    }
    out
}

/// Mask-aware multi-scale perceptual loss:
/// `sum_l lambda_l * || W_l (x) (phi_l(mu) - phi_l(x)) ||_1`, where W_l is the
/// weight map average-pooled to the resolution of scale l and broadcast over
/// feature channels.
pub fn perceptual_loss<F: Elem>(
    extractor: &impl FeatureExtractor<F>,
    mu: &Tensor<F>,
    target: &ArrayD<F>,
    weights: &WeightMap<F>,
    layer_weights: &[F],
) -> Result<Tensor<F>> {
    if layer_weights.len() != extractor.num_scales() {
        return Err(CoreError::InvalidArgument(format!(
            "{} layer weights for {} extractor scales",
            layer_weights.len(),
            extractor.num_scales()
        )));
    }
    let f_mu = extractor.features(mu);
    let f_x = extractor.features(&Tensor::constant(target.clone()));
    if f_mu.len() != extractor.num_scales() {
        return Err(CoreError::InvalidArgument(format!(
            "extractor produced {} scales, declared {}",
            f_mu.len(),
            extractor.num_scales()
        )));
    }
    let mut total: Option<Tensor<F>> = None;
    let mut last_res = usize::MAX;
    for ((fm, fx), &lambda) in f_mu.iter().zip(f_x.iter()).zip(layer_weights) {
        let s = fm.shape();
        if s[2] >= last_res {
            return Err(CoreError::InvalidArgument(format!(
                "extractor resolutions must strictly decrease, got {} after {}",
                s[2], last_res
            )));
        }
        last_res = s[2];
        let w_l = average_pool_to(&weights.omega, s[2], s[3]);
        // broadcast the 1-channel weight map across feature channels
        let w_b = w_l
            .broadcast(IxDyn(&[s[0], s[1], s[2], s[3]]))
            .expect("weight map broadcasts over channels")
            .to_owned();
        let term = fm
            .sub(fx)
            .mul(&Tensor::constant(w_b))
            .abs()
            .sum_all()
            .mul_scalar(lambda);
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    total.ok_or_else(|| CoreError::InvalidArgument("extractor produced no scales".into()))
}

/// Epoch-scheduled perceptual weight: 1.0 (epochs 0-4), 5.0 (5-9),
/// 10.0 (10-19), 20.0 afterwards.
pub fn alpha_schedule<F: Elem>(epoch: usize) -> F {
    if epoch < 5 {
        F::lit(1.0)
    } else if epoch < 10 {
        F::lit(5.0)
    } else if epoch < 20 {
        F::lit(10.0)
    } else {
        F::lit(20.0)
    }
}

/// Per-component record of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<F: Elem> {
    pub unc: F,
    pub perc: F,
    pub disp: F,
    pub alpha: F,
    pub beta: F,
    pub total: F,
}

/// Combine the components per `L_total = L_unc + alpha * L_perc + beta * L_disp`,
/// keeping the graph alive for backprop and reporting the scalar breakdown.
pub fn total_loss<F: Elem>(
    unc: &Tensor<F>,
    perc: &Tensor<F>,
    disp: &Tensor<F>,
    weights: &LossWeights<F>,
    epoch: usize,
) -> Result<(Tensor<F>, LossBreakdown<F>)> {
    let alpha = alpha_schedule::<F>(epoch);
    for (name, t) in [("unc", unc), ("perc", perc), ("disp", disp)] {
        if !t.scalar().is_finite() {
            return Err(CoreError::NonFiniteLoss(format!("{name} component is non-finite")));
        }
    }
    let total = unc
        .add(&perc.mul_scalar(alpha))
        .add(&disp.mul_scalar(weights.beta));
    let breakdown = LossBreakdown {
        unc: unc.scalar(),
        perc: perc.scalar(),
        disp: disp.scalar(),
        alpha,
        beta: weights.beta,
        total: total.scalar(),
    };
    Ok((total, breakdown))
}
