//! Frozen convolutional feature pyramid used by the perceptual loss: five
//! 3x3 convolution + ReLU stages at strictly decreasing resolutions
//! (1, 1/2, 1/4, 1/8, 1/16 of the input). Weights are either seeded
//! deterministically or supplied externally; they never receive gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::elem::Elem;
use crate::error::{CoreError, Result};
use crate::losses::FeatureExtractor;
use crate::net::layers::he_normal;

/// Channel widths of the five stages.
pub const STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 128];
/// Stride of each stage; the first keeps full resolution.
pub const STAGE_STRIDES: [usize; 5] = [1, 2, 2, 2, 2];

/// Fixed-weight five-stage feature pyramid.
pub struct FeaturePyramid<F: Elem> {
    weights: Vec<ArrayD<F>>,
    biases: Vec<ArrayD<F>>,
    in_channels: usize,
}

impl<F: Elem> FeaturePyramid<F> {
    /// Deterministic default: weights drawn from a fixed-seed generator, so
    /// every build of the artifact evaluates the same loss.
    pub fn deterministic(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(5);
        let mut biases = Vec::with_capacity(5);
        let mut cin = in_channels;
        for &cout in &STAGE_WIDTHS {
            weights.push(he_normal(&mut rng, &[cout, cin, 3, 3], cin * 9));
            biases.push(ArrayD::zeros(ndarray::IxDyn(&[cout])));
            cin = cout;
        }
        FeaturePyramid { weights, biases, in_channels }
    }

    /// Build from externally supplied named tensors (e.g. weights exported
    /// from a pretrained backbone); names follow `stage{i}.weight` /
    /// `stage{i}.bias` and every name and shape is validated.
    pub fn from_named_weights(
        in_channels: usize,
        named: &[(String, ArrayD<F>)],
    ) -> Result<Self> {
        let lookup = |name: &str| -> Result<&ArrayD<F>> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a)
                .ok_or_else(|| CoreError::InvalidArgument(format!("missing extractor tensor {name}")))
        };
        let mut weights = Vec::with_capacity(5);
        let mut biases = Vec::with_capacity(5);
        let mut cin = in_channels;
        for (i, &cout) in STAGE_WIDTHS.iter().enumerate() {
            let w = lookup(&format!("stage{i}.weight"))?;
            if w.shape() != [cout, cin, 3, 3] {
                return Err(CoreError::ShapeMismatch(format!(
                    "stage{i}.weight: expected {:?}, got {:?}",
                    [cout, cin, 3, 3],
                    w.shape()
                )));
            }
            let b = lookup(&format!("stage{i}.bias"))?;
            if b.shape() != [cout] {
                return Err(CoreError::ShapeMismatch(format!(
                    "stage{i}.bias: expected [{cout}], got {:?}",
                    b.shape()
                )));
            }
            weights.push(w.clone());
            biases.push(b.clone());
            cin = cout;
        }
        Ok(FeaturePyramid { weights, biases, in_channels })
    }

    /// Named tensors in the loader's format, for serialization.
    pub fn named_weights(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out = Vec::with_capacity(10);
        for i in 0..5 {
            out.push((format!("stage{i}.weight"), self.weights[i].clone()));
            out.push((format!("stage{i}.bias"), self.biases[i].clone()));
        }
        out
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
}

impl<F: Elem> FeatureExtractor<F> for FeaturePyramid<F> {
    fn num_scales(&self) -> usize {
        5
    }

    fn features(&self, x: &Tensor<F>) -> Vec<Tensor<F>> {
        let mut out = Vec::with_capacity(5);
        let mut h = x.clone();
        for i in 0..5 {
            // constants, not leaves: the extractor stays frozen while
            // gradients flow through its input
            let w = Tensor::constant(self.weights[i].clone());
            let b = Tensor::constant(self.biases[i].clone());
            h = h.conv2d(&w, &b, STAGE_STRIDES[i], 1).relu();
            out.push(h.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn input(seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 64, 64]), || rng.gen::<f64>())
    }

    #[test]
    fn resolutions_halve_from_full_size() {
        let pyr = FeaturePyramid::<f64>::deterministic(1, 7);
        let feats = pyr.features(&Tensor::constant(input(1)));
        let shapes: alloc::vec::Vec<_> = feats.iter().map(|f| f.shape()).collect();
        assert_eq!(
            shapes,
            alloc::vec![
                alloc::vec![1, 16, 64, 64],
                alloc::vec![1, 32, 32, 32],
                alloc::vec![1, 64, 16, 16],
                alloc::vec![1, 128, 8, 8],
                alloc::vec![1, 128, 4, 4],
            ]
        );
        for f in &feats {
            assert!(f.value().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn same_seed_gives_identical_features() {
        let a = FeaturePyramid::<f64>::deterministic(1, 7);
        let b = FeaturePyramid::<f64>::deterministic(1, 7);
        let x = Tensor::constant(input(2));
        for (fa, fb) in a.features(&x).iter().zip(b.features(&x)) {
            assert_eq!(fa.value_clone(), fb.value_clone());
        }
        let c = FeaturePyramid::<f64>::deterministic(1, 8);
        assert_ne!(
            a.features(&x)[0].value_clone(),
            c.features(&x)[0].value_clone()
        );
    }

    #[test]
    fn gradients_reach_the_input_but_not_the_weights() {
        let pyr = FeaturePyramid::<f64>::deterministic(1, 7);
        let x = Tensor::leaf(input(3));
        let feats = pyr.features(&x);
        feats.last().unwrap().sum_all().backward();
        let g = x.grad().expect("input must receive a gradient");
        assert!(g.iter().any(|v| *v != 0.0));
        // weights are plain arrays, untouched by the graph
        assert_eq!(pyr.named_weights().len(), 10);
    }

    #[test]
    fn round_trips_through_named_weights() {
        let pyr = FeaturePyramid::<f64>::deterministic(1, 7);
        let named = pyr.named_weights();
        let rebuilt = FeaturePyramid::from_named_weights(1, &named).unwrap();
        let x = Tensor::constant(input(4));
        for (fa, fb) in pyr.features(&x).iter().zip(rebuilt.features(&x)) {
            assert_eq!(fa.value_clone(), fb.value_clone());
        }
    }

    #[test]
    fn loader_rejects_missing_or_misshapen_tensors() {
        let pyr = FeaturePyramid::<f64>::deterministic(1, 7);
        let mut named = pyr.named_weights();
        named.remove(3);
        assert!(FeaturePyramid::from_named_weights(1, &named).is_err());

        let mut named = pyr.named_weights();
        named[0].1 = ArrayD::zeros(IxDyn(&[2, 2]));
        assert!(FeaturePyramid::from_named_weights(1, &named).is_err());
    }
}
