//! Parameterized layers: convolution, linear, and normalization wrappers
//! holding their weights as graph leaves, plus weight initialization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{linear_2d, Tensor};
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Elem;

/// Ordered collection of named parameters.
pub type ParamList<F> = Vec<(String, Tensor<F>)>;

pub(crate) fn he_normal<F: Elem>(
    rng: &mut impl Rng,
    shape: &[usize],
    fan_in: usize,
) -> ArrayD<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        F::lit(std * rng.sample::<f64, _>(StandardNormal))
    })
}

pub struct Conv2dLayer<F: Elem> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Elem> Conv2dLayer<F> {
    pub fn new(
        rng: &mut impl Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2dLayer {
            weight: Tensor::leaf(he_normal(rng, &[cout, cin, k, k], cin * k * k)),
            bias: Tensor::leaf(ArrayD::zeros(IxDyn(&[cout]))),
            stride,
            pad,
        }
    }

    /// Zero-initialized variant, used for residual output projections.
    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2dLayer {
            weight: Tensor::leaf(ArrayD::zeros(IxDyn(&[cout, cin, k, k]))),
            bias: Tensor::leaf(ArrayD::zeros(IxDyn(&[cout]))),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        // reflect padding keeps constant regions constant at the image border
        if self.pad == 0 {
            x.conv2d(&self.weight, &self.bias, self.stride, 0)
        } else {
            x.reflect_pad(self.pad)
                .conv2d(&self.weight, &self.bias, self.stride, 0)
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct LinearLayer<F: Elem> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Elem> LinearLayer<F> {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        LinearLayer {
            weight: Tensor::leaf(he_normal(rng, &[cin, cout], cin)),
            bias: Tensor::leaf(ArrayD::zeros(IxDyn(&[cout]))),
        }
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        LinearLayer {
            weight: Tensor::leaf(ArrayD::zeros(IxDyn(&[cin, cout]))),
            bias: Tensor::leaf(ArrayD::zeros(IxDyn(&[cout]))),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        linear_2d(x, &self.weight, &self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct GroupNormLayer<F: Elem> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub groups: usize,
}

impl<F: Elem> GroupNormLayer<F> {
    pub fn new(channels: usize) -> Self {
        let groups = if channels % 8 == 0 { 8 } else { 1 };
        GroupNormLayer {
            gamma: Tensor::leaf(ArrayD::ones(IxDyn(&[channels]))),
            beta: Tensor::leaf(ArrayD::zeros(IxDyn(&[channels]))),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.group_norm(&self.gamma, &self.beta, self.groups, F::lit(1e-5))
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

pub struct LayerNormLayer<F: Elem> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Elem> LayerNormLayer<F> {
    pub fn new(channels: usize) -> Self {
        LayerNormLayer {
            gamma: Tensor::leaf(ArrayD::ones(IxDyn(&[channels]))),
            beta: Tensor::leaf(ArrayD::zeros(IxDyn(&[channels]))),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.layer_norm(&self.gamma, &self.beta, F::lit(1e-5))
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Residual convolution block with pre-activation normalization and
/// FiLM-style sigma-embedding injection between the two 3x3 convolutions.
pub struct ConvBlock<F: Elem> {
    norm1: GroupNormLayer<F>,
    conv1: Conv2dLayer<F>,
    norm2: GroupNormLayer<F>,
    emb_proj: LinearLayer<F>,
    conv2: Conv2dLayer<F>,
    skip: Option<Conv2dLayer<F>>,
    cout: usize,
}

impl<F: Elem> ConvBlock<F> {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, embed_dim: usize) -> Self {
        ConvBlock {
            norm1: GroupNormLayer::new(cin),
            conv1: Conv2dLayer::new(rng, cin, cout, 3, 1, 1),
            norm2: GroupNormLayer::new(cout),
            emb_proj: LinearLayer::new(rng, embed_dim, 2 * cout),
            conv2: Conv2dLayer::zeros(cout, cout, 3, 1, 1),
            skip: (cin != cout).then(|| Conv2dLayer::new(rng, cin, cout, 1, 1, 0)),
            cout,
        }
    }

    /// `emb` has shape `(B, embed_dim)`.
    pub fn forward(&self, x: &Tensor<F>, emb: &Tensor<F>) -> Tensor<F> {
        let b = x.shape()[0];
        let h = self.conv1.forward(&self.norm1.forward(x).silu());
        let st = self.emb_proj.forward(emb); // (B, 2*cout)
        let st = st.reshape(&[b, 2 * self.cout]);
        let scale = st.slice_cols(0, self.cout);
        let shift = st.slice_cols(self.cout, 2 * self.cout);
        let h = self.norm2.forward(&h).scale_shift(&scale, &shift).silu();
        let h = self.conv2.forward(&h);
        match &self.skip {
            Some(skip) => skip.forward(x).add(&h),
            None => x.add(&h),
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        self.norm1.collect(&format!("{prefix}.norm1"), out);
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.norm2.collect(&format!("{prefix}.norm2"), out);
        self.emb_proj.collect(&format!("{prefix}.emb_proj"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        if let Some(skip) = &self.skip {
            skip.collect(&format!("{prefix}.skip"), out);
        }
    }
}
