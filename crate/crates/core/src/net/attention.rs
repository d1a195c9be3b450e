//! Attention components: sigma embedding, spatial self-attention over full
//! feature maps, and windowed multi-head self-attention transformer layers.

use alloc::format;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayD};
use rand::Rng;

use crate::autodiff::Tensor;
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Elem;

use super::layers::{Conv2dLayer, LayerNormLayer, LinearLayer, ParamList};

/// Raw sinusoidal features of `log(sigma)` at `embed_dim / 2` geometric
/// frequencies, sin and cos interleaved.
pub fn sinusoidal_features<F: Elem>(sigma: F, embed_dim: usize) -> Vec<F> {
    assert!(sigma > F::zero(), "sigma embedding requires sigma > 0");
    assert!(embed_dim >= 2 && embed_dim % 2 == 0, "embed_dim must be even");
    let half = embed_dim / 2;
    let x = sigma.ln();
    let mut out = Vec::with_capacity(embed_dim);
    for i in 0..half {
        // frequencies 10000^(-i / (half - 1)), geometric from 1 to 1e-4
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = F::lit(10_000.0f64.powf(-exponent));
        out.push((x * freq).sin());
        out.push((x * freq).cos());
    }
    out
}

/// Learned two-layer projection on top of the sinusoidal features.
pub struct SigmaEmbedding<F: Elem> {
    lin1: LinearLayer<F>,
    lin2: LinearLayer<F>,
    embed_dim: usize,
}

impl<F: Elem> SigmaEmbedding<F> {
    pub fn new(rng: &mut impl Rng, embed_dim: usize) -> Self {
        SigmaEmbedding {
            lin1: LinearLayer::new(rng, embed_dim, embed_dim),
            lin2: LinearLayer::new(rng, embed_dim, embed_dim),
            embed_dim,
        }
    }

    /// Embed one sigma per batch element; returns shape `(B, embed_dim)`.
    pub fn forward(&self, sigmas: &[F]) -> Tensor<F> {
        let b = sigmas.len();
        let mut raw = Array2::<F>::zeros((b, self.embed_dim));
        for (i, &s) in sigmas.iter().enumerate() {
            for (j, v) in sinusoidal_features(s, self.embed_dim).into_iter().enumerate() {
                raw[[i, j]] = v;
            }
        }
        let x = Tensor::constant(raw.into_dyn());
        self.lin2.forward(&self.lin1.forward(&x).silu())
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        self.lin1.collect(&format!("{prefix}.lin1"), out);
        self.lin2.collect(&format!("{prefix}.lin2"), out);
    }
}

/// Spatial self-attention over all H*W positions: Q, K, V from 1x1
/// convolutions, attention `softmax(Q^T K / sqrt(C))`, residual output
/// `h + W0(V A)`.
pub struct SpatialAttention<F: Elem> {
    wq: Conv2dLayer<F>,
    wk: Conv2dLayer<F>,
    wv: Conv2dLayer<F>,
    w0: Conv2dLayer<F>,
}

impl<F: Elem> SpatialAttention<F> {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        SpatialAttention {
            wq: Conv2dLayer::new(rng, channels, channels, 1, 1, 0),
            wk: Conv2dLayer::new(rng, channels, channels, 1, 1, 0),
            wv: Conv2dLayer::new(rng, channels, channels, 1, 1, 0),
            // zero-init output projection: the module starts as the identity
            w0: Conv2dLayer::zeros(channels, channels, 1, 1, 0),
        }
    }

    pub fn forward(&self, h: &Tensor<F>) -> Tensor<F> {
        let shape = h.shape();
        let (b, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
        let n = hh * ww;
        let q = self.wq.forward(h).reshape(&[b, c, n]);
        let k = self.wk.forward(h).reshape(&[b, c, n]);
        let v = self.wv.forward(h).reshape(&[b, c, n]);
        let scale = F::one() / F::from_usize_(c).sqrt();
        // (B, N, C) x (B, C, N) -> (B, N, N), rows = queries
        let logits = q.permute(&[0, 2, 1]).bmm(&k).mul_scalar(scale);
        let attn = logits.softmax_last();
        // weighted sum of values per query position
        let out = attn.bmm(&v.permute(&[0, 2, 1])); // (B, N, C)
        let out = out.permute(&[0, 2, 1]).reshape(&[b, c, hh, ww]);
        h.add(&self.w0.forward(&out))
    }

    /// Attention probabilities for diagnostics/tests: shape (B, N, N).
    pub fn attention_map(&self, h: &Tensor<F>) -> ArrayD<F> {
        let shape = h.shape();
        let (b, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
        let n = hh * ww;
        let q = self.wq.forward(h).reshape(&[b, c, n]);
        let k = self.wk.forward(h).reshape(&[b, c, n]);
        let scale = F::one() / F::from_usize_(c).sqrt();
        q.permute(&[0, 2, 1])
            .bmm(&k)
            .mul_scalar(scale)
            .softmax_last()
            .value_clone()
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.w0.collect(&format!("{prefix}.w0"), out);
    }
}

/// One windowed transformer layer: pre-norm multi-head self-attention inside
/// non-overlapping (optionally shifted) windows, then a pre-norm two-layer
/// feed-forward sublayer, both residual.
pub struct WindowTransformerLayer<F: Elem> {
    ln1: LayerNormLayer<F>,
    wq: LinearLayer<F>,
    wk: LinearLayer<F>,
    wv: LinearLayer<F>,
    proj: LinearLayer<F>,
    ln2: LayerNormLayer<F>,
    ffn1: LinearLayer<F>,
    ffn2: LinearLayer<F>,
    num_heads: usize,
    pub shift: usize,
    window_size: usize,
}

impl<F: Elem> WindowTransformerLayer<F> {
    pub fn new(
        rng: &mut impl Rng,
        channels: usize,
        num_heads: usize,
        window_size: usize,
        shift: usize,
    ) -> Self {
        assert!(channels % num_heads == 0, "heads must divide channel count");
        let hidden = channels * 4;
        WindowTransformerLayer {
            ln1: LayerNormLayer::new(channels),
            wq: LinearLayer::new(rng, channels, channels),
            wk: LinearLayer::new(rng, channels, channels),
            wv: LinearLayer::new(rng, channels, channels),
            proj: LinearLayer::zeros(channels, channels),
            ln2: LayerNormLayer::new(channels),
            ffn1: LinearLayer::new(rng, channels, hidden),
            ffn2: LinearLayer::zeros(hidden, channels),
            num_heads,
            shift,
            window_size,
        }
    }

    /// Multi-head attention over windowed tokens `(BW, T, C)`.
    pub fn window_msa(&self, tokens: &Tensor<F>) -> Tensor<F> {
        let shape = tokens.shape();
        let (bw, t, c) = (shape[0], shape[1], shape[2]);
        let heads = self.num_heads;
        let dh = c / heads;
        let y = self.ln1.forward(tokens);
        let split = |x: &Tensor<F>| {
            x.reshape(&[bw, t, heads, dh])
                .permute(&[0, 2, 1, 3])
                .reshape(&[bw * heads, t, dh])
        };
        let q = split(&self.wq.forward(&y));
        let k = split(&self.wk.forward(&y));
        let v = split(&self.wv.forward(&y));
        let scale = F::one() / F::from_usize_(dh).sqrt();
        let attn = q.bmm(&k.permute(&[0, 2, 1])).mul_scalar(scale).softmax_last();
        let out = attn.bmm(&v); // (BW*H, T, dh)
        let out = out
            .reshape(&[bw, heads, t, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[bw, t, c]);
        tokens.add(&self.proj.forward(&out))
    }

    /// Full layer over a feature map `(B, C, H, W)`: partition (with this
    /// layer's shift), window attention, reverse, then the FFN sublayer.
    pub fn forward(&self, h: &Tensor<F>) -> Tensor<F> {
        let shape = h.shape();
        let (c, hh, ww) = (shape[1], shape[2], shape[3]);
        let tokens = h.window_partition(self.window_size, self.shift);
        let tokens = self.window_msa(&tokens);
        let ffn = self.ffn2.forward(&self.ffn1.forward(&self.ln2.forward(&tokens)).silu());
        let tokens = tokens.add(&ffn);
        tokens.window_reverse(self.window_size, self.shift, c, hh, ww)
    }

    /// Attention probabilities per window for diagnostics: (BW*heads, T, T).
    pub fn attention_map(&self, tokens: &Tensor<F>) -> ArrayD<F> {
        let shape = tokens.shape();
        let (bw, t, c) = (shape[0], shape[1], shape[2]);
        let heads = self.num_heads;
        let dh = c / heads;
        let y = self.ln1.forward(tokens);
        let split = |x: &Tensor<F>| {
            x.reshape(&[bw, t, heads, dh])
                .permute(&[0, 2, 1, 3])
                .reshape(&[bw * heads, t, dh])
        };
        let q = split(&self.wq.forward(&y));
        let k = split(&self.wk.forward(&y));
        let scale = F::one() / F::from_usize_(dh).sqrt();
        q.bmm(&k.permute(&[0, 2, 1]))
            .mul_scalar(scale)
            .softmax_last()
            .value_clone()
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList<F>) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.proj.collect(&format!("{prefix}.proj"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ffn1.collect(&format!("{prefix}.ffn1"), out);
        self.ffn2.collect(&format!("{prefix}.ffn2"), out);
    }
}
