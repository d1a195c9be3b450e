//! The U-shaped denoiser: convolutional encoder/decoder with spatial
//! self-attention at intermediate scales, a windowed-transformer bottleneck,
//! sigma-embedding injection, and a two-channel (mu, log-variance) head.

pub mod attention;
pub mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::autodiff::Tensor;
use crate::elem::Elem;
use crate::error::{CoreError, Result};

use attention::{SigmaEmbedding, SpatialAttention, WindowTransformerLayer};
use layers::{Conv2dLayer, ConvBlock, GroupNormLayer, LinearLayer, ParamList};

/// Denoiser hyperparameters. `in_channels` counts the noisy channel plus all
/// condition channels; scale `s` has `base_width * channel_multipliers[s]`
/// channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_scales: Vec<usize>,
    pub bottleneck_layers: usize,
    pub window_size: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 4,
            base_width: 32,
            channel_multipliers: alloc::vec![1, 2, 2, 4],
            attention_scales: alloc::vec![1, 2],
            bottleneck_layers: 2,
            window_size: 4,
            num_heads: 4,
            embed_dim: 128,
        }
    }
}

impl NetworkConfig {
    /// A tiny configuration for finite-difference gradient checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            in_channels: 4,
            base_width: 8,
            channel_multipliers: alloc::vec![1, 2],
            attention_scales: alloc::vec![1],
            bottleneck_layers: 2,
            window_size: 2,
            num_heads: 2,
            embed_dim: 16,
        }
    }

    pub fn num_scales(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn width(&self, scale: usize) -> usize {
        self.base_width * self.channel_multipliers[scale]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidArgument(msg));
        if self.in_channels < 2 {
            return bad(format!("in_channels {} < 2 (noisy + condition)", self.in_channels));
        }
        if self.channel_multipliers.is_empty() {
            return bad(String::from("channel_multipliers is empty"));
        }
        if self.bottleneck_layers % 2 != 0 {
            return bad(format!("bottleneck_layers {} is odd", self.bottleneck_layers));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return bad(format!("embed_dim {} must be even and >= 2", self.embed_dim));
        }
        let cb = self.width(self.num_scales() - 1);
        if cb % self.num_heads != 0 {
            return bad(format!(
                "bottleneck width {cb} not divisible by num_heads {}",
                self.num_heads
            ));
        }
        if self.window_size == 0 {
            return bad(String::from("window_size is zero"));
        }
        for &s in &self.attention_scales {
            if s >= self.num_scales() {
                return bad(format!("attention scale {s} >= num_scales {}", self.num_scales()));
            }
        }
        Ok(())
    }

    /// Validate a spatial input size against this configuration.
    pub fn validate_input(&self, h: usize, w: usize) -> Result<()> {
        let factor = 1usize << (self.num_scales() - 1);
        if h % factor != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "input height {h} not divisible by {factor}"
            )));
        }
        if w % factor != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "input width {w} not divisible by {factor}"
            )));
        }
        let (bh, bw) = (h / factor, w / factor);
        if bh % self.window_size != 0 || bw % self.window_size != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "bottleneck size {bh}x{bw} not divisible by window_size {}",
                self.window_size
            )));
        }
        Ok(())
    }
}

/// The denoiser's two heads, still attached to the graph.
pub struct ModelOutput<F: Elem> {
    pub mu: Tensor<F>,
    pub log_var: Tensor<F>,
}

/// Intermediate features captured for the dispersive loss: after the
/// transformer bottleneck and at the last decoder stage.
pub struct FeatureTaps<F: Elem> {
    pub bottleneck: Tensor<F>,
    pub final_decoder: Tensor<F>,
}

struct EncoderStage<F: Elem> {
    block: ConvBlock<F>,
    attn: Option<SpatialAttention<F>>,
    down: Option<Conv2dLayer<F>>,
}

struct DecoderStage<F: Elem> {
    up_conv: Conv2dLayer<F>,
    block: ConvBlock<F>,
    attn: Option<SpatialAttention<F>>,
}

pub struct DenoiserNet<F: Elem> {
    pub config: NetworkConfig,
    sigma_embed: SigmaEmbedding<F>,
    stem: Conv2dLayer<F>,
    encoder: Vec<EncoderStage<F>>,
    emb_to_bottleneck: LinearLayer<F>,
    bottleneck: Vec<WindowTransformerLayer<F>>,
    decoder: Vec<DecoderStage<F>>,
    head_norm: GroupNormLayer<F>,
    head: Conv2dLayer<F>,
}

impl<F: Elem> DenoiserNet<F> {
    pub fn new(rng: &mut impl Rng, config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let s_count = config.num_scales();
        let emb = config.embed_dim;

        let stem = Conv2dLayer::new(rng, config.in_channels, config.width(0), 3, 1, 1);

        let mut encoder = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let cin = if s == 0 { config.width(0) } else { config.width(s - 1) };
            let cout = config.width(s);
            encoder.push(EncoderStage {
                block: ConvBlock::new(rng, cin, cout, emb),
                attn: config
                    .attention_scales
                    .contains(&s)
                    .then(|| SpatialAttention::new(rng, cout)),
                down: (s + 1 < s_count)
                    .then(|| Conv2dLayer::new(rng, cout, cout, 3, 2, 1)),
            });
        }

        let cb = config.width(s_count - 1);
        let emb_to_bottleneck = LinearLayer::new(rng, emb, cb);
        let mut bottleneck = Vec::with_capacity(config.bottleneck_layers);
        for l in 0..config.bottleneck_layers {
            let shift = if l % 2 == 0 { 0 } else { config.window_size / 2 };
            bottleneck.push(WindowTransformerLayer::new(
                rng,
                cb,
                config.num_heads,
                config.window_size,
                shift,
            ));
        }

        let mut decoder = Vec::with_capacity(s_count - 1);
        for s in (0..s_count - 1).rev() {
            let c_above = config.width(s + 1);
            let cout = config.width(s);
            decoder.push(DecoderStage {
                up_conv: Conv2dLayer::new(rng, c_above, cout, 3, 1, 1),
                block: ConvBlock::new(rng, 2 * cout, cout, emb),
                attn: config
                    .attention_scales
                    .contains(&s)
                    .then(|| SpatialAttention::new(rng, cout)),
            });
        }

        // The log-variance channel starts at the loss clamp floor (-1.5): for
        // targets with little irreducible noise the optimal log sigma^2 sits
        // at the floor, and starting there keeps the early gradient budget on
        // the mean channel instead of a long log-variance descent.
        let head = Conv2dLayer::zeros(config.width(0), 2, 1, 1, 0);
        {
            let mut bias = head.bias.value_clone();
            bias[1] = F::lit(-1.5);
            head.bias.set_value(bias);
        }

        Ok(DenoiserNet {
            sigma_embed: SigmaEmbedding::new(rng, emb),
            stem,
            encoder,
            emb_to_bottleneck,
            bottleneck,
            decoder,
            head_norm: GroupNormLayer::new(config.width(0)),
            head,
            config,
        })
    }

    /// Full forward pass. `x_t` is (B, 1, H, W), `condition` is
    /// (B, C-1, H, W), `sigmas` holds one sigma per batch element.
    pub fn forward(
        &self,
        x_t: &Tensor<F>,
        condition: &Tensor<F>,
        sigmas: &[F],
    ) -> Result<(ModelOutput<F>, FeatureTaps<F>)> {
        let xs = x_t.shape();
        let cs = condition.shape();
        if xs.len() != 4 || xs[1] != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "noisy input must be (B, 1, H, W), got {xs:?}"
            )));
        }
        if cs.len() != 4 || cs[1] != self.config.in_channels - 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "condition must have {} channels, got {cs:?}",
                self.config.in_channels - 1
            )));
        }
        if xs[0] != cs[0] || xs[2] != cs[2] || xs[3] != cs[3] {
            return Err(CoreError::ShapeMismatch(format!(
                "noisy {xs:?} and condition {cs:?} disagree"
            )));
        }
        if sigmas.len() != xs[0] {
            return Err(CoreError::ShapeMismatch(format!(
                "{} sigmas for batch of {}",
                sigmas.len(),
                xs[0]
            )));
        }
        self.config.validate_input(xs[2], xs[3])?;

        let emb = self.sigma_embed.forward(sigmas);
        let mut h = self.stem.forward(&Tensor::concat_channels(&[x_t.clone(), condition.clone()]));

        let mut skips: Vec<Tensor<F>> = Vec::new();
        for stage in &self.encoder {
            h = stage.block.forward(&h, &emb);
            if let Some(attn) = &stage.attn {
                h = attn.forward(&h);
            }
            if let Some(down) = &stage.down {
                skips.push(h.clone());
                h = down.forward(&h);
            }
        }

        // sigma embedding broadcast onto bottleneck tokens, then the
        // alternating plain/shifted window transformer layers
        let b = xs[0];
        let cb = self.config.width(self.config.num_scales() - 1);
        let t = self.emb_to_bottleneck.forward(&emb);
        let zero_scale = Tensor::constant(ArrayD::zeros(IxDyn(&[b, cb])));
        h = h.scale_shift(&zero_scale, &t);
        for layer in &self.bottleneck {
            h = layer.forward(&h);
        }
        let bottleneck_tap = h.clone();

        for stage in &self.decoder {
            h = stage.up_conv.forward(&h.upsample_nearest_2x());
            let skip = skips.pop().expect("one skip per decoder stage");
            h = Tensor::concat_channels(&[skip, h]);
            h = stage.block.forward(&h, &emb);
            if let Some(attn) = &stage.attn {
                h = attn.forward(&h);
            }
        }
        let final_decoder_tap = h.clone();

        let out = self.head.forward(&self.head_norm.forward(&h).silu());
        let mu = out.slice_channels(0, 1);
        let log_var = out.slice_channels(1, 2);
        Ok((
            ModelOutput { mu, log_var },
            FeatureTaps { bottleneck: bottleneck_tap, final_decoder: final_decoder_tap },
        ))
    }

    /// All trainable parameters as (name, tensor) pairs in a stable order.
    pub fn params(&self) -> ParamList<F> {
        let mut out = ParamList::new();
        self.sigma_embed.collect("sigma_embed", &mut out);
        self.stem.collect("stem", &mut out);
        for (i, stage) in self.encoder.iter().enumerate() {
            stage.block.collect(&format!("enc{i}.block"), &mut out);
            if let Some(attn) = &stage.attn {
                attn.collect(&format!("enc{i}.attn"), &mut out);
            }
            if let Some(down) = &stage.down {
                down.collect(&format!("enc{i}.down"), &mut out);
            }
        }
        self.emb_to_bottleneck.collect("emb_to_bottleneck", &mut out);
        for (i, layer) in self.bottleneck.iter().enumerate() {
            layer.collect(&format!("bottleneck{i}"), &mut out);
        }
        for (i, stage) in self.decoder.iter().enumerate() {
            stage.up_conv.collect(&format!("dec{i}.up_conv"), &mut out);
            stage.block.collect(&format!("dec{i}.block"), &mut out);
            if let Some(attn) = &stage.attn {
                attn.collect(&format!("dec{i}.attn"), &mut out);
            }
        }
        self.head_norm.collect("head_norm", &mut out);
        self.head.collect("head", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.value().len()).sum()
    }

    /// Denoiser closure for the sampler: clamps nothing, returns raw
    /// (mu, log_var) values detached from the graph.
    pub fn denoise(
        &self,
        x: &ArrayD<F>,
        condition: &ArrayD<F>,
        sigma: F,
    ) -> Result<(ArrayD<F>, ArrayD<F>)> {
        let b = x.shape()[0];
        let xt = Tensor::constant(x.clone());
        let c = Tensor::constant(condition.clone());
        let sigmas = alloc::vec![sigma; b];
        let (out, _) = self.forward(&xt, &c, &sigmas)?;
        Ok((out.mu.value_clone(), out.log_var.value_clone()))
    }
}

#[cfg(test)]
mod tests;
