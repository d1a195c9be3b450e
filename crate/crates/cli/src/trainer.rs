//! Training loop: AdamW with decoupled weight decay, constant-factor warm-up,
//! global gradient-norm clipping, the scheduled composite objective with
//! per-term ablation switches, bit-exact checkpoint/resume, sampling-based
//! evaluation, and the four-variant ablation harness.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cediff_core::autodiff::Tensor;
use cediff_core::extractor::FeaturePyramid;
use cediff_core::losses::{
    build_weight_map, clamp_log_var, default_layer_weights, dispersive_from_taps,
    perceptual_loss, total_loss, uncertainty_loss, LossWeights,
};
use cediff_core::metrics::{evaluate, masked_metrics, MetricReport, MetricScope};
use cediff_core::net::{DenoiserNet, NetworkConfig};
use cediff_core::sampler::heun_sample;
use cediff_core::schedule::{build_noise_schedule, NoiseSchedule, SamplerConfig};

use crate::checkpoint::{self, CheckpointMeta, RngState};
use crate::dataset::LoadedCase;

/// Which objective terms (and which architecture variant) a run uses. The
/// baseline keeps multi-scale attention on and replaces the uncertainty term
/// with a plain weighted MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub uncertainty: bool,
    pub dispersive: bool,
    pub perceptual: bool,
    pub multiscale_attention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            uncertainty: true,
            dispersive: true,
            perceptual: true,
            multiscale_attention: true,
        }
    }
}

/// Serializable mirror of the denoiser's [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfigFile {
    pub in_channels: usize,
    pub base_width: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_scales: Vec<usize>,
    pub bottleneck_layers: usize,
    pub window_size: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
}

impl Default for NetConfigFile {
    fn default() -> Self {
        NetConfigFile::from_core(&NetworkConfig::default())
    }
}

impl NetConfigFile {
    pub fn from_core(c: &NetworkConfig) -> Self {
        NetConfigFile {
            in_channels: c.in_channels,
            base_width: c.base_width,
            channel_multipliers: c.channel_multipliers.clone(),
            attention_scales: c.attention_scales.clone(),
            bottleneck_layers: c.bottleneck_layers,
            window_size: c.window_size,
            num_heads: c.num_heads,
            embed_dim: c.embed_dim,
        }
    }

    /// Core config; disabling multi-scale attention empties the attention
    /// scale list (the windowed bottleneck always stays).
    pub fn to_core(&self, multiscale_attention: bool) -> NetworkConfig {
        NetworkConfig {
            in_channels: self.in_channels,
            base_width: self.base_width,
            channel_multipliers: self.channel_multipliers.clone(),
            attention_scales: if multiscale_attention {
                self.attention_scales.clone()
            } else {
                Vec::new()
            },
            bottleneck_layers: self.bottleneck_layers,
            window_size: self.window_size,
            num_heads: self.num_heads,
            embed_dim: self.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub num_train_steps: usize,
    pub extractor_seed: u64,
    pub ablation: AblationFlags,
    pub network: NetConfigFile,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            warmup_epochs: 2,
            warmup_factor: 0.1,
            grad_clip_norm: 1.0,
            seed: 0,
            sigma_min: 0.01,
            sigma_max: 10.0,
            num_train_steps: 1000,
            extractor_seed: 17,
            ablation: AblationFlags::default(),
            network: NetConfigFile::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!("epochs must be >= 1");
        }
        if self.batch_size < 2 {
            bail!("batch_size must be >= 2 (the dispersive loss contrasts within a batch)");
        }
        if !(self.learning_rate > 0.0) {
            bail!("learning_rate must be positive, got {}", self.learning_rate);
        }
        if self.weight_decay < 0.0 {
            bail!("weight_decay must be nonnegative, got {}", self.weight_decay);
        }
        if !(self.grad_clip_norm > 0.0) {
            bail!("grad_clip_norm must be positive, got {}", self.grad_clip_norm);
        }
        if !(self.warmup_factor > 0.0 && self.warmup_factor <= 1.0) {
            bail!("warmup_factor must lie in (0, 1], got {}", self.warmup_factor);
        }
        Ok(())
    }
}

/// AdamW: Adam moments with bias correction plus decoupled weight decay.
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: Vec<ArrayD<f32>>,
    pub v: Vec<ArrayD<f32>>,
}

impl AdamW {
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|s| ArrayD::zeros(IxDyn(s))).collect(),
            v: shapes.iter().map(|s| ArrayD::zeros(IxDyn(s))).collect(),
        }
    }

    /// One update with already-clipped gradients; `lr` is the effective
    /// (warm-up-scaled) learning rate.
    pub fn step(
        &mut self,
        params: &[(String, Tensor<f32>)],
        grads: &[ArrayD<f32>],
        lr: f32,
        weight_decay: f32,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let mut value = p.value_clone();
            ndarray::Zip::from(&mut value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let update = (m / bc1) / ((v / bc2).sqrt() + self.eps) + weight_decay * *p;
                *p -= lr * update;
            });
            p.set_value(value);
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut [ArrayD<f32>], max_norm: f32) -> f32 {
    let sq: f32 = grads
        .iter()
        .map(|g| g.iter().map(|&v| v * v).sum::<f32>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// One training batch, already stacked into (B, C, H, W) arrays.
pub struct Batch {
    pub x0: ArrayD<f32>,
    pub cond: ArrayD<f32>,
    pub background: ArrayD<f32>,
    pub breast: ArrayD<f32>,
    pub tumor: ArrayD<f32>,
}

/// Condition channels of one case as a (1, 3, H, W) array.
pub fn condition_of(case: &LoadedCase) -> ArrayD<f32> {
    let (h, w) = case.t1_pre.dim();
    let mut out = ArrayD::zeros(IxDyn(&[1, 3, h, w]));
    for (c, img) in [&case.t1_pre, &case.dwi_b0, &case.dwi_b800].iter().enumerate() {
        for ((i, j), &v) in img.indexed_iter() {
            out[[0, c, i, j]] = v;
        }
    }
    out
}

/// Stack the selected cases into a batch.
pub fn make_batch(cases: &[LoadedCase], idxs: &[usize]) -> Batch {
    assert!(!idxs.is_empty());
    let (h, w) = cases[idxs[0]].t1_pre.dim();
    let b = idxs.len();
    let mut x0 = ArrayD::zeros(IxDyn(&[b, 1, h, w]));
    let mut cond = ArrayD::zeros(IxDyn(&[b, 3, h, w]));
    let mut bg = ArrayD::zeros(IxDyn(&[b, 1, h, w]));
    let mut br = ArrayD::zeros(IxDyn(&[b, 1, h, w]));
    let mut tu = ArrayD::zeros(IxDyn(&[b, 1, h, w]));
    for (bi, &idx) in idxs.iter().enumerate() {
        let case = &cases[idx];
        for i in 0..h {
            for j in 0..w {
                x0[[bi, 0, i, j]] = case.t1_post[[i, j]];
                cond[[bi, 0, i, j]] = case.t1_pre[[i, j]];
                cond[[bi, 1, i, j]] = case.dwi_b0[[i, j]];
                cond[[bi, 2, i, j]] = case.dwi_b800[[i, j]];
                bg[[bi, 0, i, j]] = case.background_mask[[i, j]];
                br[[bi, 0, i, j]] = case.breast_mask[[i, j]];
                tu[[bi, 0, i, j]] = case.tumor_mask[[i, j]];
            }
        }
    }
    Batch { x0, cond, background: bg, breast: br, tumor: tu }
}

/// One step's scalar record; `line()` is the log format compared bit-exactly
/// across runs.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub unc: f32,
    pub perc: f32,
    pub disp: f32,
    pub total: f32,
    pub alpha: f32,
    pub lr: f32,
    pub grad_norm: f32,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "epoch={} step={} unc={:e} perc={:e} disp={:e} total={:e} alpha={} lr={:e} grad_norm={:e}",
            self.epoch,
            self.step,
            self.unc,
            self.perc,
            self.disp,
            self.total,
            self.alpha,
            self.lr,
            self.grad_norm
        )
    }
}

fn zero_scalar() -> Tensor<f32> {
    Tensor::constant(ArrayD::zeros(IxDyn(&[])))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: DenoiserNet<f32>,
    pub extractor: FeaturePyramid<f32>,
    pub schedule: NoiseSchedule<f32>,
    pub opt: AdamW,
    pub loss_weights: LossWeights<f32>,
    pub layer_weights: Vec<f32>,
    pub noise_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: u64,
    params: Vec<(String, Tensor<f32>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net_cfg = config.network.to_core(config.ablation.multiscale_attention);
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = DenoiserNet::new(&mut init_rng, net_cfg).context("building the denoiser")?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(1);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(2);
        let schedule = build_noise_schedule(
            config.sigma_min as f32,
            config.sigma_max as f32,
            config.num_train_steps,
        )
        .context("building the noise schedule")?;
        let extractor = FeaturePyramid::deterministic(1, config.extractor_seed);
        let params = net.params();
        let shapes: Vec<Vec<usize>> = params.iter().map(|(_, t)| t.shape()).collect();
        Ok(Trainer {
            config,
            net,
            extractor,
            schedule,
            opt: AdamW::new(&shapes),
            loss_weights: LossWeights::default(),
            layer_weights: default_layer_weights(),
            noise_rng,
            shuffle_rng,
            epoch: 0,
            step: 0,
            params,
        })
    }

    pub fn params(&self) -> &[(String, Tensor<f32>)] {
        &self.params
    }

    /// Effective learning-rate multiplier: the constant warm-up factor during
    /// the first `warmup_epochs`, 1 afterwards.
    pub fn lr_scale(&self) -> f64 {
        if self.epoch < self.config.warmup_epochs {
            self.config.warmup_factor
        } else {
            1.0
        }
    }

    /// Draw timesteps and noise, then run [`Self::step_on_noisy`].
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let b = batch.x0.shape()[0];
        let timesteps = self.schedule.sample_timesteps(b, &mut self.noise_rng);
        let mut sigmas = Vec::with_capacity(b);
        for &t in &timesteps {
            sigmas.push(self.schedule.sigma(t)?);
        }
        let x_t = self.schedule.add_noise(&batch.x0, &timesteps, &mut self.noise_rng)?;
        self.step_on_noisy(batch, &x_t, &sigmas)
    }

    /// One optimization step on a fixed noisy input (deterministic given the
    /// arguments; used directly by convergence tests).
    pub fn step_on_noisy(&mut self, batch: &Batch, x_t: &ArrayD<f32>, sigmas: &[f32]) -> Result<StepLog> {
        let flags = self.config.ablation;
        let weights = build_weight_map(&batch.background, &batch.breast, &batch.tumor)?;

        let xt_t = Tensor::constant(x_t.clone());
        let cond_t = Tensor::constant(batch.cond.clone());
        let (out, taps) = self.net.forward(&xt_t, &cond_t, sigmas)?;
        let log_var = clamp_log_var(&out.log_var, self.loss_weights.logvar_clamp);

        let unc = if flags.uncertainty {
            uncertainty_loss(&out.mu, &log_var, &batch.x0, &weights)?
        } else {
            // baseline objective: plain region-weighted MSE
            let x = Tensor::constant(batch.x0.clone());
            let omega = Tensor::constant(weights.omega.clone());
            omega.mul(&out.mu.sub(&x).square()).mean_all()
        };
        let perc = if flags.perceptual {
            perceptual_loss(&self.extractor, &out.mu, &batch.x0, &weights, &self.layer_weights)?
        } else {
            zero_scalar()
        };
        let disp = if flags.dispersive {
            dispersive_from_taps(&taps, self.loss_weights.tau)?
        } else {
            zero_scalar()
        };
        let (total, breakdown) = total_loss(&unc, &perc, &disp, &self.loss_weights, self.epoch)?;

        for (_, p) in &self.params {
            p.zero_grad();
        }
        total.backward();
        let mut grads: Vec<ArrayD<f32>> = self
            .params
            .iter()
            .map(|(_, p)| p.grad().unwrap_or_else(|| ArrayD::zeros(p.value().raw_dim())))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip_norm as f32);
        let lr = (self.config.learning_rate * self.lr_scale()) as f32;
        self.opt
            .step(&self.params, &grads, lr, self.config.weight_decay as f32);
        self.step += 1;

        Ok(StepLog {
            epoch: self.epoch,
            step: self.step,
            unc: breakdown.unc,
            perc: breakdown.perc,
            disp: breakdown.disp,
            total: breakdown.total,
            alpha: breakdown.alpha,
            lr,
            grad_norm,
        })
    }

    fn rng_state(rng: &ChaCha8Rng, seed: u64, stream: u64) -> RngState {
        RngState { seed, stream, word_pos: rng.get_word_pos().to_string() }
    }

    /// Serialize parameters, optimizer moments, progress counters, RNG stream
    /// positions, and the config snapshot.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::with_capacity(3 * self.params.len());
        for (name, p) in &self.params {
            tensors.push((format!("param.{name}"), p.value_clone()));
        }
        for ((name, _), m) in self.params.iter().zip(&self.opt.m) {
            tensors.push((format!("adam_m.{name}"), m.clone()));
        }
        for ((name, _), v) in self.params.iter().zip(&self.opt.v) {
            tensors.push((format!("adam_v.{name}"), v.clone()));
        }
        let meta = CheckpointMeta {
            epoch: self.epoch,
            step: self.step,
            adam_t: self.opt.t,
            config: self.config.clone(),
            noise_rng: Self::rng_state(&self.noise_rng, self.config.seed, 1),
            shuffle_rng: Self::rng_state(&self.shuffle_rng, self.config.seed, 2),
        };
        checkpoint::save(path, &meta, &tensors)
    }

    /// Restore a trainer whose next step is bit-identical to the run that
    /// wrote the checkpoint.
    pub fn resume(path: &Path) -> Result<Self> {
        let (meta, tensors) = checkpoint::load(path)?;
        let mut trainer = Trainer::new(meta.config.clone())?;

        let lookup = |name: &str| -> Result<&ArrayD<f32>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a)
                .with_context(|| format!("checkpoint is missing tensor {name}"))
        };
        for i in 0..trainer.params.len() {
            let (name, p) = &trainer.params[i];
            for (prefix, dst) in [("param", None), ("adam_m", Some(0)), ("adam_v", Some(1))] {
                let stored = lookup(&format!("{prefix}.{name}"))?;
                if stored.shape() != p.shape().as_slice() {
                    bail!(
                        "checkpoint tensor {prefix}.{name} has shape {:?}, model expects {:?}",
                        stored.shape(),
                        p.shape()
                    );
                }
                match dst {
                    None => p.set_value(stored.clone()),
                    Some(0) => trainer.opt.m[i] = stored.clone(),
                    Some(_) => trainer.opt.v[i] = stored.clone(),
                }
            }
        }
        if tensors.len() != 3 * trainer.params.len() {
            bail!(
                "checkpoint holds {} tensors, model expects {}",
                tensors.len(),
                3 * trainer.params.len()
            );
        }
        trainer.opt.t = meta.adam_t;
        trainer.epoch = meta.epoch;
        trainer.step = meta.step;
        trainer.noise_rng = ChaCha8Rng::seed_from_u64(meta.noise_rng.seed);
        trainer.noise_rng.set_stream(meta.noise_rng.stream);
        trainer.noise_rng.set_word_pos(meta.noise_rng.word_pos_u128()?);
        trainer.shuffle_rng = ChaCha8Rng::seed_from_u64(meta.shuffle_rng.seed);
        trainer.shuffle_rng.set_stream(meta.shuffle_rng.stream);
        trainer.shuffle_rng.set_word_pos(meta.shuffle_rng.word_pos_u128()?);
        Ok(trainer)
    }

    /// Sample every case with the Heun sampler and score it against the
    /// ground truth; returns (global, tumor) reports. Tumor-free cases are
    /// skipped in the tumor report. Predictions are clamped to [0, 1].
    pub fn evaluate_cases(
        &self,
        cases: &[LoadedCase],
        num_steps: usize,
        eval_seed: u64,
    ) -> Result<(MetricReport<f64>, MetricReport<f64>)> {
        let mut global = MetricReport::new(MetricScope::Global);
        let mut tumor = MetricReport::new(MetricScope::Tumor);
        let cfg = SamplerConfig { num_inference_steps: num_steps, ..Default::default() };
        for case in cases {
            let pred = self.sample_case(case, &cfg, case_eval_seed(eval_seed, case.id))?;
            let gt = case.t1_post.mapv(|v| v as f64);
            let pred64 = pred.mapv(|v| v as f64);
            global.push(case.id, evaluate(&pred64, &gt, 1.0)?);
            if case.tumor_mask.iter().any(|&v| v == 1.0) {
                let mask = case.tumor_mask.mapv(|v| v as f64);
                tumor.push(case.id, masked_metrics(&pred64, &gt, &mask, 1.0)?);
            }
        }
        Ok((global, tumor))
    }

    /// One full reverse sampling pass for a case; returns the clamped 2-D
    /// prediction.
    pub fn sample_case(
        &self,
        case: &LoadedCase,
        cfg: &SamplerConfig<f32>,
        seed: u64,
    ) -> Result<Array2<f32>> {
        let traj = self.sample_trajectory(case, cfg, seed)?;
        let (h, w) = case.t1_pre.dim();
        let state = traj.final_state();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| state[[0, 0, i, j]].clamp(0.0, 1.0)))
    }

    /// Full trajectory (states, per-step predictions and uncertainties).
    pub fn sample_trajectory(
        &self,
        case: &LoadedCase,
        cfg: &SamplerConfig<f32>,
        seed: u64,
    ) -> Result<cediff_core::sampler::Trajectory<f32>> {
        let cond = condition_of(case);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut denoiser =
            |x: &ArrayD<f32>, c: &ArrayD<f32>, s: f32| self.net.denoise(x, c, s);
        Ok(heun_sample(&mut denoiser, &cond, &self.schedule, cfg, &mut rng)?)
    }
}

/// Per-case sampling seed: fixed mix of the evaluation seed and case id.
pub fn case_eval_seed(eval_seed: u64, case_id: u64) -> u64 {
    eval_seed ^ (case_id.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Train to `config.epochs`, writing one log line per step and a checkpoint
/// after every epoch; returns the checkpoint path.
pub fn run_training(
    trainer: &mut Trainer,
    train_cases: &[LoadedCase],
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<PathBuf> {
    if train_cases.len() < trainer.config.batch_size {
        bail!(
            "training needs at least one full batch: {} cases < batch_size {}",
            train_cases.len(),
            trainer.config.batch_size
        );
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let ckpt = out_dir.join("checkpoint.cedc");
    while trainer.epoch < trainer.config.epochs {
        let mut order: Vec<usize> = (0..train_cases.len()).collect();
        order.shuffle(&mut trainer.shuffle_rng);
        // trailing partial batches are dropped: deterministic step count, and
        // the dispersive term needs at least two samples
        for chunk in order.chunks_exact(trainer.config.batch_size) {
            let batch = make_batch(train_cases, chunk);
            let log_entry = trainer.train_step(&batch)?;
            writeln!(log, "{}", log_entry.line())?;
        }
        writeln!(log, "epoch={} complete", trainer.epoch)?;
        trainer.epoch += 1;
        trainer.save_checkpoint(&ckpt)?;
    }
    Ok(ckpt)
}

/// One ablation table row: the variant label, its switches, and its test
/// metrics.
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    pub global: MetricReport<f64>,
    pub tumor: MetricReport<f64>,
}

/// The four ablation variants, cumulative in spec order.
pub fn ablation_variants() -> Vec<(&'static str, AblationFlags)> {
    let base = AblationFlags {
        uncertainty: false,
        dispersive: false,
        perceptual: false,
        multiscale_attention: true,
    };
    vec![
        ("Baseline", base),
        ("+UncA", AblationFlags { uncertainty: true, ..base }),
        (
            "+UncA+FDisp",
            AblationFlags { uncertainty: true, dispersive: true, ..base },
        ),
        (
            "Full",
            AblationFlags {
                uncertainty: true,
                dispersive: true,
                perceptual: true,
                multiscale_attention: true,
            },
        ),
    ]
}

/// Train all four variants from the same seed and data, then evaluate each on
/// the test split.
pub fn run_ablation(
    base_config: &TrainConfig,
    train_cases: &[LoadedCase],
    test_cases: &[LoadedCase],
    out_dir: &Path,
    eval_steps: usize,
    eval_seed: u64,
    log: &mut dyn Write,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, flags) in ablation_variants() {
        writeln!(log, "ablation variant={label}")?;
        let mut config = base_config.clone();
        config.ablation = flags;
        let mut trainer = Trainer::new(config)?;
        let variant_dir = out_dir.join(label.replace('+', "plus_").to_lowercase());
        run_training(&mut trainer, train_cases, &variant_dir, log)?;
        let (global, tumor) = trainer.evaluate_cases(test_cases, eval_steps, eval_seed)?;
        rows.push(AblationRow { label: label.to_string(), flags, global, tumor });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
