use cediff_core::net::NetworkConfig;
use cediff_core::phantom::generate_case;

use super::*;

fn cases(n: usize, size: usize) -> Vec<LoadedCase> {
    (0..n)
        .map(|i| {
            let c = generate_case::<f32>(100 + i as u64, size).unwrap();
            LoadedCase {
                id: i as u64,
                t1_pre: c.t1_pre,
                dwi_b0: c.dwi_b0,
                dwi_b800: c.dwi_b800,
                t1_post: c.t1_post,
                background_mask: c.background_mask,
                breast_mask: c.breast_mask,
                tumor_mask: c.tumor_mask,
            }
        })
        .collect()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 2,
        network: NetConfigFile::from_core(&NetworkConfig::tiny()),
        ..Default::default()
    }
}

fn frozen_inputs(trainer: &mut Trainer, batch: &Batch) -> (ArrayD<f32>, Vec<f32>) {
    let b = batch.x0.shape()[0];
    let timesteps = trainer.schedule.sample_timesteps(b, &mut trainer.noise_rng);
    let sigmas: Vec<f32> = timesteps
        .iter()
        .map(|&t| trainer.schedule.sigma(t).unwrap())
        .collect();
    let x_t = trainer
        .schedule
        .add_noise(&batch.x0, &timesteps, &mut trainer.noise_rng)
        .unwrap();
    (x_t, sigmas)
}

#[test]
fn config_defaults_match_the_declared_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!(c.epochs, 100);
    assert_eq!(c.batch_size, 8);
    assert_eq!(c.learning_rate, 1e-4);
    assert_eq!(c.weight_decay, 1e-2);
    assert_eq!(c.warmup_epochs, 2);
    assert_eq!(c.warmup_factor, 0.1);
    assert_eq!(c.grad_clip_norm, 1.0);
    assert_eq!(c.sigma_min, 0.01);
    assert_eq!(c.sigma_max, 10.0);
    assert_eq!(c.num_train_steps, 1000);
    assert_eq!(c.ablation, AblationFlags::default());
}

#[test]
fn config_rejects_bad_values_and_unknown_fields() {
    let mut c = TrainConfig::default();
    c.batch_size = 1;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.grad_clip_norm = 0.0;
    assert!(c.validate().is_err());
    assert!(toml::from_str::<TrainConfig>("learning_rate = 0.001").is_ok());
    assert!(toml::from_str::<TrainConfig>("not_a_field = 1").is_err());
}

#[test]
fn warmup_scales_the_learning_rate_for_two_epochs() {
    let mut trainer = Trainer::new(tiny_config()).unwrap();
    assert_eq!(trainer.lr_scale(), 0.1);
    trainer.epoch = 1;
    assert_eq!(trainer.lr_scale(), 0.1);
    trainer.epoch = 2;
    assert_eq!(trainer.lr_scale(), 1.0);
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut grads = vec![
        ArrayD::from_elem(IxDyn(&[3]), 2.0f32),
        ArrayD::from_elem(IxDyn(&[4]), -2.0f32),
    ];
    let pre = clip_global_norm(&mut grads, 1.0);
    assert!((pre - (7.0f32 * 4.0).sqrt()).abs() < 1e-6);
    let post: f32 = grads
        .iter()
        .map(|g| g.iter().map(|&v| v * v).sum::<f32>())
        .sum::<f32>()
        .sqrt();
    assert!((post - 1.0).abs() < 1e-6, "post-clip norm {post}");

    // small gradients are untouched
    let mut small = vec![ArrayD::from_elem(IxDyn(&[2]), 0.1f32)];
    let orig = small[0].clone();
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0], orig);
}

#[test]
fn adamw_first_step_moves_by_lr_against_the_gradient_sign() {
    let p = Tensor::leaf(ArrayD::from_elem(IxDyn(&[2]), 1.0f32));
    let params = vec![("w".to_string(), p.clone())];
    let grads = vec![ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5f32, -0.5]).unwrap()];
    let mut opt = AdamW::new(&[vec![2]]);
    opt.step(&params, &grads, 0.01, 0.0);
    // bias-corrected first step: update = g / (|g| + eps) = sign(g)
    let v = p.value_clone();
    assert!((v[[0]] - (1.0 - 0.01)).abs() < 1e-5, "got {}", v[[0]]);
    assert!((v[[1]] - (1.0 + 0.01)).abs() < 1e-5, "got {}", v[[1]]);
}

#[test]
fn adamw_decoupled_weight_decay_shrinks_params_without_gradient() {
    let p = Tensor::leaf(ArrayD::from_elem(IxDyn(&[1]), 2.0f32));
    let params = vec![("w".to_string(), p.clone())];
    let grads = vec![ArrayD::zeros(IxDyn(&[1]))];
    let mut opt = AdamW::new(&[vec![1]]);
    opt.step(&params, &grads, 0.1, 0.5);
    // zero gradient: only the decay term lr * wd * p acts
    let v = p.value_clone()[[0]];
    assert!((v - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-6, "got {v}");
}

#[test]
fn batches_stack_cases_in_index_order() {
    let data = cases(3, 32);
    let batch = make_batch(&data, &[2, 0]);
    assert_eq!(batch.x0.shape(), &[2, 1, 32, 32]);
    assert_eq!(batch.cond.shape(), &[2, 3, 32, 32]);
    assert_eq!(batch.x0[[0, 0, 20, 16]], data[2].t1_post[[20, 16]]);
    assert_eq!(batch.cond[[1, 2, 20, 16]], data[0].dwi_b800[[20, 16]]);
    assert_eq!(batch.tumor[[1, 0, 20, 16]], data[0].tumor_mask[[20, 16]]);
}

#[test]
fn repeated_steps_on_a_frozen_batch_decrease_the_loss() {
    let mut config = tiny_config();
    config.epochs = 10;
    let mut trainer = Trainer::new(config).unwrap();
    trainer.epoch = 2; // past warm-up
    let data = cases(2, 32);
    let batch = make_batch(&data, &[0, 1]);
    let (x_t, sigmas) = frozen_inputs(&mut trainer, &batch);

    let mut totals = Vec::with_capacity(50);
    for _ in 0..50 {
        let log = trainer.step_on_noisy(&batch, &x_t, &sigmas).unwrap();
        assert!(log.total.is_finite());
        totals.push(log.total);
    }
    let decreases = totals.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        decreases as f64 >= 0.9 * (totals.len() - 1) as f64,
        "only {decreases}/49 decreasing steps: {totals:?}"
    );
    assert!(totals.last().unwrap() < totals.first().unwrap());
}

#[test]
fn disabling_the_dispersive_term_matches_a_zero_beta_run_exactly() {
    let data = cases(2, 32);
    let batch = make_batch(&data, &[0, 1]);

    let mut off_cfg = tiny_config();
    off_cfg.ablation.dispersive = false;
    let mut t_off = Trainer::new(off_cfg).unwrap();

    let mut t_zero = Trainer::new(tiny_config()).unwrap();
    t_zero.loss_weights.beta = 0.0;

    let (x_t, sigmas) = frozen_inputs(&mut t_off, &batch);
    let log_off = t_off.step_on_noisy(&batch, &x_t, &sigmas).unwrap();
    let log_zero = t_zero.step_on_noisy(&batch, &x_t, &sigmas).unwrap();

    assert_eq!(log_off.disp, 0.0, "disabled term must report zero");
    assert_eq!(log_off.total, log_zero.total);
    assert_eq!(log_off.grad_norm, log_zero.grad_norm, "gradients must agree bit-exactly");
    for ((_, a), (_, b)) in t_off.params().iter().zip(t_zero.params()) {
        assert_eq!(a.value_clone(), b.value_clone());
    }
}

#[test]
fn checkpoint_resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.cedc");
    let data = cases(4, 32);
    let batch = make_batch(&data, &[0, 1]);

    let mut config = tiny_config();
    config.epochs = 5;
    let mut a = Trainer::new(config.clone()).unwrap();
    for _ in 0..3 {
        a.train_step(&batch).unwrap();
    }
    a.save_checkpoint(&path).unwrap();

    let mut b = Trainer::resume(&path).unwrap();
    assert_eq!(b.step, 3);
    for _ in 0..5 {
        let la = a.train_step(&batch).unwrap();
        let lb = b.train_step(&batch).unwrap();
        assert_eq!(la.line(), lb.line(), "resumed run diverged");
    }
    for ((_, pa), (_, pb)) in a.params().iter().zip(b.params()) {
        assert_eq!(pa.value_clone(), pb.value_clone());
    }
}

#[test]
fn identical_seeds_give_bit_identical_training_logs() {
    let data = cases(4, 32);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Trainer::new(tiny_config()).unwrap();
        let mut log = Vec::new();
        run_training(&mut trainer, &data, dir.path(), &mut log).unwrap();
        String::from_utf8(log).unwrap()
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

#[test]
fn evaluation_reports_cover_the_cases() {
    let trainer = Trainer::new(tiny_config()).unwrap();
    let data = cases(3, 32);
    let (global, tumor) = trainer.evaluate_cases(&data, 3, 9).unwrap();
    assert_eq!(global.per_case.len(), 3);
    let with_tumor = data
        .iter()
        .filter(|c| c.tumor_mask.iter().any(|&v| v == 1.0))
        .count();
    assert_eq!(tumor.per_case.len(), with_tumor);
}

#[test]
fn ablation_variants_are_cumulative() {
    let v = ablation_variants();
    assert_eq!(v.len(), 4);
    assert_eq!(v[0].0, "Baseline");
    assert!(!v[0].1.uncertainty && !v[0].1.dispersive && !v[0].1.perceptual);
    assert!(v.iter().all(|(_, f)| f.multiscale_attention));
    assert!(v[1].1.uncertainty && !v[1].1.dispersive);
    assert!(v[2].1.uncertainty && v[2].1.dispersive && !v[2].1.perceptual);
    assert!(v[3].1.uncertainty && v[3].1.dispersive && v[3].1.perceptual);
}
