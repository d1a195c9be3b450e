//! Forward noising process: geometric sigma schedule over training timesteps,
//! additive (variance-exploding) noise injection, and the descending sigma
//! ladder used at inference.

use alloc::format;
use alloc::vec::Vec;

use ndarray::ArrayD;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::elem::Elem;
use crate::error::{CoreError, Result};

/// Monotone map `t -> sigma_t` for `t in {1..T}`, geometrically spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<F: Elem> {
    sigma_min: F,
    sigma_max: F,
    sigmas: Vec<F>,
}

impl<F: Elem> NoiseSchedule<F> {
    /// Raw constructor from an explicit sigma list, bypassing validation.
    /// Intended for tests (degenerate or zero-noise schedules).
    pub fn from_sigmas(sigmas: Vec<F>) -> Self {
        assert!(!sigmas.is_empty());
        NoiseSchedule {
            sigma_min: sigmas[0],
            sigma_max: *sigmas.last().unwrap(),
            sigmas,
        }
    }

    pub fn sigma_min(&self) -> F {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> F {
        self.sigma_max
    }

    pub fn num_train_steps(&self) -> usize {
        self.sigmas.len()
    }

    /// Sigma at 1-based timestep `t`.
    pub fn sigma(&self, t: usize) -> Result<F> {
        if t < 1 || t > self.sigmas.len() {
            return Err(CoreError::TimestepOutOfRange { t, max: self.sigmas.len() });
        }
        Ok(self.sigmas[t - 1])
    }

    /// Draw uniform timesteps in `[1, T]`, independently per batch element.
    pub fn sample_timesteps(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(batch_size >= 1);
        let t = self.sigmas.len();
        (0..batch_size).map(|_| rng.gen_range(1..=t)).collect()
    }

    /// Additive noising `x_t = x_0 + sigma_t * z` with one timestep per batch
    /// element; the clean image is never scaled.
    pub fn add_noise(
        &self,
        x0: &ArrayD<F>,
        timesteps: &[usize],
        rng: &mut impl Rng,
    ) -> Result<ArrayD<F>> {
        let batch = x0.shape()[0];
        if timesteps.len() != batch {
            return Err(CoreError::ShapeMismatch(format!(
                "{} timesteps for a batch of {batch}",
                timesteps.len()
            )));
        }
        let mut sigmas = Vec::with_capacity(batch);
        for &t in timesteps {
            sigmas.push(self.sigma(t)?);
        }
        let per_sample = x0.len() / batch;
        let mut out = x0.clone();
        let slice = out.as_slice_mut().expect("standard layout");
        for (bi, &sigma) in sigmas.iter().enumerate() {
            for v in &mut slice[bi * per_sample..(bi + 1) * per_sample] {
                let z: f64 = rng.sample(StandardNormal);
                *v = *v + sigma * F::lit(z);
            }
        }
        Ok(out)
    }
}

/// Build the geometric training schedule
/// `sigma_t = sigma_min * (sigma_max / sigma_min)^((t-1)/(T-1))`.
pub fn build_noise_schedule<F: Elem>(
    sigma_min: F,
    sigma_max: F,
    num_train_steps: usize,
) -> Result<NoiseSchedule<F>> {
    if !(sigma_min > F::zero()) || !(sigma_max > F::zero()) || sigma_min >= sigma_max {
        return Err(CoreError::InvalidSchedule(format!(
            "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
        )));
    }
    if num_train_steps < 2 {
        return Err(CoreError::InvalidSchedule(format!(
            "need at least 2 training timesteps, got {num_train_steps}"
        )));
    }
    let ratio = sigma_max / sigma_min;
    let denom = F::from_usize_(num_train_steps - 1);
    let sigmas = (0..num_train_steps)
        .map(|i| sigma_min * ratio.powf(F::from_usize_(i) / denom))
        .collect();
    Ok(NoiseSchedule { sigma_min, sigma_max, sigmas })
}

/// Integration method for the reverse sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerMethod {
    #[default]
    Heun,
}

/// Reverse-sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig<F: Elem> {
    pub num_inference_steps: usize,
    pub method: SamplerMethod,
    /// Sigma at which the trajectory terminates.
    pub final_sigma: F,
}

impl<F: Elem> Default for SamplerConfig<F> {
    fn default() -> Self {
        SamplerConfig {
            num_inference_steps: 15,
            method: SamplerMethod::Heun,
            final_sigma: F::zero(),
        }
    }
}

/// Descending sigma ladder for inference: `num_inference_steps` points
/// geometrically spaced from `sigma_max` down to `sigma_min`, with the
/// terminal `final_sigma` appended (length `num_inference_steps + 1`).
pub fn inference_sigmas<F: Elem>(
    schedule: &NoiseSchedule<F>,
    config: &SamplerConfig<F>,
) -> Vec<F> {
    let n = config.num_inference_steps;
    assert!(n >= 1, "need at least one inference step");
    let mut out = Vec::with_capacity(n + 1);
    if n == 1 {
        out.push(schedule.sigma_max());
    } else {
        let ratio = schedule.sigma_max() / schedule.sigma_min();
        let denom = F::from_usize_(n - 1);
        for i in 0..n {
            out.push(
                schedule.sigma_max() * ratio.powf(-(F::from_usize_(i) / denom)),
            );
        }
    }
    out.push(config.final_sigma);
    out
}
