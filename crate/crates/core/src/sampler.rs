//! Deterministic Heun sampler for x0-prediction models, integrating the
//! probability-flow ODE `dx/dsigma = (x - mu(x, sigma)) / sigma` from
//! `sigma_max` down to the terminal sigma.

use alloc::vec::Vec;

use ndarray::ArrayD;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::elem::Elem;
use crate::error::{CoreError, Result};
use crate::schedule::{inference_sigmas, NoiseSchedule, SamplerConfig};

/// Full reverse trajectory: `states` holds the initial noise plus the state
/// after every step; `predicted_x0` and `uncertainties` hold the denoiser's
/// mu and log-variance at each step.
#[derive(Debug, Clone)]
pub struct Trajectory<F: Elem> {
    pub states: Vec<ArrayD<F>>,
    pub predicted_x0: Vec<ArrayD<F>>,
    pub uncertainties: Vec<ArrayD<F>>,
}

impl<F: Elem> Trajectory<F> {
    pub fn final_state(&self) -> &ArrayD<F> {
        self.states.last().expect("non-empty trajectory")
    }
}

fn check_finite<F: Elem>(arr: &ArrayD<F>, step: usize) -> Result<()> {
    if arr.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFiniteDenoiser { step })
    }
}

/// Integrate the probability-flow ODE with Heun's second-order method
/// (Euler predictor, trapezoidal corrector). The final step to a zero
/// terminal sigma is plain Euler, since the slope is undefined at sigma = 0.
///
/// The denoiser maps `(x, condition, sigma)` to `(mu, log_var)`; only `mu`
/// drives the ODE, while `log_var` is recorded for uncertainty export.
pub fn heun_sample<F: Elem>(
    denoiser: &mut impl FnMut(&ArrayD<F>, &ArrayD<F>, F) -> Result<(ArrayD<F>, ArrayD<F>)>,
    condition: &ArrayD<F>,
    schedule: &NoiseSchedule<F>,
    config: &SamplerConfig<F>,
    rng: &mut impl Rng,
) -> Result<Trajectory<F>> {
    let sigmas = inference_sigmas(schedule, config);
    let steps = config.num_inference_steps;

    let mut shape = condition.shape().to_vec();
    shape[1] = 1; // single-channel image
    let mut x = ArrayD::from_shape_simple_fn(ndarray::IxDyn(&shape), || {
        let z: f64 = rng.sample(StandardNormal);
        schedule.sigma_max() * F::lit(z)
    });

    let mut trajectory = Trajectory {
        states: Vec::with_capacity(steps + 1),
        predicted_x0: Vec::with_capacity(steps),
        uncertainties: Vec::with_capacity(steps),
    };
    trajectory.states.push(x.clone());

    for i in 0..steps {
        let (sigma, sigma_next) = (sigmas[i], sigmas[i + 1]);
        let h = sigma_next - sigma;

        let (mu, log_var) = denoiser(&x, condition, sigma)?;
        check_finite(&mu, i)?;
        check_finite(&log_var, i)?;
        if mu.shape() != x.shape() {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "denoiser mu shape {:?} != state shape {:?}",
                mu.shape(),
                x.shape()
            )));
        }

        let slope = (&x - &mu).mapv(|v| v / sigma);
        let x_pred = &x + &slope.mapv(|v| v * h);

        x = if sigma_next == F::zero() {
            x_pred
        } else {
            let (mu2, _) = denoiser(&x_pred, condition, sigma_next)?;
            check_finite(&mu2, i)?;
            let slope2 = (&x_pred - &mu2).mapv(|v| v / sigma_next);
            let half = F::lit(0.5);
            &x + &ndarray::Zip::from(&slope)
                .and(&slope2)
                .map_collect(|&a, &b| (a + b) * half * h)
        };
        check_finite(&x, i)?;

        trajectory.predicted_x0.push(mu);
        trajectory.uncertainties.push(log_var);
        trajectory.states.push(x.clone());
    }
    Ok(trajectory)
}

/// Plain Euler integration of the same ODE; reference oracle for convergence
/// tests. Starts from the supplied initial state rather than fresh noise.
pub fn euler_reference<F: Elem>(
    denoiser: &mut impl FnMut(&ArrayD<F>, &ArrayD<F>, F) -> Result<(ArrayD<F>, ArrayD<F>)>,
    condition: &ArrayD<F>,
    initial: &ArrayD<F>,
    sigmas: &[F],
) -> Result<ArrayD<F>> {
    let mut x = initial.clone();
    for i in 0..sigmas.len() - 1 {
        let (sigma, sigma_next) = (sigmas[i], sigmas[i + 1]);
        let (mu, _) = denoiser(&x, condition, sigma)?;
        let h = sigma_next - sigma;
        x = ndarray::Zip::from(&x)
            .and(&mu)
            .map_collect(|&xv, &mv| xv + (xv - mv) / sigma * h);
    }
    Ok(x)
}
