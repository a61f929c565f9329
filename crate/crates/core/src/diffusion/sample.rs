//! The reverse-process sampling loop.
//!
//! One loop serves every step count: full-length sampling is just the
//! loop run on the full schedule, and few-step sampling runs it on a
//! coarse sub-schedule. Because the code path and the RNG draw order are
//! shared, a sub-schedule with every step kept reproduces full sampling
//! bit for bit.

use rand_chacha::ChaCha8Rng;

use crate::diffusion::forward::{noise_like, posterior_sample};
use crate::diffusion::schedule::NoiseSchedule;
use crate::nn::Tensor;

/// A clean-sample predictor: given `x_k` and the *base* timestep it sits
/// at, return the model's estimate of `x_0`.
pub trait DenoisePredictor {
    fn predict_x0(&mut self, x_k: &Tensor, base_t: usize) -> Tensor;
}

impl<F: FnMut(&Tensor, usize) -> Tensor> DenoisePredictor for F {
    fn predict_x0(&mut self, x_k: &Tensor, base_t: usize) -> Tensor {
        self(x_k, base_t)
    }
}

/// Run the reverse chain over every step of `schedule`, starting from
/// pure noise of the given shape. Randomness is consumed in a fixed
/// order: the initial noise first, then one posterior draw per step
/// except the last (which is deterministic).
pub fn sample_chain<D: DenoisePredictor>(
    denoiser: &mut D,
    schedule: &NoiseSchedule,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let mut x = noise_like(rng, rows, cols);
    for k in (1..=schedule.steps()).rev() {
        let x0_hat = denoiser.predict_x0(&x, schedule.base_timestep(k));
        x = posterior_sample(schedule, k, &x0_hat, &x, rng);
    }
    x
}

/// Full-length ancestral sampling.
pub fn ddpm_sample<D: DenoisePredictor>(
    denoiser: &mut D,
    schedule: &NoiseSchedule,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    sample_chain(denoiser, schedule, rows, cols, rng)
}

/// Sampling over a `k_steps`-step coarse sub-schedule of `schedule`.
pub fn few_step_sample<D: DenoisePredictor>(
    denoiser: &mut D,
    schedule: &NoiseSchedule,
    k_steps: usize,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> crate::error::Result<Tensor> {
    let sub = schedule.subschedule(k_steps)?;
    Ok(sample_chain(denoiser, &sub, rows, cols, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// An idealized predictor that always returns the same clean point.
    struct ConstPredictor(Tensor);

    impl DenoisePredictor for ConstPredictor {
        fn predict_x0(&mut self, _x: &Tensor, _t: usize) -> Tensor {
            self.0.clone()
        }
    }

    #[test]
    fn chain_converges_to_predicted_clean_point() {
        let schedule = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let target = Tensor::row_vec(vec![0.8, -0.4]);
        let mut denoiser = ConstPredictor(target.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = sample_chain(&mut denoiser, &schedule, 1, 2, &mut rng);
        // Final step is exactly the posterior mean at k=1, i.e. x0_hat.
        for (a, b) in x.data().iter().zip(target.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn full_size_few_step_run_is_bit_identical_to_full_run() {
        let schedule = NoiseSchedule::linear(64, 1e-4, 0.02).unwrap();
        let target = Tensor::from_fn(2, 3, |i, j| 0.1 * (i * 3 + j) as f64);

        let mut d1 = ConstPredictor(target.clone());
        let mut rng1 = ChaCha8Rng::seed_from_u64(42);
        let full = ddpm_sample(&mut d1, &schedule, 2, 3, &mut rng1);

        let mut d2 = ConstPredictor(target);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let few = few_step_sample(&mut d2, &schedule, 64, 2, 3, &mut rng2).unwrap();

        assert_eq!(full.data(), few.data());
    }

    #[test]
    fn few_step_sees_base_timesteps() {
        let schedule = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        struct Recorder(Vec<usize>);
        impl DenoisePredictor for Recorder {
            fn predict_x0(&mut self, x: &Tensor, t: usize) -> Tensor {
                self.0.push(t);
                Tensor::zeros(x.rows(), x.cols())
            }
        }
        let mut rec = Recorder(Vec::new());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        few_step_sample(&mut rec, &schedule, 4, 1, 1, &mut rng).unwrap();
        assert_eq!(rec.0, vec![100, 75, 50, 25]);
    }
}
