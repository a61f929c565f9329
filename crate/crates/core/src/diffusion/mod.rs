//! Diffusion machinery: noise schedules, the forward process, the
//! Gaussian posterior, and the shared reverse sampling loop.

pub mod forward;
pub mod sample;
pub mod schedule;

pub use forward::{noise_like, posterior_coeffs, posterior_mean_var, posterior_sample, q_sample_marginal, q_sample_step, step_weight};
pub use sample::{ddpm_sample, few_step_sample, sample_chain, DenoisePredictor};
pub use schedule::NoiseSchedule;
