//! Desk-scale co-speech gesture synthesis built around decoupled body-part
//! diffusion denoisers with a semi-implicit adversarial objective for few-step
//! sampling, a two-stage motion-prior optimizer for global trajectory and
//! fingers, a contrastive gesture-text alignment module, and a physical /
//! semantic evaluation metric suite.
//!
//! Everything runs on procedurally generated skeletal motion so the full
//! pipeline is exercisable on a single CPU: no datasets, no pretrained
//! encoders, no GPU.
//!
//! Module map:
//! - [`motion`]: skeleton, 6-D rotation math, forward kinematics, trajectory
//!   parameterization, body-part decomposition.
//! - [`diffusion`]: noise schedules, forward/posterior computation, the
//!   many-step ancestral sampler and the few-step coarse sampler.
//! - [`nn`]: a small reverse-mode tape, layers, AdamW, EMA.
//! - [`denoiser`]: condition embedding and the three-part decoupled denoiser
//!   with classifier-free guidance.
//! - [`train`]: the semi-implicit adversarial training objective and loop.
//! - [`align`]: gesture VAE + text encoder + predictor trained with NT-Xent.
//! - [`prior`]: trajectory and finger prior denoisers and the second-stage
//!   optimizer.
//! - [`metrics`]: FGD, beat alignment, diversity, skate, float, semantic
//!   alignment, foot-contact detection.
//! - [`synth`]: the procedural dataset generator.
//! - [`io`]: clip container, checkpoints, manifests, vocabulary files.

pub mod align;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod prior;
pub mod synth;
pub mod train;

pub use error::{CoreError, Result};
