//! The semi-implicit adversarial training objective and loops.
//!
//! Large-stride denoising cannot rely on the small-step Gaussian
//! assumption, so the stepwise match between the model's posterior draw
//! `x̂_{t−1}` and the forward draw `x_{t−1}` is learned adversarially: a
//! conditional discriminator judges (candidate, context `x_t`, condition,
//! step) tuples, while an auxiliary forward-diffusion (AFD) term anchors
//! the same pair in the metric sense with a `(1−β)/β` trust weight, and a
//! plain reconstruction term anchors `x̂0`. The discriminator is kept
//! smooth with an R1-style gradient penalty at real samples.
//!
//! The module exposes the individual loss terms (so they can be verified
//! in isolation), the combined objective with a per-term breakdown, a
//! row-data training loop used by the 2-D benchmark, and the full motion
//! training loop with logging, checkpointing, EMA, and resume.

mod disc;
mod session;

pub use disc::{gradient_penalty, DiscConfig, Discriminator};
pub use session::{train_rows, MlpDenoiser, RowTrainOutcome, TrainOutcome, TrainRun, TrainState};

use serde::{Deserialize, Serialize};

use crate::diffusion::{step_weight, NoiseSchedule};
use crate::error::{CoreError, Result};
use crate::nn::{NodeId, ParamStore, Tape};

/// Which generator objective the loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Adversarial stepwise matching + reconstruction + AFD.
    #[default]
    SemiImplicit,
    /// Plain `x̂0` regression (the mode-averaging baseline); the
    /// discriminator and the λ weights are ignored.
    PureL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_denoiser: f64,
    pub lr_discriminator: f64,
    pub gradient_penalty_coef: f64,
    pub lambda_recon: f64,
    pub lambda_afd: f64,
    pub ema_decay: f64,
    /// Size of the coarse training schedule; sampling must use the same
    /// stride count for the learned posteriors to apply.
    pub steps_k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub objective: Objective,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_denoiser: 3e-5,
            lr_discriminator: 1.25e-4,
            gradient_penalty_coef: 0.02,
            lambda_recon: 1.0,
            lambda_afd: 0.25,
            ema_decay: 0.999,
            steps_k: 50,
            batch_size: 4,
            iterations: 1000,
            objective: Objective::SemiImplicit,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_denoiser > 0.0) || !(self.lr_discriminator > 0.0) {
            return Err(CoreError::validation("learning rates must be positive"));
        }
        if self.gradient_penalty_coef < 0.0 {
            return Err(CoreError::validation("gradient penalty coefficient must be >= 0"));
        }
        if self.lambda_recon < 0.0 || self.lambda_afd < 0.0 {
            return Err(CoreError::validation("loss weights must be >= 0"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(CoreError::validation("EMA decay must lie in (0, 1)"));
        }
        if self.steps_k == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(CoreError::validation(
                "steps_k, batch_size and iterations must be positive",
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(CoreError::validation("checkpoint_every must be positive"));
        }
        Ok(())
    }
}

/// Non-saturating logistic GAN losses from raw logits.
///
/// The discriminator maximizes `log D(real) + log(1 − D(fake))` and the
/// generator minimizes `−log D(fake)`; both are computed through
/// softplus, which realizes the probability clamp: a discriminator at
/// probability `1 − 1e-7` contributes `~1e-7` to its loss rather than a
/// `−log 0` blowup. Logits at zero give exactly `2·ln 2` / `ln 2`.
pub fn adversarial_loss(
    tape: &mut Tape,
    real_logits: NodeId,
    fake_logits: NodeId,
) -> (NodeId, NodeId) {
    let neg_real = tape.scale(real_logits, -1.0);
    let sp_real = tape.softplus(neg_real);
    let real_term = tape.mean_all(sp_real);
    let sp_fake = tape.softplus(fake_logits);
    let fake_term = tape.mean_all(sp_fake);
    let disc = tape.add(real_term, fake_term);

    let neg_fake = tape.scale(fake_logits, -1.0);
    let sp_gen = tape.softplus(neg_fake);
    let gen = tape.mean_all(sp_gen);
    (disc, gen)
}

/// Auxiliary forward-diffusion constraint at step `k` of `schedule`:
/// `(1−β_k)/β_k` times the batch-mean squared norm of the stepwise
/// mismatch, where rows are batch elements.
pub fn afd_loss(
    tape: &mut Tape,
    x_prev_hat: NodeId,
    x_prev: NodeId,
    schedule: &NoiseSchedule,
    k: usize,
) -> NodeId {
    let d = tape.sub(x_prev_hat, x_prev);
    let sq = tape.mul(d, d);
    let per_row = tape.row_sum(sq);
    let mean = tape.mean_all(per_row);
    tape.scale(mean, step_weight(schedule, k))
}

/// Mean squared error between the denoised estimate and the clean data.
pub fn recon_loss(tape: &mut Tape, x0_hat: NodeId, x0: NodeId) -> NodeId {
    tape.mse(x0_hat, x0)
}

/// `shadow ← decay·shadow + (1−decay)·params`, elementwise over every
/// named tensor.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) {
    for (name, p) in params.iter() {
        let s = shadow.get_mut(name);
        for k in 0..p.len() {
            let sv = s.data()[k];
            s.data_mut()[k] = decay * sv + (1.0 - decay) * p.data()[k];
        }
    }
}

/// All loss terms of one training step, with the λ weights and penalty
/// coefficient already folded in so each side's terms sum to its total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub disc_adversarial: f64,
    pub disc_gradient_penalty: f64,
    pub disc_total: f64,
    pub gen_adversarial: f64,
    pub gen_recon: f64,
    pub gen_afd: f64,
    pub gen_total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        LossBreakdown {
            disc_adversarial: 0.0,
            disc_gradient_penalty: 0.0,
            disc_total: 0.0,
            gen_adversarial: 0.0,
            gen_recon: 0.0,
            gen_afd: 0.0,
            gen_total: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.disc_adversarial,
            self.disc_gradient_penalty,
            self.disc_total,
            self.gen_adversarial,
            self.gen_recon,
            self.gen_afd,
            self.gen_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Loss root nodes of one step, for driving the two backward passes.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub disc_total: NodeId,
    pub gen_total: NodeId,
}

/// Combine prebuilt pieces into the two training objectives.
///
/// `penalty` is the gradient-penalty node (already scaled by its
/// coefficient); the generator total is the adversarial term plus
/// `λ_recon`-weighted reconstruction plus `λ_AFD`-weighted AFD at step
/// `k`. Returns the loss roots plus the per-term breakdown read off the
/// tape.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    tape: &mut Tape,
    cfg: &TrainConfig,
    real_logits: NodeId,
    fake_logits: NodeId,
    x0_hat: NodeId,
    x0: NodeId,
    x_prev_hat: NodeId,
    x_prev: NodeId,
    penalty: NodeId,
    schedule: &NoiseSchedule,
    k: usize,
) -> (ObjectiveNodes, LossBreakdown) {
    let (disc_adv, gen_adv) = adversarial_loss(tape, real_logits, fake_logits);
    let disc_total = tape.add(disc_adv, penalty);

    let recon = recon_loss(tape, x0_hat, x0);
    let recon_w = tape.scale(recon, cfg.lambda_recon);
    let afd = afd_loss(tape, x_prev_hat, x_prev, schedule, k);
    let afd_w = tape.scale(afd, cfg.lambda_afd);
    let gen_ra = tape.add(gen_adv, recon_w);
    let gen_total = tape.add(gen_ra, afd_w);

    let breakdown = LossBreakdown {
        disc_adversarial: tape.value(disc_adv).item(),
        disc_gradient_penalty: tape.value(penalty).item(),
        disc_total: tape.value(disc_total).item(),
        gen_adversarial: tape.value(gen_adv).item(),
        gen_recon: tape.value(recon_w).item(),
        gen_afd: tape.value(afd_w).item(),
        gen_total: tape.value(gen_total).item(),
    };
    (ObjectiveNodes { disc_total, gen_total }, breakdown)
}
