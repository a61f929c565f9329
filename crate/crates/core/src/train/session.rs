//! Training loops.
//!
//! [`train_rows`] trains a plain row-wise denoiser on tabular data — the
//! harness for the 2-D mixture benchmark — while [`TrainRun`] is the full
//! motion loop over a dataset directory: alternating discriminator and
//! generator updates, EMA shadow weights for evaluation, an ndjson
//! training log, periodic checkpoints with optimizer state, and resume.
//!
//! Determinism: every iteration reseeds its RNG from the master seed and
//! the iteration index, so a resumed run consumes exactly the draws an
//! uninterrupted run would have, and two runs with the same seed are
//! bit-identical.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::denoiser::{CondBundle, DecoupledDenoiser, NullFlags};
use crate::diffusion::{
    noise_like, posterior_coeffs, q_sample_marginal, q_sample_step, NoiseSchedule,
};
use crate::error::{CoreError, Result};
use crate::io::manifest::Split;
use crate::io::Checkpoint;
use crate::motion::repr::clip_to_features;
use crate::motion::{Clip, ALL_PARTS};
use crate::nn::{sinusoidal_embedding, AdamW, Binder, Mlp, NodeId, ParamStore, Tape, Tensor};
use crate::synth::{derive_seed, Dataset};

use super::{
    adversarial_loss, afd_loss, ema_update, gradient_penalty, total_objective, Discriminator,
    LossBreakdown, Objective, ObjectiveNodes, TrainConfig,
};

/// A plain MLP denoiser over independent rows, for low-dimensional
/// benchmark data: the noisy row and a sinusoidal code of the base
/// timestep go in, the clean-data estimate comes out.
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    mlp: Mlp,
    pub data_dim: usize,
    pub t_dim: usize,
}

impl MlpDenoiser {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        data_dim: usize,
        t_dim: usize,
        hidden: &[usize],
    ) -> Self {
        assert!(t_dim > 0 && t_dim % 2 == 0, "t_dim must be positive and even");
        let mut dims = vec![data_dim + t_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        MlpDenoiser { mlp: Mlp::new(store, rng, name, &dims), data_dim, t_dim }
    }

    pub fn predict(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x_t: NodeId,
        base_t: usize,
    ) -> NodeId {
        let n = tape.value(x_t).rows();
        let t_row = tape.constant(sinusoidal_embedding(base_t as f64, self.t_dim));
        let t_emb = tape.broadcast_row(t_row, n);
        let z = tape.concat_cols(&[x_t, t_emb]);
        self.mlp.apply(tape, binder, store, z)
    }

    /// Evaluation-mode prediction, shaped for the sampling chain.
    pub fn predict_tensor(&self, store: &ParamStore, x_t: &Tensor, base_t: usize) -> Tensor {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let x = tape.constant(x_t.clone());
        let out = self.predict(&mut tape, &mut binder, store, x, base_t);
        tape.value(out).clone()
    }
}

/// Result of [`train_rows`].
pub struct RowTrainOutcome {
    pub final_losses: LossBreakdown,
    /// EMA generator weights; evaluation sampling should use these.
    pub ema: ParamStore,
}

/// Train a row denoiser against a fixed data table.
///
/// Each iteration draws one minibatch, one coarse step `k`, and one set
/// of forward/posterior noises, shared by the discriminator update and
/// the generator update that follows it. The pure-L2 objective skips the
/// discriminator entirely and regresses `x̂0`.
#[allow(clippy::too_many_arguments)]
pub fn train_rows(
    data: &Tensor,
    model: &MlpDenoiser,
    gen_store: &mut ParamStore,
    disc: &Discriminator,
    disc_store: &mut ParamStore,
    base: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RowTrainOutcome> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(CoreError::validation("training data has no rows"));
    }
    if data.cols() != model.data_dim {
        return Err(CoreError::validation(format!(
            "data has {} columns but the model expects {}",
            data.cols(),
            model.data_dim
        )));
    }
    let sub = base.subschedule(cfg.steps_k)?;
    let mut opt_g = AdamW::new(cfg.lr_denoiser);
    let mut opt_d = AdamW::new(cfg.lr_discriminator);
    let mut ema = gen_store.clone();
    let mut last = LossBreakdown::zero();

    for iter in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, iter as u64));
        let n = cfg.batch_size;
        let d = data.cols();
        let idx: Vec<usize> =
            (0..n).map(|_| rng.random_range(0..data.rows())).collect();
        let x0 = Tensor::from_fn(n, d, |i, j| data.get(idx[i], j));
        let k = rng.random_range(1..=sub.steps());
        let base_t = sub.base_timestep(k);
        let e1 = noise_like(&mut rng, n, d);
        let x_prev = q_sample_marginal(&x0, sub.alpha_bar(k - 1), &e1);
        let e2 = noise_like(&mut rng, n, d);
        let x_t = q_sample_step(&x_prev, sub.beta(k), &e2);
        let (coef_x0, coef_xk, var) = posterior_coeffs(&sub, k);
        let eps_g = noise_like(&mut rng, n, d);
        let mut drift = x_t.scale(coef_xk);
        drift.axpy(var.sqrt(), &eps_g);

        let build = |tape: &mut Tape,
                     bg: &mut Binder,
                     bd: &mut Binder,
                     gen_store: &ParamStore,
                     disc_store: &ParamStore|
         -> (ObjectiveNodes, LossBreakdown) {
            let xt_n = tape.constant(x_t.clone());
            let x0_n = tape.constant(x0.clone());
            let xp_n = tape.constant(x_prev.clone());
            let x0_hat = model.predict(tape, bg, gen_store, xt_n, base_t);
            let scaled = tape.scale(x0_hat, coef_x0);
            let drift_n = tape.constant(drift.clone());
            let xp_hat = tape.add(scaled, drift_n);
            let rl = disc.logits(tape, bd, disc_store, xp_n, xt_n, None, base_t);
            let fl = disc.logits(tape, bd, disc_store, xp_hat, xt_n, None, base_t);
            let gp = gradient_penalty(
                tape,
                bd,
                disc_store,
                disc,
                xp_n,
                xt_n,
                None,
                base_t,
                cfg.gradient_penalty_coef,
            );
            total_objective(tape, cfg, rl, fl, x0_hat, x0_n, xp_hat, xp_n, gp, &sub, k)
        };

        match cfg.objective {
            Objective::SemiImplicit => {
                {
                    let mut tape = Tape::new();
                    let mut bg = Binder::new();
                    let mut bd = Binder::new();
                    let (nodes, b) = build(&mut tape, &mut bg, &mut bd, gen_store, disc_store);
                    if !b.is_finite() {
                        return Err(CoreError::Divergence(format!(
                            "non-finite loss at iteration {iter}"
                        )));
                    }
                    last = LossBreakdown {
                        disc_adversarial: b.disc_adversarial,
                        disc_gradient_penalty: b.disc_gradient_penalty,
                        disc_total: b.disc_total,
                        ..last
                    };
                    let grads = bd.grads(&tape, &tape.backward(nodes.disc_total));
                    opt_d.apply(disc_store, &grads);
                }
                {
                    let mut tape = Tape::new();
                    let mut bg = Binder::new();
                    let mut bd = Binder::new();
                    let (nodes, b) = build(&mut tape, &mut bg, &mut bd, gen_store, disc_store);
                    if !b.is_finite() {
                        return Err(CoreError::Divergence(format!(
                            "non-finite loss at iteration {iter}"
                        )));
                    }
                    last = LossBreakdown {
                        gen_adversarial: b.gen_adversarial,
                        gen_recon: b.gen_recon,
                        gen_afd: b.gen_afd,
                        gen_total: b.gen_total,
                        ..last
                    };
                    let grads = bg.grads(&tape, &tape.backward(nodes.gen_total));
                    opt_g.apply(gen_store, &grads);
                }
            }
            Objective::PureL2 => {
                let mut tape = Tape::new();
                let mut bg = Binder::new();
                let xt_n = tape.constant(x_t.clone());
                let x0_n = tape.constant(x0.clone());
                let x0_hat = model.predict(&mut tape, &mut bg, gen_store, xt_n, base_t);
                let loss = super::recon_loss(&mut tape, x0_hat, x0_n);
                let v = tape.value(loss).item();
                if !v.is_finite() {
                    return Err(CoreError::Divergence(format!(
                        "non-finite loss at iteration {iter}"
                    )));
                }
                last = LossBreakdown { gen_recon: v, gen_total: v, ..LossBreakdown::zero() };
                let grads = bg.grads(&tape, &tape.backward(loss));
                opt_g.apply(gen_store, &grads);
            }
        }
        ema_update(&mut ema, gen_store, cfg.ema_decay);
        if !gen_store.is_finite() || !disc_store.is_finite() {
            return Err(CoreError::Divergence(format!(
                "parameters diverged at iteration {iter}"
            )));
        }
    }
    Ok(RowTrainOutcome { final_losses: last, ema })
}

/// Mutable state of a motion training run: both parameter sets, the EMA
/// shadow, and both optimizers.
#[derive(Debug)]
pub struct TrainState {
    pub iteration: usize,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub ema: ParamStore,
    pub opt_gen: AdamW,
    pub opt_disc: AdamW,
}

impl TrainState {
    pub fn new(gen: ParamStore, disc: ParamStore, cfg: &TrainConfig) -> TrainState {
        TrainState {
            iteration: 0,
            ema: gen.clone(),
            gen,
            disc,
            opt_gen: AdamW::new(cfg.lr_denoiser),
            opt_disc: AdamW::new(cfg.lr_discriminator),
        }
    }

    /// Serialize everything a resumed run needs, optimizer moments
    /// included, so the continuation follows the same trajectory.
    pub fn to_checkpoint(
        &self,
        kind: &str,
        schedule: &NoiseSchedule,
        mut extra: serde_json::Value,
    ) -> Checkpoint {
        let mut ck = Checkpoint::new(kind);
        ck.step = self.iteration as u64;
        ck.schedule = Some(schedule.clone());
        ck.sections.insert("model".into(), self.gen.clone());
        ck.sections.insert("model_ema".into(), self.ema.clone());
        ck.sections.insert("disc".into(), self.disc.clone());
        let (g_step, g_m, g_v) = self.opt_gen.state();
        ck.sections.insert("opt_gen_m".into(), store_from_map(g_m));
        ck.sections.insert("opt_gen_v".into(), store_from_map(g_v));
        let (d_step, d_m, d_v) = self.opt_disc.state();
        ck.sections.insert("opt_disc_m".into(), store_from_map(d_m));
        ck.sections.insert("opt_disc_v".into(), store_from_map(d_v));
        if let Some(obj) = extra.as_object_mut() {
            obj.insert("opt_gen_step".into(), json!(g_step));
            obj.insert("opt_disc_step".into(), json!(d_step));
        }
        ck.extra = extra;
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig) -> Result<TrainState> {
        let gen = ck.section("model")?.clone();
        let ema = ck.section("model_ema")?.clone();
        let disc = ck.section("disc")?.clone();
        let mut opt_gen = AdamW::new(cfg.lr_denoiser);
        opt_gen.restore_state(
            ck.extra.get("opt_gen_step").and_then(|v| v.as_u64()).unwrap_or(0),
            map_from_store(ck.section("opt_gen_m")?),
            map_from_store(ck.section("opt_gen_v")?),
        );
        let mut opt_disc = AdamW::new(cfg.lr_discriminator);
        opt_disc.restore_state(
            ck.extra.get("opt_disc_step").and_then(|v| v.as_u64()).unwrap_or(0),
            map_from_store(ck.section("opt_disc_m")?),
            map_from_store(ck.section("opt_disc_v")?),
        );
        Ok(TrainState { iteration: ck.step as usize, gen, disc, ema, opt_gen, opt_disc })
    }
}

fn store_from_map(m: &std::collections::BTreeMap<String, Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in m {
        s.insert(k, v.clone());
    }
    s
}

fn map_from_store(s: &ParamStore) -> std::collections::BTreeMap<String, Tensor> {
    s.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Result of a motion training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub iterations_run: usize,
    pub final_losses: LossBreakdown,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// One motion training job over a loaded dataset.
///
/// `cfg.iterations` is the target total: a freshly initialized state runs
/// that many iterations, a state resumed from a checkpoint continues from
/// where it stopped.
pub struct TrainRun<'a> {
    pub dataset: &'a Dataset,
    pub model: &'a DecoupledDenoiser,
    pub disc: &'a Discriminator,
    /// Base (fine) schedule; training strides it with `cfg.steps_k`.
    pub schedule: &'a NoiseSchedule,
    pub cfg: &'a TrainConfig,
    pub out_dir: &'a Path,
    pub seed: u64,
    /// Run metadata echoed into every checkpoint (resolved configuration,
    /// dataset hashes, and the like). Must be a JSON object to survive;
    /// anything else is replaced by one.
    pub extra: serde_json::Value,
}

/// Precomputed per-clip training tensors.
struct Item {
    frames: usize,
    /// Clean features split per part, each `(frames, part_width)`.
    parts: [Tensor; 3],
    seed_pose: Tensor,
    features: Tensor,
    semantic: Tensor,
}

/// One clip's draws for an iteration, shared by both passes.
struct ClipDraw {
    idx: usize,
    k: usize,
    base_t: usize,
    frames: usize,
    coef_x0: f64,
    x_t_parts: [Tensor; 3],
    /// `coef_xk·x_t + sqrt(var)·ε` per part; adding `coef_x0·x̂0` gives the
    /// generator's posterior draw with inference's exact coefficients.
    drift_parts: [Tensor; 3],
    /// Real pair in part-major channel order, matching the fake rows.
    real_pm: Tensor,
    ctx_pm: Tensor,
    bundle: CondBundle,
    /// Pooled condition embedding handed to the discriminator as a
    /// constant; the embedder is trained through the generator side only.
    cond_pool: Tensor,
}

impl TrainRun<'_> {
    pub fn run(
        &self,
        mut state: TrainState,
        semantic_for: &dyn Fn(&Clip) -> Tensor,
    ) -> Result<(TrainState, TrainOutcome)> {
        self.cfg.validate()?;
        let sub = self.schedule.subschedule(self.cfg.steps_k)?;
        let items = self.build_items(semantic_for)?;
        std::fs::create_dir_all(self.out_dir)?;
        let ck_path = self.out_dir.join("checkpoint.cog");
        let log_path = self.out_dir.join("train_log.ndjson");
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;

        let mut extra =
            if self.extra.is_object() { self.extra.clone() } else { json!({}) };
        if let Some(obj) = extra.as_object_mut() {
            let cfg_echo = serde_json::to_value(self.cfg)
                .map_err(|e| CoreError::validation(format!("config echo: {e}")))?;
            obj.insert("train_config".into(), cfg_echo);
            obj.insert("seed".into(), json!(self.seed));
        }

        writeln!(
            log,
            "{}",
            json!({
                "record": "header",
                "kind": "denoiser",
                "lr_denoiser": self.cfg.lr_denoiser,
                "lr_discriminator": self.cfg.lr_discriminator,
                "objective": self.cfg.objective,
                "steps_k": self.cfg.steps_k,
                "start_iteration": state.iteration,
                "seed": self.seed,
            })
        )?;

        let start_iter = state.iteration;
        let started = Instant::now();
        let mut last = LossBreakdown::zero();
        while state.iteration < self.cfg.iterations {
            let iter = state.iteration;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, iter as u64));
            let mut draws = Vec::with_capacity(self.cfg.batch_size);
            for _ in 0..self.cfg.batch_size {
                draws.push(self.make_draw(&mut rng, &items, &sub, &state.gen)?);
            }

            match self.cfg.objective {
                Objective::SemiImplicit => {
                    {
                        let mut tape = Tape::new();
                        let mut bg = Binder::new();
                        let mut bd = Binder::new();
                        let (nodes, b) = self.motion_pass(
                            &mut tape, &mut bg, &mut bd, &state.gen, &state.disc, &items,
                            &draws, &sub,
                        )?;
                        if !b.is_finite() {
                            return Err(CoreError::Divergence(format!(
                                "non-finite loss at iteration {iter}"
                            )));
                        }
                        last = LossBreakdown {
                            disc_adversarial: b.disc_adversarial,
                            disc_gradient_penalty: b.disc_gradient_penalty,
                            disc_total: b.disc_total,
                            ..last
                        };
                        let grads = bd.grads(&tape, &tape.backward(nodes.disc_total));
                        state.opt_disc.apply(&mut state.disc, &grads);
                    }
                    {
                        let mut tape = Tape::new();
                        let mut bg = Binder::new();
                        let mut bd = Binder::new();
                        let (nodes, b) = self.motion_pass(
                            &mut tape, &mut bg, &mut bd, &state.gen, &state.disc, &items,
                            &draws, &sub,
                        )?;
                        if !b.is_finite() {
                            return Err(CoreError::Divergence(format!(
                                "non-finite loss at iteration {iter}"
                            )));
                        }
                        last = LossBreakdown {
                            gen_adversarial: b.gen_adversarial,
                            gen_recon: b.gen_recon,
                            gen_afd: b.gen_afd,
                            gen_total: b.gen_total,
                            ..last
                        };
                        let grads = bg.grads(&tape, &tape.backward(nodes.gen_total));
                        state.opt_gen.apply(&mut state.gen, &grads);
                    }
                }
                Objective::PureL2 => {
                    let mut tape = Tape::new();
                    let mut bg = Binder::new();
                    let (loss, b) =
                        self.motion_pass_l2(&mut tape, &mut bg, &state.gen, &items, &draws)?;
                    if !b.is_finite() {
                        return Err(CoreError::Divergence(format!(
                            "non-finite loss at iteration {iter}"
                        )));
                    }
                    last = b;
                    let grads = bg.grads(&tape, &tape.backward(loss));
                    state.opt_gen.apply(&mut state.gen, &grads);
                }
            }
            ema_update(&mut state.ema, &state.gen, self.cfg.ema_decay);
            if !state.gen.is_finite() || !state.disc.is_finite() {
                return Err(CoreError::Divergence(format!(
                    "parameters diverged at iteration {iter}"
                )));
            }
            state.iteration = iter + 1;
            writeln!(
                log,
                "{}",
                json!({
                    "record": "iteration",
                    "iteration": iter,
                    "elapsed_s": started.elapsed().as_secs_f64(),
                    "losses": last,
                })
            )?;
            if state.iteration % self.cfg.checkpoint_every == 0 {
                self.save_checkpoint(&state, &ck_path, &extra)?;
            }
        }
        self.save_checkpoint(&state, &ck_path, &extra)?;
        let outcome = TrainOutcome {
            iterations_run: state.iteration - start_iter,
            final_losses: last,
            checkpoint_path: ck_path,
            log_path,
        };
        Ok((state, outcome))
    }

    fn save_checkpoint(
        &self,
        state: &TrainState,
        path: &Path,
        extra: &serde_json::Value,
    ) -> Result<()> {
        state.to_checkpoint("denoiser", self.schedule, extra.clone()).save(path)
    }

    fn build_items(&self, semantic_for: &dyn Fn(&Clip) -> Tensor) -> Result<Vec<Item>> {
        let cfg = &self.model.cfg;
        let mut items = Vec::new();
        for (entry, clip) in self.dataset.split(Split::Train) {
            let feats = clip_to_features(clip);
            let frames = feats.rows();
            if frames < cfg.seed_frames {
                return Err(CoreError::validation(format!(
                    "{} has {frames} frames, fewer than the {} seed frames",
                    entry.file, cfg.seed_frames
                )));
            }
            let seed_pose = Tensor::from_fn(cfg.seed_frames, feats.cols(), |i, j| feats.get(i, j));
            let parts = self.model.split_parts(&feats);
            let features = clip.features.clone().ok_or_else(|| {
                CoreError::MissingPrerequisite(format!("{} has no feature track", entry.file))
            })?;
            if features.cols() != cfg.feature_dim {
                return Err(CoreError::validation(format!(
                    "{} feature track has {} channels, model expects {}",
                    entry.file,
                    features.cols(),
                    cfg.feature_dim
                )));
            }
            let semantic = semantic_for(clip);
            if semantic.shape() != (1, cfg.semantic_dim) {
                return Err(CoreError::validation(format!(
                    "semantic provider returned {}x{}, expected 1x{}",
                    semantic.rows(),
                    semantic.cols(),
                    cfg.semantic_dim
                )));
            }
            items.push(Item { frames, parts, seed_pose, features, semantic });
        }
        if items.is_empty() {
            return Err(CoreError::validation("the training split has no clips"));
        }
        Ok(items)
    }

    fn make_draw(
        &self,
        rng: &mut ChaCha8Rng,
        items: &[Item],
        sub: &NoiseSchedule,
        gen_store: &ParamStore,
    ) -> Result<ClipDraw> {
        let idx = rng.random_range(0..items.len());
        let item = &items[idx];
        let frames = item.frames;
        let k = rng.random_range(1..=sub.steps());
        let base_t = sub.base_timestep(k);
        let (coef_x0, coef_xk, var) = posterior_coeffs(sub, k);

        let mut x_prev = Vec::with_capacity(3);
        let mut x_t = Vec::with_capacity(3);
        let mut drift = Vec::with_capacity(3);
        for part in &item.parts {
            let e1 = noise_like(rng, frames, part.cols());
            let xp = q_sample_marginal(part, sub.alpha_bar(k - 1), &e1);
            let e2 = noise_like(rng, frames, part.cols());
            let xt = q_sample_step(&xp, sub.beta(k), &e2);
            let eg = noise_like(rng, frames, part.cols());
            let mut dr = xt.scale(coef_xk);
            dr.axpy(var.sqrt(), &eg);
            x_prev.push(xp);
            x_t.push(xt);
            drift.push(dr);
        }
        let x_prev: [Tensor; 3] = x_prev.try_into().unwrap();
        let x_t: [Tensor; 3] = x_t.try_into().unwrap();
        let drift: [Tensor; 3] = drift.try_into().unwrap();

        let mut bundle = CondBundle::new(
            base_t,
            item.seed_pose.clone(),
            item.features.clone(),
            item.semantic.clone(),
        );
        bundle.null_flags = NullFlags::draw(rng, self.model.cfg.cond_dropout);
        let toks = self.model.embed_conditions(gen_store, &bundle, frames)?;
        let cond_pool = Tensor::from_fn(1, toks.cols(), |_, j| {
            let mut s = 0.0;
            for i in 0..toks.rows() {
                s += toks.get(i, j);
            }
            s / toks.rows() as f64
        });

        Ok(ClipDraw {
            idx,
            k,
            base_t,
            frames,
            coef_x0,
            real_pm: hstack3(&x_prev),
            ctx_pm: hstack3(&x_t),
            x_t_parts: x_t,
            drift_parts: drift,
            bundle,
            cond_pool,
        })
    }

    /// Build the full semi-implicit objective for one batch on the tape.
    ///
    /// The coarse step varies per clip, so the AFD trust weights are
    /// applied per clip before batch averaging; the adversarial terms
    /// average over every frame of the batch.
    #[allow(clippy::too_many_arguments)]
    fn motion_pass(
        &self,
        tape: &mut Tape,
        bg: &mut Binder,
        bd: &mut Binder,
        gen_store: &ParamStore,
        disc_store: &ParamStore,
        items: &[Item],
        draws: &[ClipDraw],
        sub: &NoiseSchedule,
    ) -> Result<(ObjectiveNodes, LossBreakdown)> {
        let pose = self.model.pose_width() as f64;
        let mut all_real = Vec::with_capacity(draws.len());
        let mut all_fake = Vec::with_capacity(draws.len());
        let mut gp_acc: Option<NodeId> = None;
        let mut recon_acc: Option<NodeId> = None;
        let mut afd_acc: Option<NodeId> = None;
        let add_to = |tape: &mut Tape, acc: &mut Option<NodeId>, term: NodeId| {
            *acc = Some(match *acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        };

        for d in draws {
            let item = &items[d.idx];
            let x_t_nodes = [
                tape.constant(d.x_t_parts[0].clone()),
                tape.constant(d.x_t_parts[1].clone()),
                tape.constant(d.x_t_parts[2].clone()),
            ];
            let out = self.model.forward(tape, bg, gen_store, &x_t_nodes, &d.bundle)?;

            let mut fake_parts = Vec::with_capacity(3);
            for (i, part) in ALL_PARTS.iter().enumerate() {
                let w_frac = self.model.layout().part_width(*part) as f64 / pose;
                let x0_n = tape.constant(item.parts[i].clone());
                let m = tape.mse(out[i], x0_n);
                let term = tape.scale(m, w_frac);
                add_to(tape, &mut recon_acc, term);

                let scaled = tape.scale(out[i], d.coef_x0);
                let drift_n = tape.constant(d.drift_parts[i].clone());
                fake_parts.push(tape.add(scaled, drift_n));
            }
            let fake_row = tape.concat_cols(&fake_parts);
            let real_row = tape.constant(d.real_pm.clone());
            let ctx_row = tape.constant(d.ctx_pm.clone());
            let pool = tape.constant(d.cond_pool.clone());
            let cond = tape.broadcast_row(pool, d.frames);

            let rl =
                self.disc.logits(tape, bd, disc_store, real_row, ctx_row, Some(cond), d.base_t);
            let fl =
                self.disc.logits(tape, bd, disc_store, fake_row, ctx_row, Some(cond), d.base_t);
            all_real.push(rl);
            all_fake.push(fl);
            let gp = gradient_penalty(
                tape,
                bd,
                disc_store,
                self.disc,
                real_row,
                ctx_row,
                Some(cond),
                d.base_t,
                self.cfg.gradient_penalty_coef,
            );
            add_to(tape, &mut gp_acc, gp);
            let afd = afd_loss(tape, fake_row, real_row, sub, d.k);
            add_to(tape, &mut afd_acc, afd);
        }

        let nb = draws.len() as f64;
        let rl = tape.concat_rows(&all_real);
        let fl = tape.concat_rows(&all_fake);
        let (disc_adv, gen_adv) = adversarial_loss(tape, rl, fl);
        let gp = tape.scale(gp_acc.expect("non-empty batch"), 1.0 / nb);
        let disc_total = tape.add(disc_adv, gp);

        let recon_mean = tape.scale(recon_acc.expect("non-empty batch"), 1.0 / nb);
        let recon_w = tape.scale(recon_mean, self.cfg.lambda_recon);
        let afd_mean = tape.scale(afd_acc.expect("non-empty batch"), 1.0 / nb);
        let afd_w = tape.scale(afd_mean, self.cfg.lambda_afd);
        let partial = tape.add(gen_adv, recon_w);
        let gen_total = tape.add(partial, afd_w);

        let breakdown = LossBreakdown {
            disc_adversarial: tape.value(disc_adv).item(),
            disc_gradient_penalty: tape.value(gp).item(),
            disc_total: tape.value(disc_total).item(),
            gen_adversarial: tape.value(gen_adv).item(),
            gen_recon: tape.value(recon_w).item(),
            gen_afd: tape.value(afd_w).item(),
            gen_total: tape.value(gen_total).item(),
        };
        Ok((ObjectiveNodes { disc_total, gen_total }, breakdown))
    }

    /// Plain `x̂0` regression for the baseline objective: the batch-mean
    /// reconstruction error, unweighted.
    fn motion_pass_l2(
        &self,
        tape: &mut Tape,
        bg: &mut Binder,
        gen_store: &ParamStore,
        items: &[Item],
        draws: &[ClipDraw],
    ) -> Result<(NodeId, LossBreakdown)> {
        let pose = self.model.pose_width() as f64;
        let mut acc: Option<NodeId> = None;
        for d in draws {
            let item = &items[d.idx];
            let x_t_nodes = [
                tape.constant(d.x_t_parts[0].clone()),
                tape.constant(d.x_t_parts[1].clone()),
                tape.constant(d.x_t_parts[2].clone()),
            ];
            let out = self.model.forward(tape, bg, gen_store, &x_t_nodes, &d.bundle)?;
            for (i, part) in ALL_PARTS.iter().enumerate() {
                let w_frac = self.model.layout().part_width(*part) as f64 / pose;
                let x0_n = tape.constant(item.parts[i].clone());
                let m = tape.mse(out[i], x0_n);
                let term = tape.scale(m, w_frac);
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
        }
        let loss = tape.scale(acc.expect("non-empty batch"), 1.0 / draws.len() as f64);
        let v = tape.value(loss).item();
        let b = LossBreakdown { gen_recon: v, gen_total: v, ..LossBreakdown::zero() };
        Ok((loss, b))
    }
}

/// Concatenate the three part matrices along columns (part-major order).
fn hstack3(parts: &[Tensor; 3]) -> Tensor {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let mut c = 0;
        for p in parts {
            out.row_mut(i)[c..c + p.cols()].copy_from_slice(p.row(i));
            c += p.cols();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::few_step_sample;
    use crate::motion::repr::FeatureLayout;
    use crate::motion::Skeleton;
    use crate::synth::{generate_dataset, ContactPattern, SynthSpec};

    fn stores_equal(a: &ParamStore, b: &ParamStore) -> bool {
        a.len() == b.len()
            && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| {
                na == nb && ta.shape() == tb.shape() && ta.data() == tb.data()
            })
    }

    #[test]
    fn mlp_denoiser_output_is_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let model = MlpDenoiser::new(&mut store, &mut rng, "g", 2, 8, &[16]);
        let x = noise_like(&mut rng, 7, 2);
        let a = model.predict_tensor(&store, &x, 3);
        let b = model.predict_tensor(&store, &x, 3);
        assert_eq!(a.shape(), (7, 2));
        assert_eq!(a.data(), b.data());
        let c = model.predict_tensor(&store, &x, 9);
        assert!(a.sub(&c).max_abs() > 0.0, "timestep had no effect");
    }

    fn eight_modes(n: usize, sigma: f64, seed: u64) -> (Tensor, Vec<[f64; 2]>) {
        let centers: Vec<[f64; 2]> = (0..8)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_4;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Tensor::from_fn(n, 2, |i, j| {
            let c = centers[i % 8][j];
            c + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        (data, centers)
    }

    fn row_models(seed: u64) -> (ParamStore, MlpDenoiser, ParamStore, Discriminator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen_store = ParamStore::new();
        let model = MlpDenoiser::new(&mut gen_store, &mut rng, "g", 2, 16, &[64, 64]);
        let mut disc_store = ParamStore::new();
        let disc = Discriminator::new(&mut disc_store, &mut rng, "d", 2, 0, 16, &[64, 64]);
        (gen_store, model, disc_store, disc)
    }

    #[test]
    fn row_training_is_deterministic() {
        let (data, _) = eight_modes(64, 0.15, 0);
        let base = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let cfg = TrainConfig {
            lr_denoiser: 1e-3,
            lr_discriminator: 1e-3,
            steps_k: 4,
            batch_size: 16,
            iterations: 25,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut gs, model, mut ds, disc) = row_models(42);
            let out =
                train_rows(&data, &model, &mut gs, &disc, &mut ds, &base, &cfg, 7).unwrap();
            (gs, ds, out)
        };
        let (gs_a, ds_a, out_a) = run();
        let (gs_b, ds_b, out_b) = run();
        assert!(stores_equal(&gs_a, &gs_b));
        assert!(stores_equal(&ds_a, &ds_b));
        assert!(stores_equal(&out_a.ema, &out_b.ema));
        assert_eq!(out_a.final_losses, out_b.final_losses);
    }

    #[test]
    fn pure_l2_rows_never_touch_the_discriminator() {
        let (data, _) = eight_modes(64, 0.15, 1);
        let base = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let cfg = TrainConfig {
            lr_denoiser: 1e-3,
            steps_k: 4,
            batch_size: 16,
            iterations: 40,
            objective: Objective::PureL2,
            ..TrainConfig::default()
        };
        let (mut gs, model, mut ds, disc) = row_models(3);
        let disc_before = ds.clone();
        let out = train_rows(&data, &model, &mut gs, &disc, &mut ds, &base, &cfg, 9).unwrap();
        assert!(stores_equal(&ds, &disc_before));
        assert_eq!(out.final_losses.disc_total, 0.0);
        assert_eq!(out.final_losses.gen_adversarial, 0.0);
        assert!(out.final_losses.gen_recon.is_finite());
    }

    #[test]
    fn semi_implicit_covers_every_mode_of_the_toy_mixture() {
        let (data, centers) = eight_modes(2048, 0.15, 10);
        let base = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let cfg = TrainConfig {
            lr_denoiser: 2e-3,
            lr_discriminator: 2e-3,
            lambda_recon: 0.05,
            lambda_afd: 0.25,
            ema_decay: 0.99,
            steps_k: 4,
            batch_size: 128,
            iterations: 1200,
            ..TrainConfig::default()
        };
        let (mut gs, model, mut ds, disc) = row_models(21);
        let out =
            train_rows(&data, &model, &mut gs, &disc, &mut ds, &base, &cfg, 31).unwrap();
        assert!(out.final_losses.is_finite());

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut predict =
            |x: &Tensor, t: usize| -> Tensor { model.predict_tensor(&out.ema, x, t) };
        let samples =
            few_step_sample(&mut predict, &base, cfg.steps_k, 10_000, 2, &mut rng).unwrap();
        let mut counts = [0usize; 8];
        for i in 0..samples.rows() {
            let (x, y) = (samples.get(i, 0), samples.get(i, 1));
            let nearest = (0..8)
                .min_by(|&a, &b| {
                    let da = (x - centers[a][0]).powi(2) + (y - centers[a][1]).powi(2);
                    let db = (x - centers[b][0]).powi(2) + (y - centers[b][1]).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            counts[nearest] += 1;
        }
        let min_share = counts.iter().copied().min().unwrap() as f64 / samples.rows() as f64;
        assert!(
            min_share >= 0.02,
            "mode occupancy {counts:?}, smallest share {min_share:.4}"
        );
    }

    fn tiny_dataset() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            clips: 3,
            frames: 19,
            fps: 30.0,
            beat_period_s: (0.3, 0.3),
            vocab_size: 2,
            contact_pattern: ContactPattern::Stepping,
            noise_level: 0.01,
            feature_dim: 3,
        };
        generate_dataset(&spec, 5, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        (dir, ds)
    }

    fn tiny_models(seed: u64) -> (ParamStore, DecoupledDenoiser, ParamStore, Discriminator) {
        let layout = FeatureLayout::new(Skeleton::default52());
        let cfg = DenoiserConfig {
            layers: 1,
            width: 16,
            heads: 2,
            seed_frames: 2,
            feature_dim: 3,
            semantic_dim: 4,
            cond_dropout: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen_store = ParamStore::new();
        let model = DecoupledDenoiser::new(&mut gen_store, &mut rng, "den", &layout, &cfg).unwrap();
        let mut disc_store = ParamStore::new();
        let disc = Discriminator::new(
            &mut disc_store,
            &mut rng,
            "disc",
            layout.width(),
            cfg.width,
            8,
            &[32],
        );
        (gen_store, model, disc_store, disc)
    }

    fn zero_semantic(_: &Clip) -> Tensor {
        Tensor::zeros(1, 4)
    }

    #[test]
    fn motion_training_logs_headers_and_checkpoints() {
        let (_dir, ds) = tiny_dataset();
        let (gs, model, dstore, disc) = tiny_models(1);
        let base = NoiseSchedule::linear(16, 1e-4, 0.02).unwrap();
        let cfg = TrainConfig {
            lr_denoiser: 1e-3,
            lr_discriminator: 1e-3,
            steps_k: 4,
            batch_size: 1,
            iterations: 2,
            checkpoint_every: 1,
            ..TrainConfig::default()
        };
        let out_dir = tempfile::tempdir().unwrap();
        let run = TrainRun {
            dataset: &ds,
            model: &model,
            disc: &disc,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_dir.path(),
            seed: 11,
            extra: json!({"note": "test"}),
        };
        let state = TrainState::new(gs, dstore, &cfg);
        let (state, outcome) = run.run(state, &zero_semantic).unwrap();
        assert_eq!(outcome.iterations_run, 2);
        assert_eq!(state.iteration, 2);

        let log = std::fs::read_to_string(&outcome.log_path).unwrap();
        let mut lines = log.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["record"], "header");
        assert_eq!(header["lr_denoiser"].as_f64().unwrap(), cfg.lr_denoiser);
        assert_eq!(header["lr_discriminator"].as_f64().unwrap(), cfg.lr_discriminator);
        let first: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first["record"], "iteration");
        assert!(first["losses"]["gen_total"].is_f64());

        let ck = Checkpoint::load(&outcome.checkpoint_path).unwrap();
        assert_eq!(ck.kind, "denoiser");
        assert_eq!(ck.step, 2);
        assert_eq!(ck.extra["note"], "test");
        assert_eq!(ck.extra["train_config"]["steps_k"].as_u64().unwrap(), 4);
        for section in ["model", "model_ema", "disc", "opt_gen_m", "opt_disc_v"] {
            assert!(ck.section(section).is_ok(), "missing section {section}");
        }
    }

    #[test]
    fn motion_training_is_deterministic_and_resumes_exactly() {
        let (_dir, ds) = tiny_dataset();
        let base = NoiseSchedule::linear(16, 1e-4, 0.02).unwrap();
        let mut cfg = TrainConfig {
            lr_denoiser: 1e-3,
            lr_discriminator: 1e-3,
            steps_k: 4,
            batch_size: 1,
            iterations: 4,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };

        // One uninterrupted run to four iterations.
        let out_a = tempfile::tempdir().unwrap();
        let (gs, model, dstore, disc) = tiny_models(2);
        let run_a = TrainRun {
            dataset: &ds,
            model: &model,
            disc: &disc,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_a.path(),
            seed: 77,
            extra: json!({}),
        };
        let (state_a, _) = run_a.run(TrainState::new(gs, dstore, &cfg), &zero_semantic).unwrap();

        // The same run stopped at two and resumed from the checkpoint.
        let out_b = tempfile::tempdir().unwrap();
        let (gs, model_b, dstore, disc_b) = tiny_models(2);
        cfg.iterations = 2;
        let run_b1 = TrainRun {
            dataset: &ds,
            model: &model_b,
            disc: &disc_b,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_b.path(),
            seed: 77,
            extra: json!({}),
        };
        let (_, outcome_b1) =
            run_b1.run(TrainState::new(gs, dstore, &cfg), &zero_semantic).unwrap();

        cfg.iterations = 4;
        let ck = Checkpoint::load(&outcome_b1.checkpoint_path).unwrap();
        let resumed = TrainState::from_checkpoint(&ck, &cfg).unwrap();
        assert_eq!(resumed.iteration, 2);
        let run_b2 = TrainRun {
            dataset: &ds,
            model: &model_b,
            disc: &disc_b,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_b.path(),
            seed: 77,
            extra: json!({}),
        };
        let (state_b, outcome_b2) = run_b2.run(resumed, &zero_semantic).unwrap();
        assert_eq!(outcome_b2.iterations_run, 2);

        assert!(stores_equal(&state_a.gen, &state_b.gen), "generators diverged");
        assert!(stores_equal(&state_a.disc, &state_b.disc), "discriminators diverged");
        assert!(stores_equal(&state_a.ema, &state_b.ema), "EMA shadows diverged");
    }

    #[test]
    fn motion_training_overfits_one_clip() {
        let (_dir, ds) = tiny_dataset();
        let (gs, model, dstore, disc) = tiny_models(3);
        let base = NoiseSchedule::linear(16, 1e-4, 0.02).unwrap();
        let cfg = TrainConfig {
            lr_denoiser: 3e-3,
            lr_discriminator: 1e-3,
            steps_k: 4,
            batch_size: 1,
            iterations: 1500,
            checkpoint_every: 500,
            ..TrainConfig::default()
        };
        let out_dir = tempfile::tempdir().unwrap();
        let run = TrainRun {
            dataset: &ds,
            model: &model,
            disc: &disc,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_dir.path(),
            seed: 1234,
            extra: json!({}),
        };
        let (state, _) = run.run(TrainState::new(gs, dstore, &cfg), &zero_semantic).unwrap();

        // Reconstruction error of the trained net across the coarse steps.
        let sub = base.subschedule(cfg.steps_k).unwrap();
        let (_, clip) = ds.split(Split::Train).next().unwrap();
        let feats = clip_to_features(clip);
        let parts = model.split_parts(&feats);
        let seed_pose = Tensor::from_fn(2, feats.cols(), |i, j| feats.get(i, j));
        let bundle = CondBundle::new(
            0,
            seed_pose,
            clip.features.clone().unwrap(),
            Tensor::zeros(1, 4),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut total = 0.0;
        for k in 1..=sub.steps() {
            let noised: [Tensor; 3] = [
                q_sample_marginal(&parts[0], sub.alpha_bar(k), &noise_like(&mut rng, feats.rows(), parts[0].cols())),
                q_sample_marginal(&parts[1], sub.alpha_bar(k), &noise_like(&mut rng, feats.rows(), parts[1].cols())),
                q_sample_marginal(&parts[2], sub.alpha_bar(k), &noise_like(&mut rng, feats.rows(), parts[2].cols())),
            ];
            let out = model
                .denoise(&state.gen, &noised, &bundle.with_timestep(sub.base_timestep(k)))
                .unwrap();
            let merged = model.merge_parts(&out);
            let err = merged.sub(&feats).frob_sq() / (feats.rows() * feats.cols()) as f64;
            total += err;
        }
        let mean = total / sub.steps() as f64;
        assert!(mean < 1e-2, "mean reconstruction error {mean}");
    }

    #[test]
    fn diverging_run_aborts_and_keeps_the_last_checkpoint() {
        let (_dir, ds) = tiny_dataset();
        let (gs, model, dstore, disc) = tiny_models(4);
        let base = NoiseSchedule::linear(16, 1e-4, 0.02).unwrap();
        // A step size this large drives squared losses past f64 range on
        // the next iteration while the parameters themselves stay finite.
        let cfg = TrainConfig {
            lr_denoiser: 1e200,
            lr_discriminator: 1e-3,
            steps_k: 4,
            batch_size: 1,
            iterations: 20,
            checkpoint_every: 1,
            ..TrainConfig::default()
        };
        let out_dir = tempfile::tempdir().unwrap();
        let run = TrainRun {
            dataset: &ds,
            model: &model,
            disc: &disc,
            schedule: &base,
            cfg: &cfg,
            out_dir: out_dir.path(),
            seed: 6,
            extra: json!({}),
        };
        let err = run.run(TrainState::new(gs, dstore, &cfg), &zero_semantic).unwrap_err();
        assert!(matches!(err, CoreError::Divergence(_)), "got {err:?}");

        let ck_path = out_dir.path().join("checkpoint.cog");
        assert!(ck_path.exists(), "no checkpoint retained");
        let ck = Checkpoint::load(&ck_path).unwrap();
        assert!(ck.section("model").unwrap().is_finite());
        assert!(ck.section("disc").unwrap().is_finite());
    }
}
