//! Gesture–text alignment: a motion VAE, a token-sequence text encoder, and a
//! small predictor head trained contrastively so that transcriptions land near
//! the latents of the gestures they accompany.
//!
//! The deployed artifact is the frozen text path (embedding table, pooling,
//! projection, predictor); the gesture encoder exists to define the latent
//! space during training and to score retrieval afterwards.

mod train;

pub use train::{retrieval_report, train_alignment, AlignReport, RetrievalReport};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::io::checkpoint::Checkpoint;
use crate::denoiser::position_codes;
use crate::motion::repr::clip_to_features;
use crate::motion::Clip;
use crate::nn::{Binder, Linear, Mlp, NodeId, ParamStore, Tape, Tensor, TransformerBlock};

/// Sizes and knobs for the alignment stack.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Shared latent width for gesture and text.
    pub d_z: usize,
    /// Transformer width inside the VAE.
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    /// Word-embedding width in the text encoder.
    pub emb_dim: usize,
    pub kl_weight: f64,
    /// Contrastive temperature; must be positive.
    pub temperature: f64,
    pub lr: f64,
    pub vae_iterations: usize,
    /// Regression iterations predicting frozen gesture latents before the
    /// contrastive phase starts.
    pub warmup_iterations: usize,
    pub contrastive_iterations: usize,
    pub batch_size: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            d_z: 64,
            width: 64,
            heads: 4,
            layers: 1,
            emb_dim: 32,
            kl_weight: 1e-4,
            temperature: 0.1,
            lr: 1e-3,
            vae_iterations: 600,
            warmup_iterations: 300,
            contrastive_iterations: 400,
            batch_size: 16,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.width == 0 || self.emb_dim == 0 {
            return Err(CoreError::validation("alignment widths must be positive"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(CoreError::validation(
                "vae width must be divisible by a positive head count",
            ));
        }
        if self.width % 2 != 0 {
            return Err(CoreError::validation(
                "vae width must be even for position codes",
            ));
        }
        if self.layers == 0 {
            return Err(CoreError::validation("need at least one encoder layer"));
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::validation("temperature must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(CoreError::validation("learning rate must be positive"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(CoreError::validation("kl weight must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::validation("batch size must be positive"));
        }
        Ok(())
    }
}

/// Sequence VAE over per-frame motion features.  The posterior mean over the
/// pooled sequence is the gesture latent used for alignment.
pub struct GestureVae {
    name: String,
    in_proj: Linear,
    enc: Vec<TransformerBlock>,
    mu: Linear,
    logvar: Linear,
    dec_in: Linear,
    dec: Vec<TransformerBlock>,
    out: Linear,
    pub in_channels: usize,
    pub d_z: usize,
    width: usize,
}

impl GestureVae {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        cfg: &AlignConfig,
    ) -> Self {
        let w = cfg.width;
        let in_proj = Linear::new(store, rng, &format!("{name}.in"), in_channels, w);
        let enc = (0..cfg.layers)
            .map(|i| TransformerBlock::new(store, rng, &format!("{name}.enc{i}"), w, cfg.heads))
            .collect();
        let mu = Linear::new(store, rng, &format!("{name}.mu"), w, cfg.d_z);
        let logvar = Linear::new(store, rng, &format!("{name}.logvar"), w, cfg.d_z);
        let dec_in = Linear::new(store, rng, &format!("{name}.dec_in"), cfg.d_z, w);
        let dec = (0..cfg.layers)
            .map(|i| TransformerBlock::new(store, rng, &format!("{name}.dec{i}"), w, cfg.heads))
            .collect();
        let out = Linear::new(store, rng, &format!("{name}.out"), w, in_channels);
        GestureVae {
            name: name.to_string(),
            in_proj,
            enc,
            mu,
            logvar,
            dec_in,
            dec,
            out,
            in_channels,
            d_z: cfg.d_z,
            width: w,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Encoder graph: per-frame features -> pooled posterior (mu, logvar).
    pub fn encode_nodes(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        features: NodeId,
    ) -> (NodeId, NodeId) {
        let frames = tape.value(features).rows();
        let mut h = self.in_proj.apply(tape, binder, store, features);
        let codes = tape.constant(position_codes(frames, self.width));
        h = tape.add(h, codes);
        for block in &self.enc {
            h = block.apply(tape, binder, store, h);
        }
        let pool = tape.constant(Tensor::from_fn(1, frames, |_, _| 1.0 / frames as f64));
        let pooled = tape.matmul(pool, h);
        let mu = self.mu.apply(tape, binder, store, pooled);
        let logvar = self.logvar.apply(tape, binder, store, pooled);
        (mu, logvar)
    }

    /// Decoder graph: latent row -> per-frame feature reconstruction.
    pub fn decode_nodes(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        z: NodeId,
        frames: usize,
    ) -> NodeId {
        let seed = self.dec_in.apply(tape, binder, store, z);
        let mut h = tape.broadcast_row(seed, frames);
        let codes = tape.constant(position_codes(frames, self.width));
        h = tape.add(h, codes);
        for block in &self.dec {
            h = block.apply(tape, binder, store, h);
        }
        self.out.apply(tape, binder, store, h)
    }

    /// Posterior mean for a feature matrix; the deterministic gesture latent.
    pub fn posterior_mean(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        if features.cols() != self.in_channels {
            return Err(CoreError::validation(format!(
                "feature width {} does not match the encoder's {}",
                features.cols(),
                self.in_channels
            )));
        }
        if features.rows() == 0 {
            return Err(CoreError::validation("cannot encode an empty clip"));
        }
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let x = tape.constant(features.clone());
        let (mu, _) = self.encode_nodes(&mut tape, &mut binder, store, x);
        Ok(tape.value(mu).clone())
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        if features.cols() != self.in_channels {
            return Err(CoreError::validation(format!(
                "feature width {} does not match the encoder's {}",
                features.cols(),
                self.in_channels
            )));
        }
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let x = tape.constant(features.clone());
        let (mu, _) = self.encode_nodes(&mut tape, &mut binder, store, x);
        let rec = self.decode_nodes(&mut tape, &mut binder, store, mu, features.rows());
        Ok(tape.value(rec).clone())
    }
}

/// Token-sequence encoder: embedding lookup, mean pooling over the sequence,
/// then a linear map into the gesture latent space.
///
/// Mean pooling is the sequence-reduction rule, so any permutation of the
/// tokens encodes to the same latent (up to floating-point summation order).
pub struct TextEncoder {
    emb_name: String,
    out: Linear,
    pub vocab_size: usize,
    pub emb_dim: usize,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab_size: usize,
        emb_dim: usize,
        d_z: usize,
    ) -> Self {
        let emb_name = format!("{name}.emb");
        // Embedding rows start near unit norm so phrases that differ in one
        // word are well separated from the first step.
        store.init_normal(rng, &emb_name, vocab_size, emb_dim, 1.0 / (emb_dim as f64).sqrt());
        let out = Linear::new(store, rng, &format!("{name}.out"), emb_dim, d_z);
        TextEncoder {
            emb_name,
            out,
            vocab_size,
            emb_dim,
        }
    }

    /// Graph for one token sequence; returns a (1, d_z) latent node.
    pub fn encode_node(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        tokens: &[usize],
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(CoreError::validation("cannot encode an empty token list"));
        }
        for &t in tokens {
            if t >= self.vocab_size {
                return Err(CoreError::validation(format!(
                    "token id {t} is outside the vocabulary of {} entries",
                    self.vocab_size
                )));
            }
        }
        let emb = binder.node(tape, store, &self.emb_name);
        let rows = tape.gather_rows(emb, tokens);
        let pool = tape.constant(Tensor::from_fn(1, tokens.len(), |_, _| {
            1.0 / tokens.len() as f64
        }));
        let pooled = tape.matmul(pool, rows);
        Ok(self.out.apply(tape, binder, store, pooled))
    }

    /// Deterministic evaluation wrapper.
    pub fn encode(&self, store: &ParamStore, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let node = self.encode_node(&mut tape, &mut binder, store, tokens)?;
        Ok(tape.value(node).clone())
    }
}

/// Small head mapping a text latent to the semantic latent compared against
/// gesture latents.
pub struct Predictor {
    mlp: Mlp,
    pub d_z: usize,
}

impl Predictor {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_z: usize) -> Self {
        Predictor {
            mlp: Mlp::new(store, rng, name, &[d_z, 2 * d_z, d_z]),
            d_z,
        }
    }

    pub fn apply_node(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        self.mlp.apply(tape, binder, store, x)
    }

    pub fn predict(&self, store: &ParamStore, latent: &Tensor) -> Result<Tensor> {
        if latent.rows() != 1 || latent.cols() != self.d_z {
            return Err(CoreError::validation(format!(
                "expected a (1, {}) latent, got ({}, {})",
                self.d_z,
                latent.rows(),
                latent.cols()
            )));
        }
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let x = tape.constant(latent.clone());
        let node = self.apply_node(&mut tape, &mut binder, store, x);
        Ok(tape.value(node).clone())
    }
}

/// Row-normalize to unit length on the tape; rejects rows with (near-)zero
/// norm so cosine similarities stay defined.
pub fn normalize_rows(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let v = tape.value(x);
    for i in 0..v.rows() {
        let norm_sq: f64 = v.row(i).iter().map(|a| a * a).sum();
        if norm_sq < 1e-24 {
            return Err(CoreError::validation(format!(
                "row {i} has zero norm; cosine similarity is undefined"
            )));
        }
    }
    let sq = tape.mul(x, x);
    let norm_sq = tape.row_sum(sq);
    let norm = tape.sqrt(norm_sq);
    let cols = tape.value(x).cols();
    let denom = tape.broadcast_col(norm, cols);
    Ok(tape.div(x, denom))
}

/// Normalized-temperature cross entropy over cosine similarities.
///
/// Each anchor row is scored against its matching positive row and against a
/// shared set of negatives; the loss is the mean over anchors of
/// `-log(exp(s_pos / t) / sum_k exp(s_k / t))`.
pub fn nt_xent(
    tape: &mut Tape,
    anchors: NodeId,
    positives: NodeId,
    negatives: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(CoreError::validation("temperature must be positive"));
    }
    let (n, d) = tape.value(anchors).shape();
    if tape.value(positives).shape() != (n, d) {
        return Err(CoreError::validation(
            "positives must match anchors row for row",
        ));
    }
    if tape.value(negatives).cols() != d {
        return Err(CoreError::validation(
            "negatives must share the anchor feature width",
        ));
    }
    let an = normalize_rows(tape, anchors)?;
    let pn = normalize_rows(tape, positives)?;
    let nn = normalize_rows(tape, negatives)?;
    let pos_full = tape.matmul_nt(an, pn);
    let pos = tape.take_diag(pos_full);
    let negs = tape.matmul_nt(an, nn);
    let logits_raw = tape.concat_cols(&[pos, negs]);
    let logits = tape.scale(logits_raw, 1.0 / temperature);
    let lse = tape.log_sum_exp_rows(logits);
    let pos_logit = tape.slice_cols(logits, 0, 1);
    let per_anchor = tape.sub(lse, pos_logit);
    Ok(tape.mean_all(per_anchor))
}

/// In-batch variant: candidate row `i` is the positive for anchor row `i` and
/// a negative for every other anchor.
pub fn nt_xent_batch(
    tape: &mut Tape,
    anchors: NodeId,
    candidates: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(CoreError::validation("temperature must be positive"));
    }
    let shape = tape.value(anchors).shape();
    if tape.value(candidates).shape() != shape {
        return Err(CoreError::validation(
            "in-batch contrast needs matching anchor and candidate shapes",
        ));
    }
    let an = normalize_rows(tape, anchors)?;
    let cn = normalize_rows(tape, candidates)?;
    let sims_raw = tape.matmul_nt(an, cn);
    let sims = tape.scale(sims_raw, 1.0 / temperature);
    let lse = tape.log_sum_exp_rows(sims);
    let pos = tape.take_diag(sims);
    let per_anchor = tape.sub(lse, pos);
    Ok(tape.mean_all(per_anchor))
}

/// The trained alignment stack plus everything needed to rebuild it.
pub struct AlignmentModel {
    pub cfg: AlignConfig,
    /// Sorted word list; token ids in phrases index into it.
    pub vocab_words: Vec<String>,
    pub store: ParamStore,
    pub vae: GestureVae,
    pub text: TextEncoder,
    pub predictor: Predictor,
}

impl AlignmentModel {
    pub fn new(
        cfg: &AlignConfig,
        in_channels: usize,
        vocab_words: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if in_channels == 0 {
            return Err(CoreError::validation("feature width must be positive"));
        }
        if vocab_words.is_empty() {
            return Err(CoreError::validation("word list must not be empty"));
        }
        let mut store = ParamStore::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let vae = GestureVae::new(&mut store, &mut rng, "vae", in_channels, cfg);
        let text = TextEncoder::new(
            &mut store,
            &mut rng,
            "text",
            vocab_words.len(),
            cfg.emb_dim,
            cfg.d_z,
        );
        let predictor = Predictor::new(&mut store, &mut rng, "pred", cfg.d_z);
        // Standardization buffers for gesture latents, set from training
        // statistics; until then latents pass through unchanged.
        store.insert("center", Tensor::zeros(1, cfg.d_z));
        store.insert("scale", Tensor::from_fn(1, cfg.d_z, |_, _| 1.0));
        Ok(AlignmentModel {
            cfg: cfg.clone(),
            vocab_words,
            store,
            vae,
            text,
            predictor,
        })
    }

    /// Gesture latent for a raw feature matrix (frames x channels): the
    /// pooled posterior mean, standardized per dimension by the training-set
    /// statistics recorded during alignment (identity before training).
    /// Standardizing keeps low-variance latent dimensions from being drowned
    /// out in cosine comparisons.
    pub fn encode_features(&self, features: &Tensor) -> Result<Tensor> {
        let raw = self.vae.posterior_mean(&self.store, features)?;
        Ok(raw
            .sub(self.store.get("center"))
            .hadamard(self.store.get("scale")))
    }

    /// Gesture latent for a clip.
    pub fn encode_gesture(&self, clip: &Clip) -> Result<Tensor> {
        self.encode_features(&clip_to_features(clip))
    }

    /// Text latent for a token-id sequence.
    pub fn encode_text(&self, tokens: &[usize]) -> Result<Tensor> {
        self.text.encode(&self.store, tokens)
    }

    /// Tokenize a whitespace-separated phrase against the stored word list.
    pub fn tokenize(&self, phrase: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in phrase.split_whitespace() {
            match self.vocab_words.binary_search(&word.to_string()) {
                Ok(idx) => out.push(idx),
                Err(_) => {
                    return Err(CoreError::validation(format!(
                        "word {word:?} is not in the vocabulary"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Text latent for a whitespace-separated phrase.
    pub fn encode_phrase(&self, phrase: &str) -> Result<Tensor> {
        self.encode_text(&self.tokenize(phrase)?)
    }

    /// Semantic latent (predictor over the text latent) for token ids.
    pub fn semantic_from_tokens(&self, tokens: &[usize]) -> Result<Tensor> {
        let text = self.encode_text(tokens)?;
        self.predictor.predict(&self.store, &text)
    }

    /// Semantic latent for a phrase.
    pub fn semantic_from_phrase(&self, phrase: &str) -> Result<Tensor> {
        self.semantic_from_tokens(&self.tokenize(phrase)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new("align");
        ck.sections.insert("model".to_string(), self.store.clone());
        ck.extra = serde_json::json!({
            "align_config": self.cfg,
            "in_channels": self.vae.in_channels,
            "vocab_words": self.vocab_words,
        });
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind("align")?;
        let cfg: AlignConfig = serde_json::from_value(ck.extra["align_config"].clone())
            .map_err(|e| CoreError::validation(format!("bad align_config in checkpoint: {e}")))?;
        let in_channels = ck.extra["in_channels"]
            .as_u64()
            .ok_or_else(|| CoreError::validation("checkpoint lacks in_channels"))?
            as usize;
        let vocab_words: Vec<String> = serde_json::from_value(ck.extra["vocab_words"].clone())
            .map_err(|e| CoreError::validation(format!("bad vocab_words in checkpoint: {e}")))?;
        let mut model = AlignmentModel::new(&cfg, in_channels, vocab_words, 0)?;
        let loaded = ck.section("model")?;
        for name in model.store.names() {
            if !loaded.contains(&name) {
                return Err(CoreError::Incompatible(format!(
                    "checkpoint is missing parameter {name:?}"
                )));
            }
        }
        model.store = loaded.clone();
        Ok(model)
    }
}
