//! Local motion embedder for FGD: a small per-frame autoencoder over
//! pose features and their frame-to-frame velocities. Clip embeddings
//! are mean-pooled encoder codes. Desk-scale stand-in for a pretrained
//! evaluator network, trained once on the synthetic dataset and shipped
//! as a checkpoint so scores are stable across runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CoreError, Result};
use crate::io::checkpoint::Checkpoint;
use crate::nn::{AdamW, Binder, ParamStore, Tape, Tensor};

pub const EMBEDDER_KIND: &str = "fgd-embedder";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Width of one pose feature row; the autoencoder input is twice
    /// this (features concatenated with velocities).
    pub feature_width: usize,
    pub hidden: usize,
    pub code: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> EmbedderConfig {
        EmbedderConfig {
            feature_width: 315,
            hidden: 128,
            code: 32,
            lr: 1e-3,
            steps: 2000,
            batch: 64,
            seed: 0,
        }
    }
}

/// Stack `[x_t, x_t - x_{t-1}]` rows for one clip's features; the first
/// frame gets zero velocity.
pub fn embedder_inputs(features: &Tensor) -> Tensor {
    let (t, w) = features.shape();
    Tensor::from_fn(t, 2 * w, |r, c| {
        if c < w {
            features.get(r, c)
        } else if r == 0 {
            0.0
        } else {
            features.get(r, c - w) - features.get(r - 1, c - w)
        }
    })
}

pub struct MotionEmbedder {
    params: ParamStore,
    feature_width: usize,
    hidden: usize,
    code: usize,
}

const LAYERS: [&str; 4] = ["enc1", "enc2", "dec1", "dec2"];

impl MotionEmbedder {
    pub fn init(cfg: &EmbedderConfig, rng: &mut ChaCha8Rng) -> MotionEmbedder {
        let mut params = ParamStore::new();
        let dims = [
            (2 * cfg.feature_width, cfg.hidden),
            (cfg.hidden, cfg.code),
            (cfg.code, cfg.hidden),
            (cfg.hidden, 2 * cfg.feature_width),
        ];
        for (name, (i, o)) in LAYERS.iter().zip(dims) {
            params.init_linear(rng, &format!("{name}.w"), i, o);
            params.init_zeros(&format!("{name}.b"), 1, o);
        }
        MotionEmbedder {
            params,
            feature_width: cfg.feature_width,
            hidden: cfg.hidden,
            code: cfg.code,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn code_dim(&self) -> usize {
        self.code
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn linear_plain(&self, name: &str, x: &Tensor) -> Tensor {
        let w = self.params.get(&format!("{name}.w"));
        let b = self.params.get(&format!("{name}.b"));
        let mut y = x.matmul(w);
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                *v += b.get(0, c);
            }
        }
        y
    }

    fn encode_plain(&self, inputs: &Tensor) -> Tensor {
        let h = self.linear_plain("enc1", inputs).map(silu);
        self.linear_plain("enc2", &h)
    }

    /// Mean-pooled code for one clip's feature rows.
    pub fn embed(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.rows() == 0 {
            return Err(CoreError::validation("cannot embed a clip with no frames"));
        }
        if features.cols() != self.feature_width {
            return Err(CoreError::validation(format!(
                "clip feature width {} does not match embedder width {}",
                features.cols(),
                self.feature_width
            )));
        }
        let codes = self.encode_plain(&embedder_inputs(features));
        let mut pooled = vec![0.0; self.code];
        for r in 0..codes.rows() {
            for (j, p) in pooled.iter_mut().enumerate() {
                *p += codes.get(r, j);
            }
        }
        for p in &mut pooled {
            *p /= codes.rows() as f64;
        }
        Ok(pooled)
    }

    /// Embeddings for a batch of clips, one row each.
    pub fn embed_set(&self, clips: &[Tensor]) -> Result<Tensor> {
        if clips.is_empty() {
            return Err(CoreError::validation("cannot embed an empty clip set"));
        }
        let mut out = Tensor::zeros(clips.len(), self.code);
        for (i, f) in clips.iter().enumerate() {
            let e = self.embed(f)?;
            out.row_mut(i).copy_from_slice(&e);
        }
        Ok(out)
    }

    /// One reconstruction step on a batch of input rows; returns the MSE.
    fn train_step(&mut self, batch: &Tensor, opt: &mut AdamW) -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let x = tape.constant(batch.clone());
        let layer = |tape: &mut Tape, binder: &mut Binder, params: &ParamStore, name: &str, h| {
            let w = binder.node(tape, params, &format!("{name}.w"));
            let b = binder.node(tape, params, &format!("{name}.b"));
            let y = tape.matmul(h, w);
            tape.add_row_broadcast(y, b)
        };
        let h1 = layer(&mut tape, &mut binder, &self.params, "enc1", x);
        let h1 = tape.silu(h1);
        let code = layer(&mut tape, &mut binder, &self.params, "enc2", h1);
        let h2 = layer(&mut tape, &mut binder, &self.params, "dec1", code);
        let h2 = tape.silu(h2);
        let recon = layer(&mut tape, &mut binder, &self.params, "dec2", h2);
        let loss = tape.mse(recon, x);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(CoreError::Divergence(format!("embedder loss became {value}")));
        }
        let grads = tape.backward(loss);
        let named = binder.grads(&tape, &grads);
        opt.apply(&mut self.params, &named);
        Ok(value)
    }

    pub fn save(&self, path: &Path, step: usize) -> Result<()> {
        let mut ck = Checkpoint::new(EMBEDDER_KIND);
        ck.step = step as u64;
        ck.extra = json!({
            "feature_width": self.feature_width,
            "hidden": self.hidden,
            "code": self.code,
        });
        ck.sections.insert("autoencoder".to_string(), self.params.clone());
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<MotionEmbedder> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(EMBEDDER_KIND)?;
        let dim = |key: &str| -> Result<usize> {
            ck.extra
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| {
                    CoreError::Incompatible(format!("embedder checkpoint is missing {key}"))
                })
        };
        Ok(MotionEmbedder {
            params: ck.section("autoencoder")?.clone(),
            feature_width: dim("feature_width")?,
            hidden: dim("hidden")?,
            code: dim("code")?,
        })
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Train on all frame rows of the dataset (already passed through
/// `embedder_inputs` and stacked). Returns the per-step loss curve.
pub fn train_embedder(
    frame_inputs: &Tensor,
    cfg: &EmbedderConfig,
) -> Result<(MotionEmbedder, Vec<f64>)> {
    if frame_inputs.cols() != 2 * cfg.feature_width {
        return Err(CoreError::validation(format!(
            "training rows are {} wide, expected {}",
            frame_inputs.cols(),
            2 * cfg.feature_width
        )));
    }
    if frame_inputs.rows() < cfg.batch {
        return Err(CoreError::validation(format!(
            "need at least {} frame rows, got {}",
            cfg.batch,
            frame_inputs.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MotionEmbedder::init(cfg, &mut rng);
    let mut opt = AdamW::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Tensor::zeros(cfg.batch, frame_inputs.cols());
        for r in 0..cfg.batch {
            let pick = rng.random_range(0..frame_inputs.rows());
            batch.row_mut(r).copy_from_slice(frame_inputs.row(pick));
        }
        losses.push(model.train_step(&batch, &mut opt)?);
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_cfg() -> EmbedderConfig {
        EmbedderConfig {
            feature_width: 4,
            hidden: 16,
            code: 3,
            lr: 3e-3,
            steps: 300,
            batch: 16,
            seed: 7,
        }
    }

    #[test]
    fn inputs_concatenate_features_and_velocities() {
        let f = Tensor::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let x = embedder_inputs(&f);
        assert_eq!(x.shape(), (3, 4));
        assert_eq!(x.row(0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.row(1), &[2.0, 3.0, 2.0, 2.0]);
        assert_eq!(x.row(2), &[4.0, 5.0, 2.0, 2.0]);
    }

    fn toy_rows(n: usize, seed: u64) -> Tensor {
        // Two clusters on a 1-D manifold, easy to compress through a
        // 3-wide code.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(n, 8);
        for r in 0..n {
            let base = if r % 2 == 0 { 1.0 } else { -1.0 };
            for c in 0..8 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                t.set(r, c, base * (c as f64 * 0.3 + 0.5) + 0.05 * noise);
            }
        }
        t
    }

    #[test]
    fn training_reduces_reconstruction_loss() {
        let rows = toy_rows(128, 1);
        let (_, losses) = train_embedder(&rows, &tiny_cfg()).unwrap();
        let early: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let late: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(late < early * 0.5, "early {early} late {late}");
    }

    #[test]
    fn embedding_is_deterministic_and_survives_checkpointing() {
        let rows = toy_rows(64, 2);
        let (model, _) = train_embedder(&rows, &tiny_cfg()).unwrap();
        let clip = Tensor::from_fn(10, 4, |r, c| (r as f64 * 0.1) - c as f64 * 0.2);
        let e1 = model.embed(&clip).unwrap();
        let e2 = model.embed(&clip).unwrap();
        assert_eq!(e1, e2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embedder.ck");
        model.save(&path, 300).unwrap();
        let re = MotionEmbedder::load(&path).unwrap();
        assert_eq!(re.embed(&clip).unwrap(), e1);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = MotionEmbedder::init(&tiny_cfg(), &mut rng);
        assert!(model.embed(&Tensor::zeros(5, 7)).is_err());
        assert!(model.embed(&Tensor::zeros(0, 4)).is_err());
    }
}
