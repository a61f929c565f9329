//! Pre-norm transformer encoder blocks over row-per-token tensors.
//!
//! Tokens are rows of an `(S, d)` tensor; attention is full (no mask),
//! which suits denoising over whole motion windows.

use rand_chacha::ChaCha8Rng;

use super::layers::{LayerNorm, Linear, Mlp};
use super::params::{Binder, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert_eq!(dim % heads, 0, "attention width must divide across heads");
        MultiHeadAttention {
            wq: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            wk: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            wv: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            wo: Linear::new(store, rng, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let q = self.wq.apply(tape, binder, store, x);
        let k = self.wk.apply(tape, binder, store, x);
        let v = self.wv.apply(tape, binder, store, x);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&outs);
        self.wo.apply(tape, binder, store, merged)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: Mlp,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: Mlp::new(store, rng, &format!("{name}.ff"), &[dim, dim * 4, dim]),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let n1 = self.ln1.apply(tape, binder, store, x);
        let a = self.attn.apply(tape, binder, store, n1);
        let h = tape.add(x, a);
        let n2 = self.ln2.apply(tape, binder, store, h);
        let f = self.ff.apply(tape, binder, store, n2);
        tape.add(h, f)
    }
}

/// Classic sinusoidal position/timestep code as a `(1, dim)` row.
pub fn sinusoidal_embedding(pos: f64, dim: usize) -> Tensor {
    assert!(dim % 2 == 0, "sinusoidal embedding dim must be even");
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000.0_f64).powf(-(i as f64) / half as f64);
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    Tensor::row_vec(out)
}
