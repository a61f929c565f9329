//! Dense building blocks: linear layers, layer norm, and small MLPs.
//!
//! Layers own parameter *names*, not values; values live in [`ParamStore`]
//! and reach the tape through a [`Binder`]. This keeps forward passes
//! reusable across training (parameters as leaves) and inference.

use rand_chacha::ChaCha8Rng;

use super::params::{Binder, ParamStore};
use super::tape::{NodeId, Tape};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        store.init_linear(rng, &w, in_dim, out_dim);
        store.init_zeros(&b, 1, out_dim);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let w = binder.node(tape, store, &self.w);
        let b = binder.node(tape, store, &self.b);
        let h = tape.matmul(x, w);
        tape.add_row_broadcast(h, b)
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: String,
    bias: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = format!("{name}.g");
        let bias = format!("{name}.b");
        store.init_ones(&gain, 1, dim);
        store.init_zeros(&bias, 1, dim);
        LayerNorm { gain, bias, dim }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let n = tape.value(x).cols();
        let rows = tape.value(x).rows();
        debug_assert_eq!(n, self.dim);
        let mu = tape.row_mean(x);
        let mu_b = tape.broadcast_col(mu, n);
        let xc = tape.sub(x, mu_b);
        let sq = tape.mul(xc, xc);
        let var = tape.row_mean(sq);
        let var_eps = tape.add_scalar(var, LN_EPS);
        let std = tape.sqrt(var_eps);
        let std_b = tape.broadcast_col(std, n);
        let xn = tape.div(xc, std_b);
        let g = binder.node(tape, store, &self.gain);
        let g_b = tape.broadcast_row(g, rows);
        let scaled = tape.mul(xn, g_b);
        let b = binder.node(tape, store, &self.bias);
        tape.add_row_broadcast(scaled, b)
    }
}

/// `linear -> silu -> ... -> linear`, hidden layers all the same width.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(store, rng, &format!("{name}.{i}"), dims[i], dims[i + 1]))
            .collect();
        Mlp { layers }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x: NodeId,
    ) -> NodeId {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, binder, store, h);
            if i != last {
                h = tape.silu(h);
            }
        }
        h
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}
