//! Conditional stepwise discriminator.
//!
//! Judges row-wise tuples: each row concatenates the candidate previous
//! sample, the noisier context it should explain, an optional condition
//! embedding, and a sinusoidal code of the (base) timestep, and maps them
//! through a leaky-ReLU MLP to one real-vs-generated logit. Conditioning
//! on the context `x_t` lets the discriminator match the joint
//! distribution of adjacent diffusion states rather than each marginal
//! alone.
//!
//! [`Discriminator::input_gradient`] rebuilds the backward pass of the
//! logit with respect to its own input as tape operations, so the
//! gradient penalty derived from it is itself differentiable with respect
//! to the weights. This relies on `leaky_relu_deriv` being treated as
//! locally constant, which is exact for a piecewise-linear activation
//! away from the kink.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{sinusoidal_embedding, Binder, Linear, NodeId, ParamStore, Tape, Tensor};

const LEAK: f64 = 0.2;

/// Architecture knobs for [`Discriminator`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    /// Hidden layer widths; empty means a single linear map.
    pub hidden: Vec<usize>,
    /// Width of the sinusoidal timestep code appended to each row.
    pub t_dim: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { hidden: vec![256, 256], t_dim: 32 }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_dim == 0 || self.t_dim % 2 != 0 {
            return Err(CoreError::validation("discriminator t_dim must be positive and even"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(CoreError::validation("discriminator hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    layers: Vec<Linear>,
    pub data_dim: usize,
    pub cond_dim: usize,
    pub t_dim: usize,
}

impl Discriminator {
    /// `data_dim` is the width of one sample row; rows fed to the network
    /// are `2*data_dim + cond_dim + t_dim` wide. `hidden` may be empty,
    /// which degenerates to a single linear layer.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        data_dim: usize,
        cond_dim: usize,
        t_dim: usize,
        hidden: &[usize],
    ) -> Self {
        assert!(t_dim > 0 && t_dim % 2 == 0, "t_dim must be positive and even");
        let mut dims = vec![2 * data_dim + cond_dim + t_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(store, rng, &format!("{name}.{i}"), dims[i], dims[i + 1]))
            .collect();
        Discriminator { layers, data_dim, cond_dim, t_dim }
    }

    fn input_node(
        &self,
        tape: &mut Tape,
        x_prev: NodeId,
        x_t: NodeId,
        cond: Option<NodeId>,
        t: usize,
    ) -> NodeId {
        let n = tape.value(x_prev).rows();
        debug_assert_eq!(tape.value(x_prev).cols(), self.data_dim);
        debug_assert_eq!(tape.value(x_t).shape(), (n, self.data_dim));
        let t_row = tape.constant(sinusoidal_embedding(t as f64, self.t_dim));
        let t_emb = tape.broadcast_row(t_row, n);
        let mut parts = vec![x_prev, x_t];
        if let Some(c) = cond {
            debug_assert_eq!(tape.value(c).shape(), (n, self.cond_dim));
            parts.push(c);
        }
        parts.push(t_emb);
        tape.concat_cols(&parts)
    }

    /// Pre-activation values after every hidden layer, and the final logit.
    fn forward_from(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        z: NodeId,
    ) -> (NodeId, Vec<NodeId>) {
        let mut h = z;
        let mut pre = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, binder, store, h);
            if i + 1 != self.layers.len() {
                pre.push(h);
                h = tape.leaky_relu(h, LEAK);
            }
        }
        (h, pre)
    }

    /// One real-vs-generated logit per row, shape `(n, 1)`.
    #[allow(clippy::too_many_arguments)]
    pub fn logits(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x_prev: NodeId,
        x_t: NodeId,
        cond: Option<NodeId>,
        t: usize,
    ) -> NodeId {
        let z = self.input_node(tape, x_prev, x_t, cond, t);
        self.forward_from(tape, binder, store, z).0
    }

    /// Per-row gradient of the logit with respect to the concatenated
    /// input, shape `(n, 2*data_dim + cond_dim + t_dim)`, built as tape
    /// operations so it can be penalized and differentiated again.
    #[allow(clippy::too_many_arguments)]
    pub fn input_gradient(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        store: &ParamStore,
        x_prev: NodeId,
        x_t: NodeId,
        cond: Option<NodeId>,
        t: usize,
    ) -> NodeId {
        let z = self.input_node(tape, x_prev, x_t, cond, t);
        let n = tape.value(z).rows();
        let (_, pre) = self.forward_from(tape, binder, store, z);
        // Reverse pass, kept on the tape: seed with d(logit)/d(logit) = 1
        // per row and walk back through each linear layer and activation.
        let mut g = tape.constant(Tensor::from_fn(n, 1, |_, _| 1.0));
        for i in (0..self.layers.len()).rev() {
            let w = binder.node(tape, store, self.layers[i].weight_name());
            g = tape.matmul_nt(g, w);
            if i > 0 {
                let slope = tape.leaky_relu_deriv(pre[i - 1], LEAK);
                g = tape.mul(g, slope);
            }
        }
        g
    }
}

/// R1-style smoothness penalty: `coef` times the batch-mean squared norm
/// of the discriminator's input gradient, evaluated at the given (real)
/// samples. A constant discriminator scores exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn gradient_penalty(
    tape: &mut Tape,
    binder: &mut Binder,
    store: &ParamStore,
    disc: &Discriminator,
    x_prev: NodeId,
    x_t: NodeId,
    cond: Option<NodeId>,
    t: usize,
    coef: f64,
) -> NodeId {
    let g = disc.input_gradient(tape, binder, store, x_prev, x_t, cond, t);
    let sq = tape.mul(g, g);
    let per_row = tape.row_sum(sq);
    let mean = tape.mean_all(per_row);
    tape.scale(mean, coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::noise_like;
    use rand::SeedableRng;

    fn zero_weights(store: &mut ParamStore) {
        for name in store.names().cloned().collect::<Vec<_>>() {
            let t = store.get_mut(&name);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
    }

    #[test]
    fn constant_discriminator_has_zero_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 3, 2, 8, &[16, 16]);
        zero_weights(&mut store);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let xp = tape.constant(noise_like(&mut rng, 5, 3));
        let xt = tape.constant(noise_like(&mut rng, 5, 3));
        let c = tape.constant(noise_like(&mut rng, 5, 2));
        let gp = gradient_penalty(&mut tape, &mut binder, &store, &disc, xp, xt, Some(c), 7, 0.02);
        assert_eq!(tape.value(gp).item(), 0.0);
    }

    #[test]
    fn linear_discriminator_penalty_is_coef_times_weight_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 4, 0, 6, &[]);
        let w = store.get(disc.layers[0].weight_name()).clone();
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let xp = tape.constant(noise_like(&mut rng, 3, 4));
        let xt = tape.constant(noise_like(&mut rng, 3, 4));
        let gp = gradient_penalty(&mut tape, &mut binder, &store, &disc, xp, xt, None, 2, 0.02);
        assert!((tape.value(gp).item() - 0.02 * w.frob_sq()).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_nonnegative_for_random_networks() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let disc = Discriminator::new(&mut store, &mut rng, "d", 2, 1, 4, &[8]);
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let xp = tape.constant(noise_like(&mut rng, 6, 2));
            let xt = tape.constant(noise_like(&mut rng, 6, 2));
            let c = tape.constant(noise_like(&mut rng, 6, 1));
            let gp =
                gradient_penalty(&mut tape, &mut binder, &store, &disc, xp, xt, Some(c), 1, 0.02);
            assert!(tape.value(gp).item() >= 0.0);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences_of_the_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 3, 0, 4, &[8, 8]);
        let xp = noise_like(&mut rng, 1, 3);
        let xt = noise_like(&mut rng, 1, 3);

        let logit_at = |xp: &Tensor, xt: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let a = tape.constant(xp.clone());
            let b = tape.constant(xt.clone());
            let l = disc.logits(&mut tape, &mut binder, &store, a, b, None, 5);
            tape.value(l).item()
        };

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let a = tape.constant(xp.clone());
        let b = tape.constant(xt.clone());
        let g = disc.input_gradient(&mut tape, &mut binder, &store, a, b, None, 5);
        let g = tape.value(g).clone();
        assert_eq!(g.shape(), (1, 2 * 3 + 4));

        let h = 1e-6;
        for j in 0..3 {
            let mut plus = xp.clone();
            plus.set(0, j, plus.get(0, j) + h);
            let mut minus = xp.clone();
            minus.set(0, j, minus.get(0, j) - h);
            let fd = (logit_at(&plus, &xt) - logit_at(&minus, &xt)) / (2.0 * h);
            assert!((g.get(0, j) - fd).abs() < 1e-6, "xp[{j}]: {} vs {fd}", g.get(0, j));
        }
        for j in 0..3 {
            let mut plus = xt.clone();
            plus.set(0, j, plus.get(0, j) + h);
            let mut minus = xt.clone();
            minus.set(0, j, minus.get(0, j) - h);
            let fd = (logit_at(&xp, &plus) - logit_at(&xp, &minus)) / (2.0 * h);
            assert!((g.get(0, j + 3) - fd).abs() < 1e-6, "xt[{j}]: {} vs {fd}", g.get(0, j + 3));
        }
    }

    #[test]
    fn penalty_weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 2, 0, 4, &[6]);
        let xp = noise_like(&mut rng, 4, 2);
        let xt = noise_like(&mut rng, 4, 2);

        let penalty_at = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let a = tape.constant(xp.clone());
            let b = tape.constant(xt.clone());
            let gp = gradient_penalty(&mut tape, &mut binder, store, &disc, a, b, None, 3, 0.02);
            tape.value(gp).item()
        };

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let a = tape.constant(xp.clone());
        let b = tape.constant(xt.clone());
        let gp = gradient_penalty(&mut tape, &mut binder, &store, &disc, a, b, None, 3, 0.02);
        let grads = binder.grads(&tape, &tape.backward(gp));

        let h = 1e-5;
        for (name, idx) in [("d.0.w", 3usize), ("d.0.w", 11), ("d.1.w", 2), ("d.0.b", 1)] {
            let analytic = grads[name].data()[idx];
            let mut plus = store.clone();
            plus.get_mut(name).data_mut()[idx] += h;
            let mut minus = store.clone();
            minus.get_mut(name).data_mut()[idx] -= h;
            let fd = (penalty_at(&plus) - penalty_at(&minus)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-3, "{name}[{idx}]: analytic {analytic}, fd {fd}");
        }
    }

    #[test]
    fn logits_shape_and_conditioning_change_the_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 3, 2, 4, &[8]);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let xp = tape.constant(noise_like(&mut rng, 6, 3));
        let xt = tape.constant(noise_like(&mut rng, 6, 3));
        let c0 = tape.constant(Tensor::zeros(6, 2));
        let c1 = tape.constant(Tensor::from_fn(6, 2, |_, _| 1.0));
        let l0 = disc.logits(&mut tape, &mut binder, &store, xp, xt, Some(c0), 1, );
        let l1 = disc.logits(&mut tape, &mut binder, &store, xp, xt, Some(c1), 1);
        assert_eq!(tape.value(l0).shape(), (6, 1));
        let d = tape.value(l0).sub(tape.value(l1)).max_abs();
        assert!(d > 1e-9, "condition had no effect");
    }

    #[test]
    fn timestep_code_changes_the_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let disc = Discriminator::new(&mut store, &mut rng, "d", 2, 0, 8, &[8]);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let xp = tape.constant(noise_like(&mut rng, 4, 2));
        let xt = tape.constant(noise_like(&mut rng, 4, 2));
        let a = disc.logits(&mut tape, &mut binder, &store, xp, xt, None, 1);
        let b = disc.logits(&mut tape, &mut binder, &store, xp, xt, None, 900);
        let d = tape.value(a).sub(tape.value(b)).max_abs();
        assert!(d > 1e-9, "timestep had no effect");
    }
}
