//! Named parameter storage shared by every trainable model.
//!
//! Parameters live in a `BTreeMap` so iteration order (and therefore
//! serialization, optimizer updates, and hashing) is deterministic.
//! A [`Binder`] lazily places parameters onto a [`Tape`] as leaves,
//! caching the node so a parameter used twice in one forward pass
//! accumulates both gradient contributions into a single slot.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, NodeId, Tape};
use super::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            self.params.insert(name.to_string(), value).is_none(),
            "duplicate parameter name: {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|t| t.is_finite())
    }

    /// Xavier-uniform weight, the default for dense layers.
    pub fn init_linear(&mut self, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
        self.insert(name, w);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn init_ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::from_fn(rows, cols, |_, _| 1.0));
    }

    /// Small-scale Gaussian init, used for embedding tables.
    pub fn init_normal(&mut self, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, std: f64) {
        let w = Tensor::from_fn(rows, cols, |_, _| {
            // Box-Muller keeps us off the distribution crates here and is
            // fully deterministic under the seeded stream.
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (-2.0 * u1.ln()).sqrt() * u2.cos() * std
        });
        self.insert(name, w);
    }
}

/// Per-tape cache of parameter leaves.
#[derive(Default)]
pub struct Binder {
    bound: BTreeMap<String, NodeId>,
}

impl Binder {
    pub fn new() -> Self {
        Binder::default()
    }

    pub fn node(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = tape.leaf(store.get(name).clone());
        self.bound.insert(name.to_string(), id);
        id
    }

    /// Collect gradients for every bound parameter. Parameters that did
    /// not influence the loss get zero gradients of the right shape.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(name, &id)| {
                let g = grads
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| {
                        let v = tape.value(id);
                        Tensor::zeros(v.rows(), v.cols())
                    });
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn binder_caches_one_leaf_per_param() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.init_linear(&mut rng, "w", 2, 2);

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let a = binder.node(&mut tape, &store, "w");
        let b = binder.node(&mut tape, &store, "w");
        assert_eq!(a, b);

        // x -> w used twice: grads should sum.
        let y = tape.mul(a, b);
        let out = tape.sum_all(y);
        let grads = tape.backward(out);
        let named = binder.grads(&tape, &grads);
        let expect = store.get("w").scale(2.0);
        for (g, e) in named["w"].data().iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn store_iteration_is_name_ordered() {
        let mut store = ParamStore::new();
        store.init_zeros("b.z", 1, 1);
        store.init_zeros("a.q", 1, 1);
        store.init_zeros("b.a", 1, 1);
        let names: Vec<_> = store.names().cloned().collect();
        assert_eq!(names, vec!["a.q", "b.a", "b.z"]);
    }
}
