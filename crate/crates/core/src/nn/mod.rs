//! Neural-network foundation: tensors, reverse-mode autodiff, layers,
//! transformer blocks, and optimizers. Everything is plain `f64` on the
//! CPU and fully deterministic under seeded RNG streams.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod transformer;

pub use layers::{LayerNorm, Linear, Mlp};
pub use optim::{AdamW, Ema};
pub use params::{Binder, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use transformer::{sinusoidal_embedding, MultiHeadAttention, TransformerBlock};
