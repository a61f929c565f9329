//! On-disk formats: clip containers, checkpoints, dataset manifests,
//! class vocabularies, and content hashing.

pub mod checkpoint;
pub mod clip_file;
pub mod hash;
pub mod manifest;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use manifest::{ClipEntry, Manifest, Split};
pub use vocab::{ClassAttrs, Vocab};
