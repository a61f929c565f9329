//! Evaluation suite: foot-contact detection, physical plausibility
//! (skate, float), sample diversity, Fréchet gesture distance with its
//! locally trained motion embedder, beat alignment, and semantic
//! alignment. All metrics are pure functions of their inputs and config.

mod beat;
mod contacts;
mod diversity;
mod embedder;
mod fgd;
mod physical;
mod report;
mod semantic;

pub use beat::{beat_align, mean_joint_speeds, motion_beat_times, BeatConfig};
pub use contacts::{clip_contacts, detect_contacts, ContactConfig};
pub use diversity::diversity;
pub use embedder::{train_embedder, EmbedderConfig, MotionEmbedder};
pub use fgd::{fgd, frechet_distance, sym_eig, sym_sqrt, EmbeddingStats};
pub use physical::{float_metric, float_tracks, skate, skate_tracks};
pub use report::{EvalReport, MetricEntry};
pub use semantic::{cosine_similarity, sa_score};

/// A metric value plus an optional degenerate-input warning (for example
/// "no contact frames"), so callers can surface it in reports instead of
/// silently reading a defaulted zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub warning: Option<String>,
}

impl MetricValue {
    pub fn ok(value: f64) -> MetricValue {
        MetricValue { value, warning: None }
    }

    pub fn warned(value: f64, warning: impl Into<String>) -> MetricValue {
        MetricValue { value, warning: Some(warning.into()) }
    }
}
