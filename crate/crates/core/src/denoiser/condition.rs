//! Conditioning inputs for a denoising call and their time alignment.
//!
//! A [`CondBundle`] carries everything the denoiser is conditioned on
//! besides the noised motion itself: the noise step, a short seed of
//! clean motion for continuity, a per-frame feature track standing in
//! for encoded audio, and the semantic latent from the alignment module.
//! [`NullFlags`] mark conditions as dropped; the embedder substitutes a
//! learned null embedding for each dropped condition, which is how the
//! unconditional branch of classifier-free guidance is expressed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::Tensor;

/// Which conditions are dropped (replaced by null embeddings).
///
/// During training the flags are drawn jointly: with probability `p` the
/// whole bundle is dropped at once, so the network sees exactly the two
/// branches that guidance later interpolates between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NullFlags {
    pub seed_pose: bool,
    pub feature_track: bool,
    pub semantic_latent: bool,
}

impl NullFlags {
    pub fn none() -> Self {
        NullFlags::default()
    }

    pub fn all() -> Self {
        NullFlags {
            seed_pose: true,
            feature_track: true,
            semantic_latent: true,
        }
    }

    pub fn is_all(&self) -> bool {
        self.seed_pose && self.feature_track && self.semantic_latent
    }

    /// Joint condition dropout: all conditions dropped with probability `p`.
    pub fn draw(rng: &mut ChaCha8Rng, p: f64) -> Self {
        if rng.random_range(0.0..1.0) < p {
            NullFlags::all()
        } else {
            NullFlags::none()
        }
    }
}

/// Conditioning inputs for one denoising call.
#[derive(Debug, Clone)]
pub struct CondBundle {
    /// Base noise step the input sits at.
    pub timestep: usize,
    /// First `seed_frames` frames of clean motion features, `(S, pose_width)`.
    pub seed_pose: Tensor,
    /// Per-frame feature matrix, `(any_frames, feature_dim)`. Interpolated
    /// to the clip length inside the embedder, so it may arrive at a
    /// different rate.
    pub feature_track: Tensor,
    /// Fixed-size semantic vector, `(1, semantic_dim)`.
    pub semantic_latent: Tensor,
    pub null_flags: NullFlags,
}

impl CondBundle {
    pub fn new(
        timestep: usize,
        seed_pose: Tensor,
        feature_track: Tensor,
        semantic_latent: Tensor,
    ) -> Self {
        CondBundle {
            timestep,
            seed_pose,
            feature_track,
            semantic_latent,
            null_flags: NullFlags::none(),
        }
    }

    /// The same bundle with every condition dropped. Condition contents are
    /// kept only so the embedder still knows the token count.
    pub fn to_unconditional(&self) -> Self {
        let mut b = self.clone();
        b.null_flags = NullFlags::all();
        b
    }

    pub fn with_timestep(&self, t: usize) -> Self {
        let mut b = self.clone();
        b.timestep = t;
        b
    }
}

/// Linearly resample `track` along time to exactly `target_frames` rows.
///
/// The output grid spans the input uniformly, so the first and last rows
/// are preserved bit for bit. A track already at the target length is
/// returned unchanged, and a constant track stays constant at any length.
pub fn align_features(track: &Tensor, target_frames: usize) -> Result<Tensor> {
    if track.rows() == 0 || track.cols() == 0 {
        return Err(CoreError::validation("cannot align an empty feature track"));
    }
    if target_frames == 0 {
        return Err(CoreError::validation(
            "feature alignment target must be at least one frame",
        ));
    }
    let (rows, cols) = track.shape();
    if rows == target_frames {
        return Ok(track.clone());
    }
    let mut out = Tensor::zeros(target_frames, cols);
    for i in 0..target_frames {
        // Position of output row i on the input grid [0, rows-1].
        let u = if target_frames == 1 {
            0.0
        } else {
            i as f64 * (rows - 1) as f64 / (target_frames - 1) as f64
        };
        let lo = (u.floor() as usize).min(rows - 1);
        let hi = (lo + 1).min(rows - 1);
        let frac = u - lo as f64;
        for c in 0..cols {
            let a = track.get(lo, c);
            let b = track.get(hi, c);
            out.set(i, c, if frac == 0.0 { a } else { (1.0 - frac) * a + frac * b });
        }
    }
    Ok(out)
}
