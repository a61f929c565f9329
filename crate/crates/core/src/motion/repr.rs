//! Model-facing feature representation of a clip and its body-part split.
//!
//! Features are a `(frames, width)` tensor whose per-frame layout is all
//! non-root joint rotations (6 channels each, joint order) followed by
//! the 9 trajectory channels. The generators never see absolute root
//! position; it is reattached at integration time.
//!
//! The three denoised parts partition the channels:
//!   - lower: leg/foot/toe rotations plus the trajectory block,
//!   - upper: spine/neck/head/arm rotations,
//!   - fingers: both hands.

use crate::error::{CoreError, Result};
use crate::motion::clip::Clip;
use crate::motion::skeleton::Skeleton;
use crate::motion::trajectory::{self, TrajFrame, TRAJ_DIM};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyPart {
    Lower,
    Upper,
    Fingers,
}

pub const ALL_PARTS: [BodyPart; 3] = [BodyPart::Lower, BodyPart::Upper, BodyPart::Fingers];

impl BodyPart {
    pub fn tag(&self) -> &'static str {
        match self {
            BodyPart::Lower => "lower",
            BodyPart::Upper => "upper",
            BodyPart::Fingers => "fingers",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureLayout {
    joints: usize,
    lower: Vec<usize>,
    upper: Vec<usize>,
    fingers: Vec<usize>,
}

impl FeatureLayout {
    pub fn new(skel: &Skeleton) -> FeatureLayout {
        let chans = |ids: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = ids
                .iter()
                .flat_map(|&j| {
                    let base = (j - 1) * 6;
                    base..base + 6
                })
                .collect();
            out.sort_unstable();
            out
        };
        let mut lower = chans(skel.lower());
        let width = (skel.joints() - 1) * 6;
        lower.extend(width..width + TRAJ_DIM);
        FeatureLayout {
            joints: skel.joints(),
            lower,
            upper: chans(skel.upper()),
            fingers: chans(skel.fingers()),
        }
    }

    pub fn width(&self) -> usize {
        (self.joints - 1) * 6 + TRAJ_DIM
    }

    /// Channel range of one non-root joint's rotation.
    pub fn joint_channels(&self, j: usize) -> std::ops::Range<usize> {
        assert!(j >= 1 && j < self.joints);
        let base = (j - 1) * 6;
        base..base + 6
    }

    pub fn traj_channels(&self) -> std::ops::Range<usize> {
        let base = (self.joints - 1) * 6;
        base..base + TRAJ_DIM
    }

    /// Sorted channel indices owned by a part. The lower part carries the
    /// trajectory block so locomotion is denoised as one unit.
    pub fn part_channels(&self, part: BodyPart) -> &[usize] {
        match part {
            BodyPart::Lower => &self.lower,
            BodyPart::Upper => &self.upper,
            BodyPart::Fingers => &self.fingers,
        }
    }

    pub fn part_width(&self, part: BodyPart) -> usize {
        self.part_channels(part).len()
    }
}

/// Pack a clip into model features.
pub fn clip_to_features(clip: &Clip) -> Tensor {
    let joints = clip.joints();
    let width = (joints - 1) * 6 + TRAJ_DIM;
    let traj = trajectory::from_clip(clip);
    let mut out = Tensor::zeros(clip.frames(), width);
    for t in 0..clip.frames() {
        let row = out.row_mut(t);
        for j in 1..joints {
            row[(j - 1) * 6..j * 6].copy_from_slice(&clip.rot6d(t, j));
        }
        row[(joints - 1) * 6..].copy_from_slice(&traj[t].to_channels());
    }
    out
}

/// Unpack model features into a clip, integrating the trajectory from
/// `start_pos`. Rotations are stored as-is; call
/// [`Clip::normalize_rotations`] afterwards if the features came from a
/// sampler rather than from data.
pub fn features_to_clip(
    features: &Tensor,
    fps: f64,
    joints: usize,
    start_pos: [f64; 3],
) -> Result<Clip> {
    let width = (joints - 1) * 6 + TRAJ_DIM;
    if features.cols() != width {
        return Err(CoreError::validation(format!(
            "feature width {} does not match {} joints (expected {})",
            features.cols(),
            joints,
            width
        )));
    }
    let frames = features.rows();
    let mut clip = Clip::new(fps, joints, frames);
    let mut traj = Vec::with_capacity(frames);
    for t in 0..frames {
        let row = features.row(t);
        for j in 1..joints {
            let mut r = [0.0; 6];
            r.copy_from_slice(&row[(j - 1) * 6..j * 6]);
            clip.set_rot6d(t, j, r);
        }
        traj.push(TrajFrame::from_channels(&row[(joints - 1) * 6..]));
    }
    trajectory::apply_to_clip(&traj, start_pos, &mut clip)?;
    Ok(clip)
}

/// Extract the listed channels into a narrower tensor.
pub fn gather_channels(x: &Tensor, chans: &[usize]) -> Tensor {
    Tensor::from_fn(x.rows(), chans.len(), |i, k| x.get(i, chans[k]))
}

/// Write a narrow tensor back into the listed channels of `dst`.
pub fn scatter_channels(dst: &mut Tensor, chans: &[usize], src: &Tensor) {
    assert_eq!(src.rows(), dst.rows());
    assert_eq!(src.cols(), chans.len());
    for i in 0..src.rows() {
        for (k, &c) in chans.iter().enumerate() {
            dst.set(i, c, src.get(i, k));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rot6d::{rot_x, rot_y};

    fn moving_clip(skel: &Skeleton) -> Clip {
        let mut clip = Clip::new(30.0, skel.joints(), 25);
        for t in 0..25 {
            let s = t as f64 / 30.0;
            clip.set_root_pos(t, [0.5 * s, 0.96, 0.05 * (3.0 * s).sin()]);
            clip.set_rotation(t, 0, &rot_y(0.2 * s));
            clip.set_rotation(t, 18, &rot_x(0.8 * (2.0 * s).sin()));
            clip.set_rotation(t, 5, &rot_x(0.4 * (3.0 * s).cos()));
        }
        clip
    }

    #[test]
    fn layout_partitions_all_channels() {
        let skel = Skeleton::default52();
        let layout = FeatureLayout::new(skel);
        assert_eq!(layout.width(), 315);
        assert_eq!(layout.part_width(BodyPart::Lower), 8 * 6 + TRAJ_DIM);
        assert_eq!(layout.part_width(BodyPart::Upper), 13 * 6);
        assert_eq!(layout.part_width(BodyPart::Fingers), 30 * 6);
        let mut seen = vec![false; layout.width()];
        for part in ALL_PARTS {
            for &c in layout.part_channels(part) {
                assert!(!seen[c], "channel {c} claimed twice");
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn features_round_trip_through_clip() {
        let skel = Skeleton::default52();
        let clip = moving_clip(skel);
        let feats = clip_to_features(&clip);
        assert_eq!(feats.shape(), (25, 315));
        let back = features_to_clip(&feats, clip.fps(), skel.joints(), clip.root_pos(0)).unwrap();
        for t in 0..clip.frames() {
            let a = clip.root_pos(t);
            let b = back.root_pos(t);
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
            for j in 0..skel.joints() {
                assert_eq!(clip.rot6d(t, j), back.rot6d(t, j), "frame {t} joint {j}");
            }
        }
    }

    #[test]
    fn gather_scatter_are_inverse() {
        let skel = Skeleton::default52();
        let layout = FeatureLayout::new(skel);
        let clip = moving_clip(skel);
        let feats = clip_to_features(&clip);
        let mut rebuilt = Tensor::zeros(feats.rows(), feats.cols());
        for part in ALL_PARTS {
            let chans = layout.part_channels(part);
            let piece = gather_channels(&feats, chans);
            scatter_channels(&mut rebuilt, chans, &piece);
        }
        assert_eq!(rebuilt, feats);
    }
}
