//! Root trajectory parameterization: per-frame world velocity plus
//! absolute root orientation, 9 channels per frame.
//!
//! Velocities are meters/second (finite differences scaled by fps), so
//! the channels share the O(1) range of the rotation features. Frame 0
//! has zero velocity by convention; the absolute start position is
//! carried separately and supplied again when integrating.

use crate::error::{CoreError, Result};
use crate::motion::clip::Clip;
use crate::motion::rot6d::Rot6;

pub const TRAJ_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajFrame {
    /// World-frame root velocity, m/s.
    pub vel: [f64; 3],
    /// Absolute root orientation.
    pub rot: Rot6,
}

impl TrajFrame {
    pub fn to_channels(&self) -> [f64; TRAJ_DIM] {
        [
            self.vel[0], self.vel[1], self.vel[2],
            self.rot[0], self.rot[1], self.rot[2],
            self.rot[3], self.rot[4], self.rot[5],
        ]
    }

    pub fn from_channels(c: &[f64]) -> TrajFrame {
        assert_eq!(c.len(), TRAJ_DIM);
        TrajFrame {
            vel: [c[0], c[1], c[2]],
            rot: [c[3], c[4], c[5], c[6], c[7], c[8]],
        }
    }
}

/// Differentiate a clip's root track into trajectory frames.
pub fn from_clip(clip: &Clip) -> Vec<TrajFrame> {
    let fps = clip.fps();
    (0..clip.frames())
        .map(|t| {
            let vel = if t == 0 {
                [0.0; 3]
            } else {
                let p = clip.root_pos(t);
                let q = clip.root_pos(t - 1);
                [(p[0] - q[0]) * fps, (p[1] - q[1]) * fps, (p[2] - q[2]) * fps]
            };
            TrajFrame { vel, rot: clip.rot6d(t, 0) }
        })
        .collect()
}

/// Integrate trajectory frames back into a clip's root track, starting
/// from `start_pos`. Frame 0's velocity is ignored (it is zero by
/// construction when the trajectory came from [`from_clip`]).
pub fn apply_to_clip(traj: &[TrajFrame], start_pos: [f64; 3], clip: &mut Clip) -> Result<()> {
    if traj.len() != clip.frames() {
        return Err(CoreError::validation(format!(
            "trajectory has {} frames, clip has {}",
            traj.len(),
            clip.frames()
        )));
    }
    let dt = 1.0 / clip.fps();
    let mut pos = start_pos;
    for (t, f) in traj.iter().enumerate() {
        if t > 0 {
            pos = [
                pos[0] + f.vel[0] * dt,
                pos[1] + f.vel[1] * dt,
                pos[2] + f.vel[2] * dt,
            ];
        }
        clip.set_root_pos(t, pos);
        clip.set_rot6d(t, 0, f.rot);
    }
    Ok(())
}
