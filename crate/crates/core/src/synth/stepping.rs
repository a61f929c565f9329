//! Lower-body synthesis: planted stance or beat-locked stepping with an
//! exactly pinned support toe via analytic two-bone leg IK.
//!
//! The sagittal plane is x-y (forward is +x) and both leg chains live at
//! fixed lateral offsets z = ±0.10, so the IK is planar about the z
//! axis. All motion profiles have zero velocity on beat frames, which
//! keeps the whole body still there and phase-locks motion beats to the
//! audio beat grid.

use crate::error::{CoreError, Result};
use crate::motion::rot6d::rot_z;
use crate::motion::{Clip, Skeleton};

/// Toe tip sits this far ahead of the ankle (skeleton toe offset x).
const TOE_AHEAD: f64 = 0.14;
/// Ankle height above a grounded toe (negative toe offset y).
const ANKLE_LIFT: f64 = 0.07;
/// Hip drop below the root (hip offset y).
const HIP_DROP: f64 = 0.07;
const THIGH_LEN: f64 = 0.42;
const SHANK_LEN: f64 = 0.42;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    /// Root advance per beat interval, meters.
    pub step_len: f64,
    /// Swing apex height, meters.
    pub swing_height: f64,
    /// Root drop below the straight-leg rest height, keeping bent knees
    /// within reach of the pinned feet.
    pub crouch: f64,
}

impl Default for StepParams {
    fn default() -> StepParams {
        StepParams { step_len: 0.15, swing_height: 0.06, crouch: 0.06 }
    }
}

/// Planar two-bone IK about z: target ankle displacement (dx, dy) from
/// the hip. Returns (hip angle from straight down, knee flex ≥ 0).
pub fn leg_ik(dx: f64, dy: f64) -> Result<(f64, f64)> {
    let d2 = dx * dx + dy * dy;
    let d = d2.sqrt();
    let max = THIGH_LEN + SHANK_LEN;
    if d > max - 1e-9 || d < 1e-6 {
        return Err(CoreError::validation(format!(
            "leg IK target at distance {d:.4} m is outside ({:.4}, {max:.4})",
            0.0
        )));
    }
    let cos_flex =
        ((d2 - THIGH_LEN * THIGH_LEN - SHANK_LEN * SHANK_LEN) / (2.0 * THIGH_LEN * SHANK_LEN))
            .clamp(-1.0, 1.0);
    let flex = cos_flex.acos();
    let psi = dx.atan2(-dy);
    let delta = (SHANK_LEN * flex.sin()).atan2(THIGH_LEN + SHANK_LEN * cos_flex);
    Ok((psi + delta, flex))
}

/// Smooth 0→1 ramp with zero slope at both ends.
fn stride(u: f64) -> f64 {
    u - (std::f64::consts::TAU * u).sin() / std::f64::consts::TAU
}

/// What each foot does on one frame.
#[derive(Debug, Clone, Copy)]
struct FootTarget {
    toe_x: f64,
    toe_y: f64,
}

fn frame_plan(
    t: usize,
    period: usize,
    completed: usize,
    p: &StepParams,
) -> (f64, [FootTarget; 2]) {
    let s = p.step_len;
    let k = t / period;
    let grounded = |x: f64| FootTarget { toe_x: x, toe_y: 0.0 };
    if k == 0 {
        // Initial double stance.
        (0.0, [grounded(TOE_AHEAD), grounded(TOE_AHEAD)])
    } else if k <= completed {
        let u = (t - k * period) as f64 / period as f64;
        let root_x = s * ((k - 1) as f64 + stride(u));
        // Odd intervals swing the right foot (index 1).
        let swing = k % 2;
        let from = TOE_AHEAD + s * (k as f64 - 2.0).max(0.0);
        let to = TOE_AHEAD + s * k as f64;
        let swing_target = FootTarget {
            toe_x: from + (to - from) * stride(u),
            toe_y: p.swing_height * (std::f64::consts::PI * u).sin().powi(2),
        };
        let stance = grounded(TOE_AHEAD + s * (k as f64 - 1.0));
        let mut feet = [stance, stance];
        feet[swing] = swing_target;
        (root_x, feet)
    } else {
        // Tail after the last complete interval: hold still.
        let last_swing = completed % 2;
        let mut feet = [
            grounded(TOE_AHEAD + s * (completed as f64 - 1.0)),
            grounded(TOE_AHEAD + s * (completed as f64 - 1.0)),
        ];
        feet[last_swing] = grounded(TOE_AHEAD + s * completed as f64);
        (s * completed as f64, feet)
    }
}

/// Keep the root fixed at the straight-leg rest height with identity leg
/// rotations: both toes rest exactly on the ground, motionless.
pub fn apply_planted(clip: &mut Clip, skel: &Skeleton) {
    let h = skel.rest_root_height();
    for t in 0..clip.frames() {
        clip.set_root_pos(t, [0.0, h, 0.0]);
    }
}

/// Walk forward along +x, one step per beat interval, support toe pinned
/// exactly. Needs at least one complete interval (its landing frame must
/// exist inside the clip).
pub fn apply_stepping(
    clip: &mut Clip,
    skel: &Skeleton,
    period_frames: usize,
    params: &StepParams,
) -> Result<()> {
    if period_frames == 0 {
        return Err(CoreError::validation("beat period must be at least one frame"));
    }
    let frames = clip.frames();
    let completed = (frames.saturating_sub(1) / period_frames).saturating_sub(1);
    if completed == 0 {
        return Err(CoreError::validation(format!(
            "{frames} frames cannot fit a stepping interval of {period_frames} frames"
        )));
    }
    let root_y = skel.rest_root_height() - params.crouch;
    let sides = [
        (skel.index_of("l_hip").unwrap(), skel.index_of("l_knee").unwrap(),
         skel.index_of("l_ankle").unwrap(), 0.10),
        (skel.index_of("r_hip").unwrap(), skel.index_of("r_knee").unwrap(),
         skel.index_of("r_ankle").unwrap(), -0.10),
    ];
    for t in 0..frames {
        let (root_x, feet) = frame_plan(t, period_frames, completed, params);
        clip.set_root_pos(t, [root_x, root_y, 0.0]);
        for (side, &(hip, knee, ankle, _z)) in sides.iter().enumerate() {
            let foot = feet[side];
            // Ankle target relative to the hip, both at the same lateral z.
            let dx = (foot.toe_x - TOE_AHEAD) - root_x;
            let dy = (foot.toe_y + ANKLE_LIFT) - (root_y - HIP_DROP);
            let (hip_angle, flex) = leg_ik(dx, dy)?;
            clip.set_rotation(t, hip, &rot_z(hip_angle));
            clip.set_rotation(t, knee, &rot_z(-flex));
            clip.set_rotation(t, ankle, &rot_z(flex - hip_angle));
        }
    }
    Ok(())
}
