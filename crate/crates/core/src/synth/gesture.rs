//! Beat-locked upper-body gestures and the forearm-driven finger curl.
//!
//! Class semantics follow the bundled vocabulary (`io::vocab::ClassAttrs`):
//! which arms move, the movement shape, tempo, and amplitude. Every
//! oscillation is an integer harmonic of the beat interval sampled at frame
//! centers, `cos(m*pi*(t + 0.5) / P)`, so the per-frame displacement across
//! a transition arriving at a beat frame `k*P` is proportional to
//! `sin(m*pi*k)` — zero. Motion is locked to the beat grid by construction,
//! not by post-hoc alignment. Low-amplitude non-integer-frequency jitter is
//! layered on top so clips of one class are not identical; it is small
//! enough to leave the beat-frame speed minima strict.
//!
//! Fingers are not independent: they follow a deterministic rule that curls
//! the hand as the forearm rises through an elevation band. The rule is the
//! supervision target for the finger prior, and `finger_rule_accuracy`
//! measures how well a clip (generated or predicted) obeys it.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::io::vocab::ClassAttrs;
use crate::motion::clip::Clip;
use crate::motion::rot6d::{self, Mat3};
use crate::motion::skeleton::Skeleton;

/// Peak oscillation amplitude (radians) for small / wide classes.
pub const AMP_SMALL: f64 = 0.25;
pub const AMP_WIDE: f64 = 0.7;

/// Forearm elevation (vertical direction component) where the curl ramp
/// starts, and the width of the ramp; at `CURL_START + CURL_BAND` the hand
/// is fully closed.
pub const CURL_START: f64 = 0.15;
pub const CURL_BAND: f64 = 0.10;

/// Curl angle per finger segment at full closure, proximal to distal.
const SEGMENT_CURL: [f64; 3] = [1.0, 0.8, 0.6];
const THUMB_SCALE: f64 = 0.5;

/// Pitch (about x) raises an arm hanging along +/-z; yaw (about y) sweeps
/// it forward. The signs mirror left/right so both arms move the same way
/// in world space.
const PITCH_SIGN: [f64; 2] = [-1.0, 1.0];
const YAW_SIGN: [f64; 2] = [1.0, -1.0];
const CURL_SIGN: [f64; 2] = [1.0, -1.0];

/// One harmonic applied to an arm joint: joint 0 = shoulder, 1 = elbow;
/// axis 0 = pitch, 1 = yaw.
struct MoveTerm {
    joint: usize,
    axis: usize,
    harmonic: f64,
    scale: f64,
}

const fn term(joint: usize, axis: usize, harmonic: f64, scale: f64) -> MoveTerm {
    MoveTerm { joint, axis, harmonic, scale }
}

fn move_terms(shape: usize) -> [MoveTerm; 2] {
    match shape {
        0 => [term(0, 0, 1.0, 1.0), term(1, 0, 1.0, 0.5)], // raise
        1 => [term(0, 1, 1.0, 1.0), term(1, 1, 1.0, 0.3)], // sweep
        2 => [term(0, 0, 1.0, 1.0), term(0, 1, 2.0, 0.7)], // circle
        _ => [term(1, 0, 1.0, 1.0), term(0, 1, 2.0, 0.3)], // push
    }
}

/// Static torso/neck lean derived from the class id via a base-3 code
/// independent of the attribute bits, giving classes a postural cue on top
/// of the movement itself.
fn posture_angles(class_id: u32) -> [f64; 3] {
    let id = class_id as i64;
    [
        0.04 * ((id % 3) - 1) as f64,
        0.05 * (((id / 3) % 3) - 1) as f64,
        0.03 * (((id / 9) % 3) - 1) as f64,
    ]
}

fn named_joint(skel: &Skeleton, name: &str) -> Result<usize> {
    skel.index_of(name)
        .ok_or_else(|| CoreError::validation(format!("skeleton has no joint '{name}'")))
}

/// Overwrite the shoulder, elbow, and torso rotations of every frame with
/// the class's oscillation pattern. Root, lower body, wrists, and fingers
/// are left untouched.
///
/// The random stream consumes the same number of draws regardless of class
/// or noise level, so a fixed seed yields comparable clips across classes.
pub fn apply_gesture(
    clip: &mut Clip,
    skel: &Skeleton,
    class_id: u32,
    period_frames: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if period_frames == 0 {
        return Err(CoreError::validation("beat period must be at least one frame"));
    }
    if class_id >= 64 {
        return Err(CoreError::validation(format!(
            "class id {class_id} outside the 64-class vocabulary"
        )));
    }
    let attrs = ClassAttrs::from_id(class_id as usize);
    let arm_joints = [
        [named_joint(skel, "l_shoulder")?, named_joint(skel, "l_elbow")?],
        [named_joint(skel, "r_shoulder")?, named_joint(skel, "r_elbow")?],
    ];
    let torso = [
        named_joint(skel, "spine2")?,
        named_joint(skel, "spine3")?,
        named_joint(skel, "neck")?,
    ];

    let amp_factor = rng.random_range(0.85..1.15);
    // One jitter voice per side x joint x axis, drawn in a fixed order.
    let mut jitter = [[[(0.0, 0.0, 0.0); 2]; 2]; 2];
    for side in &mut jitter {
        for joint in side {
            for voice in joint {
                *voice = (
                    noise * rng.random_range(0.5..1.5),
                    rng.random_range(0.25..0.75),
                    rng.random_range(0.0..TAU),
                );
            }
        }
    }

    let amp = if attrs.size == 1 { AMP_WIDE } else { AMP_SMALL } * amp_factor;
    let rate = if attrs.tempo == 1 { 2.0 } else { 1.0 };
    let terms = move_terms(attrs.shape);
    let phases: [Option<f64>; 2] = match attrs.arms {
        0 => [Some(0.0), None],
        1 => [None, Some(0.0)],
        2 => [Some(0.0), Some(0.0)],
        _ => [Some(0.0), Some(PI)],
    };
    let posture = posture_angles(class_id);
    let p = period_frames as f64;

    for t in 0..clip.frames() {
        let tf = t as f64;
        let beat_phase = PI * (tf + 0.5) / p;
        clip.set_rotation(t, torso[0], &rot6d::rot_x(posture[0]));
        clip.set_rotation(t, torso[1], &rot6d::rot_y(posture[1]));
        clip.set_rotation(t, torso[2], &rot6d::rot_x(posture[2]));
        for side in 0..2 {
            let mut angles = [[0.0f64; 2]; 2]; // [joint][axis]
            if let Some(phase) = phases[side] {
                for term in &terms {
                    angles[term.joint][term.axis] +=
                        amp * term.scale * (rate * term.harmonic * beat_phase + phase).cos();
                }
            }
            for joint in 0..2 {
                for axis in 0..2 {
                    let (ja, jf, jp) = jitter[side][joint][axis];
                    angles[joint][axis] += ja * (jf * PI * tf / p + jp).sin();
                }
                let m = rot6d::mat_mul(
                    &rot6d::rot_x(PITCH_SIGN[side] * angles[joint][0]),
                    &rot6d::rot_y(YAW_SIGN[side] * angles[joint][1]),
                );
                clip.set_rotation(t, arm_joints[side][joint], &m);
            }
        }
    }
    Ok(())
}

/// Accumulated rotation from the root down to joint `j`.
pub fn world_rotation(skel: &Skeleton, clip: &Clip, t: usize, j: usize) -> Result<Mat3> {
    let mut chain = vec![j];
    while let Some(p) = skel.parent(*chain.last().unwrap()) {
        chain.push(p);
    }
    let mut m = rot6d::IDENTITY;
    for &k in chain.iter().rev() {
        m = rot6d::mat_mul(&m, &clip.rotation(t, k)?);
    }
    Ok(m)
}

/// Vertical component of the forearm direction (elbow toward wrist) in
/// world space: 0 when the forearm hangs along the rest axis or lies
/// horizontal, 1 when it points straight up. `side` is 0 left, 1 right.
pub fn forearm_elevation(skel: &Skeleton, clip: &Clip, t: usize, side: usize) -> Result<f64> {
    let elbow = named_joint(skel, if side == 0 { "l_elbow" } else { "r_elbow" })?;
    let m = world_rotation(skel, clip, t, elbow)?;
    // Forearm rest direction is +z on the left, -z on the right; the
    // world y-component of that column is the elevation.
    Ok(if side == 0 { m[1][2] } else { -m[1][2] })
}

fn smoothstep01(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// 0 = open hand, 1 = fully curled, smooth and monotone across the
/// elevation band.
pub fn curl_fraction(elevation: f64) -> f64 {
    smoothstep01((elevation - CURL_START) / CURL_BAND)
}

struct FingerSeg {
    joint: usize,
    side: usize,
    depth: usize,
    thumb: bool,
}

/// Classify every finger joint by hand, chain depth, and thumb-ness by
/// walking parents up to a wrist.
fn finger_segments(skel: &Skeleton) -> Result<Vec<FingerSeg>> {
    let wrists = [named_joint(skel, "l_wrist")?, named_joint(skel, "r_wrist")?];
    let mut is_finger = vec![false; skel.joints()];
    for &j in skel.fingers() {
        is_finger[j] = true;
    }
    let mut out = Vec::with_capacity(skel.fingers().len());
    for &j in skel.fingers() {
        let mut depth = 0usize;
        let mut at = j;
        let side = loop {
            let p = skel.parent(at).ok_or_else(|| {
                CoreError::validation(format!("finger joint {j} does not descend from a wrist"))
            })?;
            if p == wrists[0] {
                break 0;
            }
            if p == wrists[1] {
                break 1;
            }
            if !is_finger[p] {
                return Err(CoreError::validation(format!(
                    "finger joint {j} chains through non-finger joint {p}"
                )));
            }
            depth += 1;
            at = p;
        };
        if depth >= SEGMENT_CURL.len() {
            return Err(CoreError::validation(format!(
                "finger joint {j} sits {depth} segments from the wrist; at most {} supported",
                SEGMENT_CURL.len()
            )));
        }
        out.push(FingerSeg { joint: j, side, depth, thumb: skel.name(j).contains("thumb") });
    }
    Ok(out)
}

/// Overwrite all finger rotations with the curl the current forearm
/// elevation calls for. Call after the arm pose is final.
pub fn apply_finger_rule(clip: &mut Clip, skel: &Skeleton) -> Result<()> {
    let segs = finger_segments(skel)?;
    for t in 0..clip.frames() {
        let curls = [
            curl_fraction(forearm_elevation(skel, clip, t, 0)?),
            curl_fraction(forearm_elevation(skel, clip, t, 1)?),
        ];
        for seg in &segs {
            let mut angle = CURL_SIGN[seg.side] * curls[seg.side] * SEGMENT_CURL[seg.depth];
            if seg.thumb {
                angle *= THUMB_SCALE;
            }
            clip.set_rotation(t, seg.joint, &rot6d::rot_x(angle));
        }
    }
    Ok(())
}

/// Rotation angle about x recovered from a matrix: exact for pure
/// x-rotations, the x-Euler component otherwise.
pub fn x_rotation_angle(m: &Mat3) -> f64 {
    m[2][1].atan2(m[1][1])
}

/// Fraction of (frame, hand) pairs where the proximal index segment agrees
/// with the curl the forearm elevation calls for: bent past half its full
/// curl exactly when the elevation is above the band midpoint. 1.0 on
/// rule-generated data; a fidelity score for predicted finger motion.
pub fn finger_rule_accuracy(clip: &Clip, skel: &Skeleton) -> Result<f64> {
    let proximal = [named_joint(skel, "l_index1")?, named_joint(skel, "r_index1")?];
    let mid = CURL_START + 0.5 * CURL_BAND;
    let mut agree = 0usize;
    let mut total = 0usize;
    for t in 0..clip.frames() {
        for side in 0..2 {
            let expected = forearm_elevation(skel, clip, t, side)? > mid;
            let angle =
                CURL_SIGN[side] * x_rotation_angle(&clip.rotation(t, proximal[side])?);
            let actual = angle > 0.5 * SEGMENT_CURL[0];
            agree += usize::from(expected == actual);
            total += 1;
        }
    }
    if total == 0 {
        return Err(CoreError::validation("cannot score an empty clip"));
    }
    Ok(agree as f64 / total as f64)
}
