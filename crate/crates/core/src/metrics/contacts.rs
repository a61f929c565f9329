//! Foot-contact detection from toe trajectories.
//!
//! A toe is in contact when it is both low (height under a threshold)
//! and not accelerating (finite-difference acceleration magnitude under
//! a threshold). Boundary frames borrow the nearest computable
//! acceleration so labels are defined for every frame.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::motion::kinematics;
use crate::motion::{Clip, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactConfig {
    /// Maximum toe height above the ground plane, in centimeters.
    pub height_cm: f64,
    /// Maximum acceleration magnitude, in centimeters per frame².
    pub accel_cm_per_frame2: f64,
}

impl Default for ContactConfig {
    fn default() -> ContactConfig {
        ContactConfig { height_cm: 2.0, accel_cm_per_frame2: 10.0 }
    }
}

/// Label every frame of one toe track (positions in meters, y up).
///
/// The thresholds are in per-frame units, so `fps` only gates validity
/// here; it is part of the signature because callers always have it and
/// physical-unit threshold variants need it.
pub fn detect_contacts(
    toe_positions: &[[f64; 3]],
    fps: f64,
    config: &ContactConfig,
) -> Result<Vec<bool>> {
    if toe_positions.len() < 3 {
        return Err(CoreError::validation(format!(
            "contact detection needs at least 3 frames, got {}",
            toe_positions.len()
        )));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(CoreError::validation(format!("fps must be positive, got {fps}")));
    }
    let n = toe_positions.len();
    let height_m = config.height_cm / 100.0;
    let accel_m = config.accel_cm_per_frame2 / 100.0;

    // |p[t+1] - 2 p[t] + p[t-1]| for interior frames.
    let accel_at = |t: usize| -> f64 {
        let (a, b, c) = (toe_positions[t - 1], toe_positions[t], toe_positions[t + 1]);
        let mut sq = 0.0;
        for axis in 0..3 {
            let d = c[axis] - 2.0 * b[axis] + a[axis];
            sq += d * d;
        }
        sq.sqrt()
    };
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let a = accel_at(t.clamp(1, n - 2));
        out.push(toe_positions[t][1] < height_m && a < accel_m);
    }
    Ok(out)
}

/// FK the clip and label both toes, `[left, right]` per frame.
pub fn clip_contacts(
    clip: &Clip,
    skel: &Skeleton,
    config: &ContactConfig,
) -> Result<Vec<[bool; 2]>> {
    let [left, right] = kinematics::toe_tracks(skel, clip)?;
    let l = detect_contacts(&left, clip.fps(), config)?;
    let r = detect_contacts(&right, clip.fps(), config)?;
    Ok(l.into_iter().zip(r).map(|(a, b)| [a, b]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ContactConfig {
        ContactConfig::default()
    }

    #[test]
    fn stationary_toe_at_ground_is_always_in_contact() {
        let track = vec![[0.3, 0.005, -0.1]; 20];
        let labels = detect_contacts(&track, 30.0, &cfg()).unwrap();
        assert!(labels.iter().all(|&c| c));
    }

    #[test]
    fn ballistic_arc_with_high_acceleration_is_never_in_contact() {
        // y(t) = h0 + v t - g/2 t² in frame units with g = 0.2 m/frame²,
        // well above the 0.10 m/frame² threshold; the arc also dips
        // below the height threshold near its ends.
        let g = 0.2;
        let n = 12;
        let v = g * (n as f64 - 1.0) / 2.0; // returns to launch height at the last frame
        let track: Vec<[f64; 3]> = (0..n)
            .map(|t| {
                let t = t as f64;
                [0.0, 0.001 + v * t - 0.5 * g * t * t, 0.0]
            })
            .collect();
        let labels = detect_contacts(&track, 30.0, &cfg()).unwrap();
        assert!(labels.iter().all(|&c| !c), "{labels:?}");
    }

    #[test]
    fn planted_then_lifted_matches_the_plant_window() {
        // 10 planted frames, then a smooth gentle lift that clears the
        // height threshold without ever tripping the acceleration one.
        let mut track = vec![[0.0, 0.0, 0.0]; 10];
        for k in 1..=10 {
            track.push([0.0, 0.01 * k as f64, 0.0]);
        }
        let labels = detect_contacts(&track, 30.0, &cfg()).unwrap();
        // Planted frames are contact; allow the single boundary frame to
        // go either way, since its borrowed acceleration spans the lift.
        for (t, &c) in labels.iter().enumerate() {
            if t < 9 {
                assert!(c, "frame {t} should be contact");
            } else if t > 10 {
                assert!(!c, "frame {t} should be airborne");
            }
        }
    }

    #[test]
    fn too_few_frames_is_a_validation_error() {
        let track = vec![[0.0; 3]; 2];
        assert!(matches!(
            detect_contacts(&track, 30.0, &cfg()),
            Err(CoreError::Validation(_))
        ));
    }

    #[test]
    fn rest_pose_clip_has_both_toes_planted() {
        let skel = Skeleton::default52();
        let mut clip = Clip::new(30.0, skel.joints(), 5);
        for t in 0..5 {
            clip.set_root_pos(t, [0.0, skel.rest_root_height(), 0.0]);
        }
        let labels = clip_contacts(&clip, skel, &cfg()).unwrap();
        assert!(labels.iter().all(|&[l, r]| l && r));
    }
}
