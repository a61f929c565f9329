//! Physical plausibility metrics: foot skating and floating, both in
//! centimeters, computed from FK toe trajectories and detected contacts.

use crate::error::Result;
use crate::metrics::contacts::{detect_contacts, ContactConfig};
use crate::metrics::MetricValue;
use crate::motion::kinematics;
use crate::motion::{Clip, Skeleton};

/// Height of the ground plane above the lowest observed toe point, in
/// meters. Floating is measured from this plane, clamped nonnegative.
const GROUND_LIFT_M: f64 = 0.005;

/// Mean horizontal displacement per contact frame, in centimeters, from
/// per-toe position tracks and their contact labels. A frame counts when
/// the toe is in contact at both ends of the step, so touch-down swing
/// is not billed as skating.
pub fn skate_tracks(tracks: &[Vec<[f64; 3]>], contacts: &[Vec<bool>]) -> MetricValue {
    assert_eq!(tracks.len(), contacts.len());
    let mut total_cm = 0.0;
    let mut frames = 0usize;
    for (track, labels) in tracks.iter().zip(contacts) {
        assert_eq!(track.len(), labels.len());
        for t in 1..track.len() {
            if labels[t - 1] && labels[t] {
                let dx = track[t][0] - track[t - 1][0];
                let dz = track[t][2] - track[t - 1][2];
                total_cm += 100.0 * (dx * dx + dz * dz).sqrt();
                frames += 1;
            }
        }
    }
    if frames == 0 {
        MetricValue::warned(0.0, "no contact frames; skate defined as 0")
    } else {
        MetricValue::ok(total_cm / frames as f64)
    }
}

/// Foot-skating metric of a clip: FK, detect contacts, average slippage.
pub fn skate(clip: &Clip, skel: &Skeleton, config: &ContactConfig) -> Result<MetricValue> {
    let [left, right] = kinematics::toe_tracks(skel, clip)?;
    let cl = detect_contacts(&left, clip.fps(), config)?;
    let cr = detect_contacts(&right, clip.fps(), config)?;
    Ok(skate_tracks(&[left, right], &[cl, cr]))
}

/// Floating metric from per-toe tracks and contact labels: over frames
/// with at least one toe in contact, the mean over both toes of the
/// clamped distance above the ground plane (lowest toe point + 0.5 cm),
/// in centimeters.
pub fn float_tracks(tracks: &[Vec<[f64; 3]>; 2], contacts: &[Vec<bool>; 2]) -> MetricValue {
    let n = tracks[0].len();
    assert_eq!(tracks[1].len(), n);
    assert_eq!(contacts[0].len(), n);
    assert_eq!(contacts[1].len(), n);
    let mut ground = f64::INFINITY;
    for track in tracks.iter() {
        for p in track {
            ground = ground.min(p[1]);
        }
    }
    let ground = ground + GROUND_LIFT_M;

    let mut total_cm = 0.0;
    let mut frames = 0usize;
    for t in 0..n {
        if !(contacts[0][t] || contacts[1][t]) {
            continue;
        }
        let mut frame_cm = 0.0;
        for track in tracks.iter() {
            frame_cm += 100.0 * (track[t][1] - ground).max(0.0);
        }
        total_cm += frame_cm / 2.0;
        frames += 1;
    }
    if frames == 0 {
        MetricValue::warned(0.0, "no contact frames; float defined as 0")
    } else {
        MetricValue::ok(total_cm / frames as f64)
    }
}

/// Floating metric of a clip.
pub fn float_metric(clip: &Clip, skel: &Skeleton, config: &ContactConfig) -> Result<MetricValue> {
    let tracks = kinematics::toe_tracks(skel, clip)?;
    let cl = detect_contacts(&tracks[0], clip.fps(), config)?;
    let cr = detect_contacts(&tracks[1], clip.fps(), config)?;
    Ok(float_tracks(&tracks, &[cl, cr]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_rest_pose_has_zero_skate() {
        let skel = Skeleton::default52();
        let mut clip = Clip::new(30.0, skel.joints(), 8);
        for t in 0..8 {
            clip.set_root_pos(t, [0.0, skel.rest_root_height(), 0.0]);
        }
        let s = skate(&clip, skel, &ContactConfig::default()).unwrap();
        assert!(s.warning.is_none());
        assert!(s.value.abs() < 1e-6, "skate {}", s.value);
    }

    #[test]
    fn constant_slide_scores_its_per_frame_rate() {
        // One toe slides 0.5 cm/frame at ground level for 10 frames; the
        // other is held high so only the slide contributes.
        let slide: Vec<[f64; 3]> = (0..10).map(|t| [0.005 * t as f64, 0.0, 0.0]).collect();
        let high = vec![[0.0, 1.0, 0.0]; 10];
        let cfg = ContactConfig::default();
        let cs = detect_contacts(&slide, 30.0, &cfg).unwrap();
        let ch = detect_contacts(&high, 30.0, &cfg).unwrap();
        assert!(cs.iter().all(|&c| c));
        assert!(ch.iter().all(|&c| !c));
        let s = skate_tracks(&[slide, high], &[cs, ch]);
        assert!((s.value - 0.5).abs() < 1e-6, "skate {}", s.value);
    }

    #[test]
    fn no_contacts_yields_zero_with_warning() {
        let airborne = vec![vec![[0.0, 1.0, 0.0]; 5], vec![[0.0, 1.2, 0.0]; 5]];
        let labels = vec![vec![false; 5], vec![false; 5]];
        let s = skate_tracks(&airborne, &labels);
        assert_eq!(s.value, 0.0);
        assert!(s.warning.is_some());
    }

    #[test]
    fn float_of_toes_resting_at_ground_level_is_zero() {
        // Both toes sit exactly at the sequence minimum; the plane is
        // 0.5 cm above them and distances clamp to zero.
        let tracks = [vec![[0.0, 0.0, 0.0]; 6], vec![[0.1, 0.0, 0.0]; 6]];
        let contacts = [vec![true; 6], vec![true; 6]];
        let f = float_tracks(&tracks, &contacts);
        assert_eq!(f.value, 0.0);
        assert!(f.warning.is_none());
    }

    #[test]
    fn one_raised_toe_contributes_half_its_clearance() {
        // Toe A at the minimum (clamped to 0), toe B 1.5 cm above the
        // ground plane: per-frame mean is (0 + 1.5) / 2.
        let tracks = [
            vec![[0.0, 0.0, 0.0]; 6],
            vec![[0.1, GROUND_LIFT_M + 0.015, 0.0]; 6],
        ];
        let contacts = [vec![true; 6], vec![false; 6]];
        let f = float_tracks(&tracks, &contacts);
        assert!((f.value - 0.75).abs() < 1e-9, "float {}", f.value);
    }

    #[test]
    fn rest_pose_clip_float_is_within_the_ground_convention() {
        let skel = Skeleton::default52();
        let mut clip = Clip::new(30.0, skel.joints(), 5);
        for t in 0..5 {
            clip.set_root_pos(t, [0.0, skel.rest_root_height(), 0.0]);
        }
        let f = float_metric(&clip, skel, &ContactConfig::default()).unwrap();
        assert!(f.value.abs() < 1e-9, "float {}", f.value);
    }
}
