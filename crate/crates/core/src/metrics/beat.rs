//! Beat alignment: how closely motion beats (dips in joint speed) track
//! the audio beat grid. Score per audio beat is a Gaussian kernel of the
//! gap to the nearest motion beat; the clip score is their mean.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::MetricValue;
use crate::motion::kinematics;
use crate::motion::{Clip, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatConfig {
    /// Kernel width in seconds.
    pub sigma_s: f64,
    /// Speed dips only count as motion beats below this, in m/s.
    pub speed_thresh_mps: f64,
}

impl Default for BeatConfig {
    fn default() -> BeatConfig {
        BeatConfig { sigma_s: 0.1, speed_thresh_mps: 0.5 }
    }
}

/// Mean joint speed (m/s) per frame transition; index `i` is arrival at
/// frame `i + 1`.
pub fn mean_joint_speeds(clip: &Clip, skel: &Skeleton) -> Result<Vec<f64>> {
    let frames = kinematics::joint_positions(skel, clip)?;
    let fps = clip.fps();
    let joints = skel.joints() as f64;
    Ok(frames
        .windows(2)
        .map(|w| {
            let total: f64 = w[0]
                .iter()
                .zip(&w[1])
                .map(|(a, b)| {
                    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
                })
                .sum();
            total / joints * fps
        })
        .collect())
}

/// Times (seconds) of strict local speed minima under the threshold.
pub fn motion_beat_times(speeds: &[f64], fps: f64, config: &BeatConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..speeds.len().saturating_sub(1) {
        if speeds[i] < speeds[i - 1]
            && speeds[i] < speeds[i + 1]
            && speeds[i] < config.speed_thresh_mps
        {
            // Speed sample i is the transition into frame i + 1.
            out.push((i + 1) as f64 / fps);
        }
    }
    out
}

fn kernel_score(audio_beats: &[f64], motion_beats: &[f64], sigma: f64) -> f64 {
    let mut total = 0.0;
    for &b in audio_beats {
        let nearest = motion_beats
            .iter()
            .map(|&m| (m - b).abs())
            .fold(f64::INFINITY, f64::min);
        total += (-nearest * nearest / (2.0 * sigma * sigma)).exp();
    }
    total / audio_beats.len() as f64
}

pub fn beat_align(
    audio_beats: &[f64],
    clip: &Clip,
    skel: &Skeleton,
    config: &BeatConfig,
) -> Result<MetricValue> {
    if audio_beats.is_empty() {
        return Err(CoreError::validation("beat alignment needs at least one audio beat"));
    }
    let speeds = mean_joint_speeds(clip, skel)?;
    let beats = motion_beat_times(&speeds, clip.fps(), config);
    if beats.is_empty() {
        return Ok(MetricValue::warned(0.0, "no motion beats detected; score defined as 0"));
    }
    Ok(MetricValue::ok(kernel_score(audio_beats, &beats, config.sigma_s)))
}
