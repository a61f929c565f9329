//! Synthetic conditioning tracks: the beat grid and the per-frame
//! feature track (audio stand-in) built from beat-locked sinusoids plus
//! an impulse channel on the beat frames.

use crate::nn::Tensor;

/// Beat frames k·P for k ≥ 1 that land strictly inside the clip. The
/// final frame never carries a beat: a beat is observable as a dip in
/// per-frame speed, which needs motion on both sides of the frame.
pub fn beat_frames(frames: usize, period_frames: usize) -> Vec<usize> {
    (1..)
        .map(|k| k * period_frames)
        .take_while(|&f| f + 1 < frames)
        .collect()
}

/// Feature rows, one per frame: channels 0..dim-1 are sin/cos pairs of
/// ascending harmonics of the beat phase π·t/P; the last channel is a
/// unit impulse on beat frames.
pub fn feature_track(
    frames: usize,
    dim: usize,
    period_frames: usize,
    beats: &[usize],
) -> Tensor {
    assert!(dim >= 1);
    let p = period_frames as f64;
    let mut out = Tensor::zeros(frames, dim);
    for t in 0..frames {
        let phase = std::f64::consts::PI * t as f64 / p;
        let row = out.row_mut(t);
        for (j, v) in row.iter_mut().enumerate().take(dim - 1) {
            let h = (j / 2 + 1) as f64;
            *v = if j % 2 == 0 { (h * phase).sin() } else { (h * phase).cos() };
        }
    }
    for &b in beats {
        out.set(b, dim - 1, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_frames_are_multiples_of_the_period_inside_the_clip() {
        assert_eq!(beat_frames(100, 24), vec![24, 48, 72, 96]);
        assert_eq!(beat_frames(24, 24), Vec::<usize>::new());
        // A would-be beat on the final frame is dropped.
        assert_eq!(beat_frames(25, 24), Vec::<usize>::new());
        assert_eq!(beat_frames(26, 24), vec![24]);
    }

    #[test]
    fn track_has_harmonics_and_impulses() {
        let beats = beat_frames(60, 12);
        let f = feature_track(60, 16, 12, &beats);
        assert_eq!(f.shape(), (60, 16));
        // Channel 1 is cos of the base harmonic: 1 at t = 0.
        assert_eq!(f.get(0, 1), 1.0);
        // Impulse channel fires exactly on beats.
        for t in 0..60 {
            let want = if t % 12 == 0 && t > 0 { 1.0 } else { 0.0 };
            assert_eq!(f.get(t, 15), want, "frame {t}");
        }
        // Base sin channel vanishes on beat frames (phase multiple of pi).
        assert!(f.get(24, 0).abs() < 1e-12);
    }

    #[test]
    fn single_channel_track_is_just_the_impulse() {
        let f = feature_track(10, 1, 5, &[5]);
        for t in 0..10 {
            assert_eq!(f.get(t, 0), if t == 5 { 1.0 } else { 0.0 });
        }
    }
}
