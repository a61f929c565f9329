//! A motion clip: per-frame root position plus per-joint 6-D rotations,
//! stored as one flat `f64` buffer (frames x channels, row-major).
//!
//! Channel layout per frame: `[root_x, root_y, root_z, rot6d(joint 0),
//! rot6d(joint 1), ...]`. Joint 0's rotation is the global root
//! orientation. Optional side data carries what training and evaluation
//! need: toe contact labels, a gesture class id, audio beat times, and a
//! per-frame conditioning feature track (rows = frames).

use crate::error::{CoreError, Result};
use crate::motion::rot6d::{self, Mat3, Rot6};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    fps: f64,
    joints: usize,
    frames: usize,
    data: Vec<f64>,
    pub contacts: Option<Vec<[bool; 2]>>,
    pub class_id: Option<u32>,
    pub beats: Option<Vec<f64>>,
    pub features: Option<Tensor>,
}

impl Clip {
    /// All rotations start at identity, root at the origin.
    pub fn new(fps: f64, joints: usize, frames: usize) -> Clip {
        assert!(fps > 0.0 && joints > 0);
        let channels = 3 + joints * 6;
        let mut data = vec![0.0; frames * channels];
        for t in 0..frames {
            for j in 0..joints {
                let base = t * channels + 3 + j * 6;
                data[base..base + 6].copy_from_slice(&rot6d::IDENTITY_6D);
            }
        }
        Clip { fps, joints, frames, data, contacts: None, class_id: None, beats: None, features: None }
    }

    pub fn from_raw(fps: f64, joints: usize, frames: usize, data: Vec<f64>) -> Result<Clip> {
        let channels = 3 + joints * 6;
        if data.len() != frames * channels {
            return Err(CoreError::validation(format!(
                "clip buffer has {} values, expected {} ({} frames x {} channels)",
                data.len(),
                frames * channels,
                frames,
                channels
            )));
        }
        Ok(Clip { fps, joints, frames, data, contacts: None, class_id: None, beats: None, features: None })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        3 + self.joints * 6
    }

    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let c = self.channels();
        &self.data[t * c..(t + 1) * c]
    }

    pub fn root_pos(&self, t: usize) -> [f64; 3] {
        let f = self.frame(t);
        [f[0], f[1], f[2]]
    }

    pub fn set_root_pos(&mut self, t: usize, p: [f64; 3]) {
        let c = self.channels();
        self.data[t * c..t * c + 3].copy_from_slice(&p);
    }

    pub fn rot6d(&self, t: usize, j: usize) -> Rot6 {
        let c = self.channels();
        let base = t * c + 3 + j * 6;
        let mut out = [0.0; 6];
        out.copy_from_slice(&self.data[base..base + 6]);
        out
    }

    pub fn set_rot6d(&mut self, t: usize, j: usize, r: Rot6) {
        let c = self.channels();
        let base = t * c + 3 + j * 6;
        self.data[base..base + 6].copy_from_slice(&r);
    }

    pub fn set_rotation(&mut self, t: usize, j: usize, m: &Mat3) {
        self.set_rot6d(t, j, rot6d::mat_to_rot6d(m));
    }

    /// Decoded (orthonormalized) rotation matrix for one joint.
    pub fn rotation(&self, t: usize, j: usize) -> Result<Mat3> {
        rot6d::rot6d_to_mat(&self.rot6d(t, j)).map_err(|e| {
            CoreError::DegenerateRotation(format!("frame {t} joint {j}: {e}"))
        })
    }

    /// Snap every stored rotation back onto the rotation manifold.
    pub fn normalize_rotations(&mut self) -> Result<()> {
        for t in 0..self.frames {
            for j in 0..self.joints {
                let m = self.rotation(t, j)?;
                self.set_rotation(t, j, &m);
            }
        }
        Ok(())
    }

    /// Copy frames `[start, start+len)` into a new clip. Per-frame side
    /// data (contacts, features) is windowed along; beat times are dropped
    /// because they are clip-relative and would shift meaning.
    pub fn slice(&self, start: usize, len: usize) -> Clip {
        assert!(start + len <= self.frames);
        let c = self.channels();
        let data = self.data[start * c..(start + len) * c].to_vec();
        Clip {
            fps: self.fps,
            joints: self.joints,
            frames: len,
            data,
            contacts: self
                .contacts
                .as_ref()
                .map(|cs| cs[start..start + len].to_vec()),
            class_id: self.class_id,
            beats: None,
            features: self.features.as_ref().map(|f| {
                let w = f.cols();
                Tensor::from_vec(len, w, f.data()[start * w..(start + len) * w].to_vec())
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_clip_has_identity_rotations() {
        let c = Clip::new(30.0, 4, 3);
        assert_eq!(c.channels(), 27);
        for t in 0..3 {
            assert_eq!(c.root_pos(t), [0.0; 3]);
            for j in 0..4 {
                assert_eq!(c.rot6d(t, j), rot6d::IDENTITY_6D);
            }
        }
    }

    #[test]
    fn rotation_accessors_round_trip() {
        let mut c = Clip::new(30.0, 2, 2);
        let m = rot6d::rot_y(0.7);
        c.set_rotation(1, 1, &m);
        let back = c.rotation(1, 1).unwrap();
        assert!(rot6d::geodesic_angle(&m, &back) < 1e-12);
        // Untouched joints stay identity.
        assert_eq!(c.rot6d(1, 0), rot6d::IDENTITY_6D);
    }

    #[test]
    fn slice_preserves_contact_window() {
        let mut c = Clip::new(30.0, 2, 5);
        c.contacts = Some(vec![
            [true, false],
            [false, false],
            [true, true],
            [false, true],
            [true, false],
        ]);
        c.features = Some(Tensor::from_fn(5, 2, |t, k| (t * 10 + k) as f64));
        let s = c.slice(1, 3);
        assert_eq!(s.frames(), 3);
        assert_eq!(s.contacts.as_ref().unwrap()[1], [true, true]);
        let f = s.features.as_ref().unwrap();
        assert_eq!(f.shape(), (3, 2));
        assert_eq!(f.get(0, 0), 10.0);
        assert_eq!(f.get(2, 1), 31.0);
    }
}
