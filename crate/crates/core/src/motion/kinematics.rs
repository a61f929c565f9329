//! Forward kinematics: clip + skeleton -> world-space joint positions.

use crate::error::Result;
use crate::motion::clip::Clip;
use crate::motion::rot6d::{self, Mat3};
use crate::motion::skeleton::Skeleton;

/// World positions for every joint of one frame.
pub fn frame_positions(skel: &Skeleton, clip: &Clip, t: usize) -> Result<Vec<[f64; 3]>> {
    let n = skel.joints();
    debug_assert_eq!(clip.joints(), n);
    let mut world_rot: Vec<Mat3> = Vec::with_capacity(n);
    let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n);
    for j in 0..n {
        let local = clip.rotation(t, j)?;
        match skel.parent(j) {
            None => {
                world_rot.push(local);
                pos.push(clip.root_pos(t));
            }
            Some(p) => {
                let off = rot6d::rotate(&world_rot[p], &skel.offset(j));
                let pp = pos[p];
                pos.push([pp[0] + off[0], pp[1] + off[1], pp[2] + off[2]]);
                world_rot.push(rot6d::mat_mul(&world_rot[p], &local));
            }
        }
    }
    Ok(pos)
}

/// World positions for every frame (frames x joints).
pub fn joint_positions(skel: &Skeleton, clip: &Clip) -> Result<Vec<Vec<[f64; 3]>>> {
    (0..clip.frames()).map(|t| frame_positions(skel, clip, t)).collect()
}

/// Heights of the two toe joints per frame, `[left, right]`.
pub fn toe_heights(skel: &Skeleton, clip: &Clip) -> Result<Vec<[f64; 2]>> {
    let [lt, rt] = skel.toes();
    joint_positions(skel, clip).map(|frames| {
        frames.iter().map(|ps| [ps[lt][1], ps[rt][1]]).collect()
    })
}

/// Horizontal (x, z) toe positions per frame, `[left, right]`.
pub fn toe_ground_tracks(skel: &Skeleton, clip: &Clip) -> Result<Vec<[[f64; 2]; 2]>> {
    let [lt, rt] = skel.toes();
    joint_positions(skel, clip).map(|frames| {
        frames
            .iter()
            .map(|ps| [[ps[lt][0], ps[lt][2]], [ps[rt][0], ps[rt][2]]])
            .collect()
    })
}

/// Full 3-D toe trajectories, one track per toe (`[left, right]`).
pub fn toe_tracks(skel: &Skeleton, clip: &Clip) -> Result<[Vec<[f64; 3]>; 2]> {
    let [lt, rt] = skel.toes();
    let frames = joint_positions(skel, clip)?;
    Ok([
        frames.iter().map(|ps| ps[lt]).collect(),
        frames.iter().map(|ps| ps[rt]).collect(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rot6d::{rot_x, rot_y};

    /// Rest pose positions are exact sums of offsets down each chain.
    #[test]
    fn rest_pose_matches_summed_offsets() {
        let skel = Skeleton::default52();
        let mut clip = Clip::new(30.0, skel.joints(), 1);
        clip.set_root_pos(0, [1.0, skel.rest_root_height(), -2.0]);
        let pos = frame_positions(skel, &clip, 0).unwrap();
        for j in 0..skel.joints() {
            // Accumulate offsets root-to-child, matching FK's addition
            // order, so the comparison can be bit-exact.
            let mut chain = vec![j];
            while let Some(p) = skel.parent(*chain.last().unwrap()) {
                chain.push(p);
            }
            chain.reverse();
            let mut expect = clip.root_pos(0);
            for &k in &chain[1..] {
                let o = skel.offset(k);
                expect = [expect[0] + o[0], expect[1] + o[1], expect[2] + o[2]];
            }
            for a in 0..3 {
                assert_eq!(pos[j][a], expect[a], "joint {j} axis {a}");
            }
        }
        // Toes rest exactly at the toe-offset height above the ground.
        let [lt, _] = skel.toes();
        assert!((pos[lt][1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn root_yaw_spins_the_whole_body() {
        let skel = Skeleton::default52();
        let mut clip = Clip::new(30.0, skel.joints(), 1);
        clip.set_rotation(0, 0, &rot_y(std::f64::consts::FRAC_PI_2));
        let pos = frame_positions(skel, &clip, 0).unwrap();
        // l_hip offset (0, -0.07, 0.10) under +90 deg yaw -> (0.10, -0.07, ~0).
        let lh = pos[skel.index_of("l_hip").unwrap()];
        assert!((lh[0] - 0.10).abs() < 1e-12);
        assert!((lh[1] + 0.07).abs() < 1e-12);
        assert!(lh[2].abs() < 1e-12);
    }

    #[test]
    fn elbow_rotation_moves_wrist_but_not_elbow() {
        let skel = Skeleton::default52();
        let elbow = skel.index_of("l_elbow").unwrap();
        let wrist = skel.index_of("l_wrist").unwrap();

        // Rotate about x: the forearm points along z, so this flexes it.
        let mut bent = Clip::new(30.0, skel.joints(), 1);
        bent.set_rotation(0, elbow, &rot_x(1.0));
        let rest = Clip::new(30.0, skel.joints(), 1);

        let p_bent = frame_positions(skel, &bent, 0).unwrap();
        let p_rest = frame_positions(skel, &rest, 0).unwrap();
        assert_eq!(p_bent[elbow], p_rest[elbow]);
        let moved: f64 = (0..3)
            .map(|a| (p_bent[wrist][a] - p_rest[wrist][a]).abs())
            .sum();
        assert!(moved > 0.05, "wrist should move, got {moved}");
    }
}
