//! Continuous 6-D rotation representation.
//!
//! A rotation matrix is encoded as its first two columns, flattened as
//! `[c0x, c0y, c0z, c1x, c1y, c1z]`. Decoding runs Gram-Schmidt on the
//! two columns and completes the frame with a cross product, so any
//! non-degenerate 6-vector maps to an exactly orthonormal matrix.

use crate::error::{CoreError, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];
pub type Rot6 = [f64; 6];

const DEGENERATE_EPS: f64 = 1e-8;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn column(m: &Mat3, j: usize) -> Vec3 {
    [m[0][j], m[1][j], m[2][j]]
}

/// First two columns of `m`, flattened column-major.
pub fn mat_to_rot6d(m: &Mat3) -> Rot6 {
    let c0 = column(m, 0);
    let c1 = column(m, 1);
    [c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]]
}

/// Gram-Schmidt the two encoded columns back into a rotation matrix.
pub fn rot6d_to_mat(r: &Rot6) -> Result<Mat3> {
    let a0 = [r[0], r[1], r[2]];
    let a1 = [r[3], r[4], r[5]];
    let n0 = norm(&a0);
    if n0 < DEGENERATE_EPS {
        return Err(CoreError::DegenerateRotation(format!(
            "first column has near-zero norm {n0:e}"
        )));
    }
    let b0 = [a0[0] / n0, a0[1] / n0, a0[2] / n0];
    let d = dot(&b0, &a1);
    let u1 = [a1[0] - d * b0[0], a1[1] - d * b0[1], a1[2] - d * b0[2]];
    let n1 = norm(&u1);
    if n1 < DEGENERATE_EPS {
        return Err(CoreError::DegenerateRotation(format!(
            "columns are near-collinear (residual norm {n1:e})"
        )));
    }
    let b1 = [u1[0] / n1, u1[1] / n1, u1[2] / n1];
    let b2 = cross(&b0, &b1);
    Ok([
        [b0[0], b1[0], b2[0]],
        [b0[1], b1[1], b2[1]],
        [b0[2], b1[2], b2[2]],
    ])
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn rotate(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let n = norm(axis);
    assert!(n > 0.0, "axis must be nonzero");
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn rot_x(angle: f64) -> Mat3 {
    axis_angle(&[1.0, 0.0, 0.0], angle)
}

pub fn rot_y(angle: f64) -> Mat3 {
    axis_angle(&[0.0, 1.0, 0.0], angle)
}

pub fn rot_z(angle: f64) -> Mat3 {
    axis_angle(&[0.0, 0.0, 1.0], angle)
}

/// Largest absolute deviation of `m^T m` from the identity.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let mtm = mat_mul(&mat_transpose(m), m);
    let mut err = 0.0_f64;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((mtm[i][j] - target).abs());
        }
    }
    err
}

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let r = mat_mul(&mat_transpose(a), b);
    let tr = r[0][0] + r[1][1] + r[2][2];
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}
