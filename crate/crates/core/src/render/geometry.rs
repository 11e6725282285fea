//! 3D covariance from scale and rotation, and Gaussian evaluation.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose3(a: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| a[j][i]))
}

/// Rotation matrix of quaternion `(w, x, y, z)`; exact for unit input.
pub fn quat_to_rotation(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Pulls a gradient on the rotation matrix back to the quaternion.
pub fn quat_to_rotation_backward(q: [f64; 4], g: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    [
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - 2.0 * x * g[2][2]),
        2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - 2.0 * y * g[2][2]),
        2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ]
}

/// `M = R S`, so that `Σ = M Mᵀ`.
pub fn scale_rotation(scale: [f64; 3], q: [f64; 4]) -> Mat3 {
    let r = quat_to_rotation(q);
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[i][j] * scale[j]))
}

/// `Σ = R S Sᵀ Rᵀ`.
pub fn build_covariance(scale: [f64; 3], q: [f64; 4]) -> Mat3 {
    let m = scale_rotation(scale, q);
    matmul3(&m, &transpose3(&m))
}

fn invert3(a: &Mat3) -> Option<Mat3> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let c = [
        [cof(1, 2, 1, 2), -cof(1, 2, 0, 2), cof(1, 2, 0, 1)],
        [-cof(0, 2, 1, 2), cof(0, 2, 0, 2), -cof(0, 2, 0, 1)],
        [cof(0, 1, 1, 2), -cof(0, 1, 0, 2), cof(0, 1, 0, 1)],
    ];
    let det = a[0][0] * c[0][0] + a[0][1] * c[0][1] + a[0][2] * c[0][2];
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).powi(3);
    if !(det.abs() > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    Some([0, 1, 2].map(|i| [0, 1, 2].map(|j| c[j][i] / det)))
}

/// `exp(−½ xᵀ Σ⁻¹ x)`.
pub fn eval_gaussian(offset: [f64; 3], cov: &Mat3) -> Result<f64> {
    let inv = invert3(cov).ok_or_else(|| Error::Numerical("singular covariance".into()))?;
    let m2: f64 = (0..3)
        .map(|i| (0..3).map(|j| offset[i] * inv[i][j] * offset[j]).sum::<f64>())
        .sum();
    Ok((-0.5 * m2).exp())
}
