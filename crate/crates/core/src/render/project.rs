//! Perspective projection of one splat to a screen-space Gaussian, and its
//! analytic backward pass.

use crate::camera::Camera;
use crate::gaussians::{Splat, SH_COEFFS};

use super::geometry::{matmul3, quat_to_rotation, quat_to_rotation_backward, scale_rotation, transpose3, Mat3};
use super::sh::{eval_sh, eval_sh_backward};

/// Low-pass floor added to every screen-space covariance, in pixel².
pub const EPS_COV: f64 = 0.3;
/// Splats with camera-space depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// One splat's parameters in double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatParams {
    pub position: [f64; 3],
    pub opacity: f64,
    pub sh: [f64; SH_COEFFS],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
}

impl From<&Splat> for SplatParams {
    fn from(s: &Splat) -> Self {
        Self {
            position: s.position.map(f64::from),
            opacity: f64::from(s.opacity),
            sh: s.sh.map(f64::from),
            scale: s.scale.map(f64::from),
            rotation: s.rotation.map(f64::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2DGaussian {
    /// Index of the source splat.
    pub index: usize,
    pub center: [f64; 2],
    /// Upper triangle `[a, b, c]` of `[[a, b], [b, c]]`.
    pub cov2d: [f64; 3],
    /// Upper triangle of the inverse of `cov2d`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    /// Channels whose SH value was not clamped.
    pub color_active: [bool; 3],
    pub opacity: f64,
}

/// Gradient w.r.t. the screen-space quantities the rasterizer reads.
/// `conic[1]` is the off-diagonal entry, counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectedGrad {
    pub center: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub position: [f64; 3],
    pub opacity: f64,
    pub sh: [f64; SH_COEFFS],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
}

type Mat23 = [[f64; 3]; 2];

struct Frame {
    t: [f64; 3],
    /// Projection Jacobian times view rotation.
    jw: Mat23,
    m: Mat3,
    sigma: Mat3,
    dir: [f64; 3],
    dir_len: f64,
}

fn frame(s: &SplatParams, cam: &Camera) -> Option<Frame> {
    let w = &cam.rotation;
    let t = [0, 1, 2].map(|i| (0..3).map(|k| w[i][k] * s.position[k]).sum::<f64>() + cam.translation[i]);
    if t[2] <= NEAR_PLANE {
        return None;
    }
    let z = t[2];
    let j: Mat23 = [
        [cam.fx / z, 0.0, -cam.fx * t[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * t[1] / (z * z)],
    ];
    let jw = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum::<f64>()));
    let m = scale_rotation(s.scale, s.rotation);
    let sigma = matmul3(&m, &transpose3(&m));
    let eye = cam.center();
    let d = [0, 1, 2].map(|i| s.position[i] - eye[i]);
    let dir_len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dir = d.map(|v| v / dir_len);
    Some(Frame {
        t,
        jw,
        m,
        sigma,
        dir,
        dir_len,
    })
}

/// `A Σ Aᵀ` for a 2x3 `A`, as a full 2x2 matrix.
fn sandwich(a: &Mat23, s: &Mat3) -> [[f64; 2]; 2] {
    let as_ = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| a[r][k] * s[k][c]).sum::<f64>()));
    [0, 1].map(|r| [0, 1].map(|c| (0..3).map(|k| as_[r][k] * a[c][k]).sum::<f64>()))
}

/// Projects splat `index`; `None` when it lies behind the near plane.
pub fn project_gaussian(index: usize, s: &SplatParams, cam: &Camera) -> Option<Projected2DGaussian> {
    let f = frame(s, cam)?;
    let c = sandwich(&f.jw, &f.sigma);
    let cov2d = [c[0][0] + EPS_COV, c[0][1], c[1][1] + EPS_COV];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let z = f.t[2];
    let center = [cam.fx * f.t[0] / z + cam.cx, cam.fy * f.t[1] / z + cam.cy];
    let (color, color_active) = eval_sh(&s.sh, f.dir);
    Some(Projected2DGaussian {
        index,
        center,
        cov2d,
        conic,
        depth: z,
        color,
        color_active,
        opacity: s.opacity,
    })
}

/// Pulls screen-space gradients back to the splat parameters. `s` must be
/// in front of the near plane.
pub fn project_gaussian_backward(s: &SplatParams, cam: &Camera, g: &ProjectedGrad) -> SplatGrad {
    let f = frame(s, cam).expect("backward only runs for projected splats");
    let (fx, fy) = (cam.fx, cam.fy);
    let [tx, ty, z] = f.t;
    let mut gt = [0.0; 3];

    // Conic is the inverse of the screen covariance: dL/dP = −Q G Q.
    let p = sandwich(&f.jw, &f.sigma);
    let p = [[p[0][0] + EPS_COV, p[0][1]], [p[1][0], p[1][1] + EPS_COV]];
    let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let q = [[p[1][1] / det, -p[0][1] / det], [-p[1][0] / det, p[0][0] / det]];
    let gq = [[g.conic[0], 0.5 * g.conic[1]], [0.5 * g.conic[1], g.conic[2]]];
    let qg = [0, 1].map(|r| [0, 1].map(|c| q[r][0] * gq[0][c] + q[r][1] * gq[1][c]));
    let g_cov = [0, 1].map(|r| [0, 1].map(|c| -(qg[r][0] * q[0][c] + qg[r][1] * q[1][c])));

    // P = T Σ Tᵀ with T = J W.
    let t_sigma = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| f.jw[r][k] * f.sigma[k][c]).sum::<f64>()));
    let g_t: Mat23 =
        [0, 1].map(|r| [0, 1, 2].map(|c| 2.0 * (g_cov[r][0] * t_sigma[0][c] + g_cov[r][1] * t_sigma[1][c])));
    let g_sigma: Mat3 = [0, 1, 2].map(|r| {
        [0, 1, 2].map(|c| {
            (0..2)
                .map(|a| (0..2).map(|b| f.jw[a][r] * g_cov[a][b] * f.jw[b][c]).sum::<f64>())
                .sum::<f64>()
        })
    });
    let w = &cam.rotation;
    let g_j: Mat23 = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| g_t[r][k] * w[c][k]).sum::<f64>()));
    let z2 = z * z;
    let z3 = z2 * z;
    gt[0] += g_j[0][2] * (-fx / z2);
    gt[1] += g_j[1][2] * (-fy / z2);
    gt[2] += g_j[0][0] * (-fx / z2)
        + g_j[0][2] * (2.0 * fx * tx / z3)
        + g_j[1][1] * (-fy / z2)
        + g_j[1][2] * (2.0 * fy * ty / z3);

    // Pinhole centre.
    gt[0] += g.center[0] * fx / z;
    gt[1] += g.center[1] * fy / z;
    gt[2] -= g.center[0] * fx * tx / z2 + g.center[1] * fy * ty / z2;

    let mut position = [0, 1, 2].map(|c| (0..3).map(|r| w[r][c] * gt[r]).sum::<f64>());

    // View-dependent color through the normalized view direction.
    let (_, active) = eval_sh(&s.sh, f.dir);
    let (sh, g_dir) = eval_sh_backward(&s.sh, f.dir, active, g.color);
    let dot: f64 = (0..3).map(|i| f.dir[i] * g_dir[i]).sum();
    for i in 0..3 {
        position[i] += (g_dir[i] - f.dir[i] * dot) / f.dir_len;
    }

    // Σ = M Mᵀ with M = R S.
    let g_m: Mat3 = [0, 1, 2].map(|r| [0, 1, 2].map(|c| 2.0 * (0..3).map(|k| g_sigma[r][k] * f.m[k][c]).sum::<f64>()));
    let rot = quat_to_rotation(s.rotation);
    let scale = [0, 1, 2].map(|j| (0..3).map(|i| rot[i][j] * g_m[i][j]).sum::<f64>());
    let g_r: Mat3 = [0, 1, 2].map(|i| [0, 1, 2].map(|j| g_m[i][j] * s.scale[j]));
    let rotation = quat_to_rotation_backward(s.rotation, &g_r);

    SplatGrad {
        position,
        opacity: g.opacity,
        sh,
        scale,
        rotation,
    }
}
