//! Degree-1 real spherical harmonics color.

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

fn basis(dir: [f64; 3]) -> [f64; 4] {
    let [x, y, z] = dir;
    [SH_C0, -SH_C1 * y, SH_C1 * z, -SH_C1 * x]
}

/// Color along unit direction `dir`, offset by 0.5 and clamped to `[0, 1]`.
/// The mask marks channels left unclamped.
pub fn eval_sh(sh: &[f64], dir: [f64; 3]) -> ([f64; 3], [bool; 3]) {
    let b = basis(dir);
    let mut color = [0.0; 3];
    let mut active = [false; 3];
    for c in 0..3 {
        let v = 0.5 + (0..4).map(|k| b[k] * sh[k * 3 + c]).sum::<f64>();
        active[c] = (0.0..=1.0).contains(&v);
        color[c] = v.clamp(0.0, 1.0);
    }
    (color, active)
}

/// Gradients w.r.t. the 12 coefficients and the direction.
pub fn eval_sh_backward(sh: &[f64], dir: [f64; 3], active: [bool; 3], g: [f64; 3]) -> ([f64; 12], [f64; 3]) {
    let b = basis(dir);
    let mut g_sh = [0.0; 12];
    let mut g_b = [0.0; 4];
    for c in 0..3 {
        if !active[c] {
            continue;
        }
        for k in 0..4 {
            g_sh[k * 3 + c] = b[k] * g[c];
            g_b[k] += sh[k * 3 + c] * g[c];
        }
    }
    let g_dir = [-SH_C1 * g_b[3], -SH_C1 * g_b[1], SH_C1 * g_b[2]];
    (g_sh, g_dir)
}
