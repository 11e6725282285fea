//! Random splat scenes for gradient checks, benchmarks and tests.

use gamba_autodiff::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use gamba_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::gaussians::GaussianTensors;
use crate::render::sh::eval_sh;
use crate::render::{project_gaussian, render, SplatParams, CUTOFF_M2};

pub struct Scene {
    pub splats: Vec<SplatParams>,
    pub camera: Camera,
    pub background: [f64; 3],
}

fn random_splat(rng: &mut impl Rng) -> SplatParams {
    let mut q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    q.iter_mut().for_each(|v| *v /= norm);
    SplatParams {
        position: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        opacity: rng.random_range(0.2..0.9),
        sh: std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
        scale: std::array::from_fn(|_| rng.random_range(0.08..0.3)),
        rotation: q,
    }
}

fn random_camera(rng: &mut impl Rng, size: u32) -> Camera {
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n <= 1.0 {
            let eye = d.map(|v| 2.5 * v / n);
            return Camera::look_at(eye, [0.0; 3], size, size, f64::from(size)).unwrap();
        }
    }
}

/// True when no pixel centre lies within `margin` of any splat's cutoff
/// ellipse, depths are separated, and no color channel is near its clamp.
pub fn is_smooth(scene: &Scene, margin: f64) -> bool {
    let cam = &scene.camera;
    let mut projected = Vec::new();
    for (i, s) in scene.splats.iter().enumerate() {
        let Some(p) = project_gaussian(i, s, cam) else {
            return false;
        };
        let eye = cam.center();
        let d: [f64; 3] = std::array::from_fn(|k| s.position[k] - eye[k]);
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (color, active) = eval_sh(&s.sh, d.map(|v| v / n));
        if active.contains(&false) || color.iter().any(|c| !(0.02..=0.98).contains(c)) {
            return false;
        }
        projected.push(p);
    }
    let mut depths: Vec<f64> = projected.iter().map(|p| p.depth).collect();
    depths.sort_by(f64::total_cmp);
    if depths.windows(2).any(|w| w[1] - w[0] < 1e-3) {
        return false;
    }
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            for p in &projected {
                let (dx, dy) = (px - p.center[0], py - p.center[1]);
                let [a, b, c] = p.conic;
                let m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if (m2 - CUTOFF_M2).abs() < margin {
                    return false;
                }
            }
        }
    }
    true
}

/// A scene of 1 to `max_splats` splats, optionally rejection-sampled to be
/// smooth enough for finite differences.
pub fn random_scene(rng: &mut impl Rng, max_splats: usize, size: u32, smooth: bool) -> Scene {
    loop {
        let n = rng.random_range(1..=max_splats);
        let scene = Scene {
            splats: (0..n).map(|_| random_splat(rng)).collect(),
            camera: random_camera(rng, size),
            background: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        };
        if !smooth || is_smooth(&scene, 0.02) {
            return scene;
        }
    }
}

/// Inputs in render order: position, opacity, sh, scale, rotation, background.
pub fn scene_inputs(scene: &Scene) -> Vec<Tensor<f64>> {
    let n = scene.splats.len();
    let col = |f: &dyn Fn(&SplatParams) -> Vec<f64>, w: usize| {
        Tensor::param(scene.splats.iter().flat_map(f).collect(), &[n, w]).unwrap()
    };
    vec![
        col(&|s| s.position.to_vec(), 3),
        col(&|s| vec![s.opacity], 1),
        col(&|s| s.sh.to_vec(), 12),
        col(&|s| s.scale.to_vec(), 3),
        col(&|s| s.rotation.to_vec(), 4),
        Tensor::param(scene.background.to_vec(), &[3]).unwrap(),
    ]
}

pub fn gaussians(t: &[Tensor<f64>]) -> GaussianTensors<f64> {
    GaussianTensors {
        position: t[0].clone(),
        opacity: t[1].clone(),
        sh: t[2].clone(),
        scale: t[3].clone(),
        rotation: t[4].clone(),
    }
}

/// Fixed positive weights over `t`, normalized to a weighted mean.
pub fn weighted_mean(t: &Tensor<f64>, seed: u64) -> gamba_autodiff::Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t.numel();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5) / n as f64).collect();
    t.mul(&Tensor::new(w, t.shape())?)?.sum()
}

/// Central-difference check of every render input of `scene` through a
/// weighted mean of color and alpha.
pub fn render_gradcheck(scene: &Scene, options: GradCheckOptions) -> gamba_autodiff::Result<GradCheckReport> {
    let cam = scene.camera;
    check_gradients(
        &scene_inputs(scene),
        |t| {
            let img = render(&gaussians(t), &cam, &t[5]).map_err(|e| match e {
                crate::Error::Tensor(e) => e,
                other => gamba_autodiff::Error::Usage(other.to_string()),
            })?;
            weighted_mean(&img.rgb, 1)?.add(&weighted_mean(&img.alpha, 2)?)
        },
        options,
    )
}
