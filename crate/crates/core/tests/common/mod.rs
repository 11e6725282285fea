//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code, unused_imports)]

pub use gamba_core::scenes::*;

/// Adapts a pipeline result to the tensor-engine error type expected by
/// `check_gradients`.
pub fn ad<T>(r: gamba_core::Result<T>) -> gamba_autodiff::Result<T> {
    r.map_err(|e| match e {
        gamba_core::Error::Tensor(e) => e,
        other => gamba_autodiff::Error::Usage(other.to_string()),
    })
}

/// Central-difference check of `f` with respect to tensors captured inside
/// it, perturbing `params` in place. Checks at most `max_entries` evenly
/// spaced entries per tensor and returns the worst relative error with its
/// `(tensor, entry)` location.
pub fn check_param_gradients(
    params: &[gamba_autodiff::Tensor<f64>],
    f: impl Fn() -> gamba_core::Result<gamba_autodiff::Tensor<f64>>,
    max_entries: usize,
) -> (f64, (usize, usize)) {
    use gamba_autodiff::gradcheck::relative_error;
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    params.iter().for_each(|p| p.zero_grad());
    f().unwrap().backward().unwrap();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let eval = || gamba_autodiff::no_grad(|| f().unwrap().item().unwrap());
    let mut worst = (0.0, (0, 0));
    for (which, p) in params.iter().enumerate() {
        let n = p.numel();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let original = p.to_vec()[idx];
            p.update_data(|d| d[idx] = original + STEP).unwrap();
            let plus = eval();
            p.update_data(|d| d[idx] = original - STEP).unwrap();
            let minus = eval();
            p.update_data(|d| d[idx] = original).unwrap();
            let err = relative_error(analytic[which][idx], (plus - minus) / (2.0 * STEP), FLOOR);
            if err > worst.0 {
                worst = (err, (which, idx));
            }
        }
    }
    worst
}

/// A model and dataset small enough for multi-step training in tests.
pub fn tiny_config(root: &std::path::Path) -> gamba_core::config::Config {
    use gamba_core::config::Config;
    Config {
        image_size: 16,
        patch: 8,
        token_dim: 8,
        n_gaussians: 12,
        embed_dim: 8,
        d_model: 16,
        depth: 2,
        d_state: 4,
        camera_hidden: 8,
        decoder_layers: 2,
        decoder_width: 16,
        bins: 8,
        lr: 1e-3,
        views_per_step: 3,
        steps: 6,
        checkpoint_every: 3,
        log_every: 1,
        n_objects: 2,
        views_per_object: 8,
        max_object_splats: 16,
        seed: 17,
        data_dir: root.join("data").display().to_string(),
        run_dir: root.join("run").display().to_string(),
        ..Config::default()
    }
}

/// Step-by-step recurrence in f64, discretizing every step from scratch.
pub fn naive_scan(s: &gamba_core::bench::ScanInputs<f32>) -> Vec<f64> {
    let v = |t: &gamba_autodiff::Tensor<f32>| t.to_vec().into_iter().map(f64::from).collect::<Vec<_>>();
    let (x, delta, a, b, c, d) = (v(&s.x), v(&s.delta), v(&s.a), v(&s.b), v(&s.c), v(&s.d));
    let (len, di) = (s.x.dim(0), s.x.dim(1));
    let n = s.a.dim(1);
    let mut y = vec![0.0; len * di];
    for ch in 0..di {
        let mut h = vec![0.0; n];
        for k in 0..len {
            let dt = delta[k * di + ch];
            let mut out = d[ch] * x[k * di + ch];
            for (s_, hs) in h.iter_mut().enumerate() {
                let ak = a[ch * n + s_];
                let a_bar = (1.0 + dt * ak / 2.0) / (1.0 - dt * ak / 2.0);
                let b_bar = dt * b[k * n + s_] / (1.0 - dt * ak / 2.0);
                *hs = a_bar * *hs + b_bar * x[k * di + ch];
                out += c[k * n + s_] * *hs;
            }
            y[k * di + ch] = out;
        }
    }
    y
}

/// Outermost point along the ray that lies in a foreground pixel square,
/// found by dense sampling. Near-axis directions snap onto the axis, the
/// same tie-break the polygon uses for rays along grid lines.
pub fn brute_force_radius(mask: &gamba_core::constraints::Mask, center: [f64; 2], theta: f64) -> f64 {
    let snap = |v: f64| {
        if v.abs() <= gamba_core::constraints::AXIS_SNAP {
            0.0
        } else {
            v
        }
    };
    let (dx, dy) = (snap(theta.cos()), snap(theta.sin()));
    let reach = (mask.width.max(mask.height) * 2) as f64;
    let mut best = 0.0;
    let mut t = 0.0;
    while t < reach {
        if mask.contains_point(center[0] + t * dx, center[1] + t * dy) {
            best = t;
        }
        t += 0.01;
    }
    best
}

pub fn disk(size: usize, r: f64) -> gamba_core::constraints::Mask {
    let c = size as f64 / 2.0;
    gamba_core::constraints::Mask::from_fn(size, size, |y, x| {
        let (u, v) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
        u * u + v * v <= r * r
    })
}

/// Random convex region containing the image centre: a rotated ellipse
/// cut by a few half-planes that keep the centre inside.
pub fn random_convex(size: usize, rng: &mut impl rand::Rng) -> gamba_core::constraints::Mask {
    let c = size as f64 / 2.0;
    let (a, b) = (rng.random_range(4.0..c), rng.random_range(4.0..c));
    let rot: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let off = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let cuts: Vec<(f64, f64)> = (0..rng.random_range(0..4))
        .map(|_| (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(3.0..c)))
        .collect();
    gamba_core::constraints::Mask::from_fn(size, size, |y, x| {
        let (u, v) = (x as f64 + 0.5 - c - off[0], y as f64 + 0.5 - c - off[1]);
        let (p, q) = (u * rot.cos() + v * rot.sin(), -u * rot.sin() + v * rot.cos());
        let inside = (p / a).powi(2) + (q / b).powi(2) <= 1.0;
        inside && cuts.iter().all(|&(phi, d)| u * phi.cos() + v * phi.sin() <= d)
    })
}
