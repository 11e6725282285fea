//! Differentiable Gaussian splatting.
//!
//! Projection and compositing run in `f64` whatever the tensor precision;
//! gradients flow back through a hand-written backward pass.

pub mod geometry;
pub mod project;
pub mod raster;
pub mod sh;

use std::sync::Arc;

use gamba_autodiff::{Real, Tensor};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, GaussianTensors, SH_COEFFS};
use crate::image::ImageBuf;

pub use geometry::{build_covariance, eval_gaussian};
pub use project::{project_gaussian, Projected2DGaussian, SplatParams, EPS_COV, NEAR_PLANE};
pub use raster::{rasterize, rasterize_back_to_front, rasterize_reference, CUTOFF_M2, TILE};

use project::{project_gaussian_backward, ProjectedGrad};
use raster::{rasterize_backward, rasterize_binned, sort_by_depth, TileBins};

/// A rendered view: `rgb` is `[H x W x 3]`, `alpha` is `[H x W x 1]`.
#[derive(Debug, Clone)]
pub struct RenderedImage<F: Real> {
    pub rgb: Tensor<F>,
    pub alpha: Tensor<F>,
}

impl<F: Real> RenderedImage<F> {
    pub fn rgb_image(&self) -> Result<ImageBuf> {
        ImageBuf::from_tensor(&self.rgb)
    }

    pub fn alpha_image(&self) -> Result<ImageBuf> {
        ImageBuf::from_tensor(&self.alpha)
    }
}

fn splat_params<F: Real>(g: &GaussianTensors<F>) -> Vec<SplatParams> {
    let cols = g
        .parts()
        .map(|t| t.data().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
    let [pos, opa, sh, scale, rot] = &cols;
    (0..g.len())
        .map(|i| SplatParams {
            position: pos[i * 3..i * 3 + 3].try_into().unwrap(),
            opacity: opa[i],
            sh: sh[i * SH_COEFFS..(i + 1) * SH_COEFFS].try_into().unwrap(),
            scale: scale[i * 3..i * 3 + 3].try_into().unwrap(),
            rotation: rot[i * 4..i * 4 + 4].try_into().unwrap(),
        })
        .collect()
}

fn check_shapes<F: Real>(g: &GaussianTensors<F>) -> Result<()> {
    let n = g.len();
    let widths = [3, 1, SH_COEFFS, 3, 4];
    for (t, w) in g.parts().into_iter().zip(widths) {
        if t.shape() != [n, w] {
            return Err(Error::Degenerate(format!(
                "splat tensor has shape {:?}, expected [{n}, {w}]",
                t.shape()
            )));
        }
    }
    Ok(())
}

fn projected_sorted(splats: &[SplatParams], cam: &Camera) -> Vec<Projected2DGaussian> {
    let mut proj: Vec<_> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| project_gaussian(i, s, cam))
        .collect();
    sort_by_depth(&mut proj);
    proj
}

/// Renders `g` from `cam` over `background` (shape `[3]`).
pub fn render<F: Real>(g: &GaussianTensors<F>, cam: &Camera, background: &Tensor<F>) -> Result<RenderedImage<F>> {
    check_shapes(g)?;
    if background.shape() != [3] {
        return Err(Error::Degenerate(format!(
            "background must have shape [3], got {:?}",
            background.shape()
        )));
    }
    let bg: [f64; 3] = std::array::from_fn(|k| background.data()[k].to_f64_lossy());
    let (h, w) = (cam.height as usize, cam.width as usize);
    let splats = splat_params(g);
    let sorted = projected_sorted(&splats, cam);
    let bins = TileBins::new(&sorted, h, w);
    let out = rasterize_binned(&sorted, &bins, h, w, bg);

    struct Saved {
        splats: Vec<SplatParams>,
        sorted: Vec<Projected2DGaussian>,
        bins: TileBins,
        cam: Camera,
        bg: [f64; 3],
    }
    let saved = Arc::new(Saved {
        splats,
        sorted,
        bins,
        cam: *cam,
        bg,
    });
    let n = g.len();
    let inputs = g.parts().into_iter().cloned().chain([background.clone()]).collect();
    let combined = Tensor::from_op(
        "render",
        out.into_iter().map(F::lit).collect(),
        vec![h, w, 4],
        inputs,
        move |grad: &[F], needs: &[bool]| {
            let s = &*saved;
            let grad: Vec<f64> = grad.iter().map(|v| v.to_f64_lossy()).collect();
            let (proj_grads, g_bg) = rasterize_backward(&s.sorted, &s.bins, h, w, s.bg, &grad);
            let mut pos = vec![0.0; n * 3];
            let mut opa = vec![0.0; n];
            let mut sh = vec![0.0; n * SH_COEFFS];
            let mut scale = vec![0.0; n * 3];
            let mut rot = vec![0.0; n * 4];
            for (p, pg) in s.sorted.iter().zip(&proj_grads) {
                if *pg == ProjectedGrad::default() {
                    continue;
                }
                let i = p.index;
                let sg = project_gaussian_backward(&s.splats[i], &s.cam, pg);
                pos[i * 3..i * 3 + 3].copy_from_slice(&sg.position);
                opa[i] = sg.opacity;
                sh[i * SH_COEFFS..(i + 1) * SH_COEFFS].copy_from_slice(&sg.sh);
                scale[i * 3..i * 3 + 3].copy_from_slice(&sg.scale);
                rot[i * 4..i * 4 + 4].copy_from_slice(&sg.rotation);
            }
            let conv = |v: Vec<f64>| v.into_iter().map(F::lit).collect::<Vec<F>>();
            [pos, opa, sh, scale, rot, g_bg.to_vec()]
                .into_iter()
                .zip(needs)
                .map(|(v, &need)| need.then(|| conv(v)))
                .collect()
        },
    )?;
    Ok(RenderedImage {
        rgb: combined.narrow_last(0, 3)?,
        alpha: combined.narrow_last(3, 1)?,
    })
}

/// Non-differentiable render of a plain set to an `[H x W x 4]` RGBA image
/// (color composited over `bg`).
pub fn render_set(set: &GaussianSet, cam: &Camera, bg: [f64; 3]) -> ImageBuf {
    let splats: Vec<SplatParams> = set.splats.iter().map(SplatParams::from).collect();
    let sorted = projected_sorted(&splats, cam);
    let (h, w) = (cam.height as usize, cam.width as usize);
    let bins = TileBins::new(&sorted, h, w);
    let out = rasterize_binned(&sorted, &bins, h, w, bg);
    ImageBuf::new(h, w, 4, out.into_iter().map(|v| v as f32).collect()).expect("sized by construction")
}

/// Pixel-space centres of `positions` (`[N x 3]`) as `[N x 2]`, plus a
/// visibility flag per splat. Culled splats map to the principal point
/// and receive no gradient.
pub fn project_centers<F: Real>(positions: &Tensor<F>, cam: &Camera) -> Result<(Tensor<F>, Vec<bool>)> {
    if positions.ndim() != 2 || positions.dim(1) != 3 {
        return Err(Error::Degenerate(format!(
            "positions must be [N x 3], got {:?}",
            positions.shape()
        )));
    }
    let n = positions.dim(0);
    let p: Vec<f64> = positions.data().iter().map(|v| v.to_f64_lossy()).collect();
    let (r, tr) = (cam.rotation, cam.translation);
    let cam_point =
        move |i: usize| -> [f64; 3] { [0, 1, 2].map(|a| (0..3).map(|k| r[a][k] * p[i * 3 + k]).sum::<f64>() + tr[a]) };
    let points: Vec<[f64; 3]> = (0..n).map(cam_point).collect();
    let visible: Vec<bool> = points.iter().map(|t| t[2] > NEAR_PLANE).collect();
    let mut out = Vec::with_capacity(n * 2);
    for (t, &vis) in points.iter().zip(&visible) {
        if vis {
            out.push(cam.fx * t[0] / t[2] + cam.cx);
            out.push(cam.fy * t[1] / t[2] + cam.cy);
        } else {
            out.extend([cam.cx, cam.cy]);
        }
    }
    let (fx, fy) = (cam.fx, cam.fy);
    let vis = visible.clone();
    let centers = Tensor::from_op(
        "project_centers",
        out.into_iter().map(F::lit).collect(),
        vec![n, 2],
        vec![positions.clone()],
        move |grad: &[F], _| {
            let mut gp = vec![F::zero(); n * 3];
            for i in 0..n {
                if !vis[i] {
                    continue;
                }
                let [tx, ty, z] = points[i];
                let (gu, gv) = (grad[i * 2].to_f64_lossy(), grad[i * 2 + 1].to_f64_lossy());
                let gt = [gu * fx / z, gv * fy / z, -(gu * fx * tx + gv * fy * ty) / (z * z)];
                for c in 0..3 {
                    gp[i * 3 + c] = F::lit((0..3).map(|a| r[a][c] * gt[a]).sum::<f64>());
                }
            }
            vec![Some(gp)]
        },
    )?;
    Ok((centers, visible))
}
