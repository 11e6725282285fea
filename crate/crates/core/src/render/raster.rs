//! Depth-sorted alpha compositing of screen-space Gaussians.
//!
//! Output pixels hold `[r, g, b, alpha]`. Pixel `(x, y)` is sampled at
//! `(x + 0.5, y + 0.5)`. A splat contributes only where its squared
//! Mahalanobis distance is at most [`CUTOFF_M2`].

use rayon::prelude::*;

use super::project::{Projected2DGaussian, ProjectedGrad};

pub const TILE: usize = 16;
/// Squared 3σ cutoff.
pub const CUTOFF_M2: f64 = 9.0;

/// Sorts front to back; equal depths keep splat-index order.
pub fn sort_by_depth(splats: &mut [Projected2DGaussian]) {
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
}

struct Sample {
    g: f64,
    dx: f64,
    dy: f64,
}

#[inline]
fn sample(p: &Projected2DGaussian, px: f64, py: f64) -> Option<Sample> {
    let dx = px - p.center[0];
    let dy = py - p.center[1];
    let [a, b, c] = p.conic;
    let m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    (m2 <= CUTOFF_M2).then(|| Sample {
        g: (-0.5 * m2).exp(),
        dx,
        dy,
    })
}

fn composite(
    sorted: &[Projected2DGaussian],
    order: impl Iterator<Item = usize>,
    px: f64,
    py: f64,
    bg: [f64; 3],
) -> [f64; 4] {
    let mut t = 1.0;
    let mut out = [0.0; 4];
    for i in order {
        let p = &sorted[i];
        if let Some(s) = sample(p, px, py) {
            let a = p.opacity * s.g;
            for k in 0..3 {
                out[k] += t * a * p.color[k];
            }
            t *= 1.0 - a;
        }
    }
    for k in 0..3 {
        out[k] += t * bg[k];
    }
    out[3] = 1.0 - t;
    out
}

/// Per-tile lists of indices into a depth-sorted splat slice.
pub(crate) struct TileBins {
    tiles_x: usize,
    tiles_y: usize,
    lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub(crate) fn new(sorted: &[Projected2DGaussian], height: usize, width: usize) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        // Pixel range whose centres lie within the cutoff ellipse's bounding box.
        let range = |centre: f64, var: f64, len: usize| -> Option<(usize, usize)> {
            let r = CUTOFF_M2.sqrt() * var.sqrt() * (1.0 + 1e-9) + 1e-9;
            let lo = (centre - r - 0.5).ceil().max(0.0);
            let hi = (centre + r - 0.5).floor().min(len as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        for (i, p) in sorted.iter().enumerate() {
            let (Some((x0, x1)), Some((y0, y1))) = (
                range(p.center[0], p.cov2d[0], width),
                range(p.center[1], p.cov2d[2], height),
            ) else {
                continue;
            };
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            tiles_x,
            tiles_y,
            lists,
        }
    }

    fn rect(&self, tile: usize, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        (x0, (x0 + TILE).min(width), y0, (y0 + TILE).min(height))
    }
}

/// Tile-parallel forward pass over a depth-sorted slice.
pub(crate) fn rasterize_binned(
    sorted: &[Projected2DGaussian],
    bins: &TileBins,
    height: usize,
    width: usize,
    bg: [f64; 3],
) -> Vec<f64> {
    let tiles: Vec<Vec<[f64; 4]>> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = bins.rect(tile, height, width);
            let list = &bins.lists[tile];
            let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let order = list.iter().map(|&i| i as usize);
                    px.push(composite(sorted, order, x as f64 + 0.5, y as f64 + 0.5, bg));
                }
            }
            px
        })
        .collect();
    let mut out = vec![0.0; height * width * 4];
    for (tile, px) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = bins.rect(tile, height, width);
        let mut it = px.iter();
        for y in y0..y1 {
            for x in x0..x1 {
                out[(y * width + x) * 4..][..4].copy_from_slice(it.next().expect("tile pixel"));
            }
        }
    }
    out
}

/// Tile-based compositing; returns `H x W x 4` values.
pub fn rasterize(projected: &[Projected2DGaussian], height: usize, width: usize, bg: [f64; 3]) -> Vec<f64> {
    let mut sorted = projected.to_vec();
    sort_by_depth(&mut sorted);
    let bins = TileBins::new(&sorted, height, width);
    rasterize_binned(&sorted, &bins, height, width, bg)
}

/// Per-pixel oracle visiting every splat at every pixel.
pub fn rasterize_reference(projected: &[Projected2DGaussian], height: usize, width: usize, bg: [f64; 3]) -> Vec<f64> {
    let mut sorted = projected.to_vec();
    sort_by_depth(&mut sorted);
    let mut out = Vec::with_capacity(height * width * 4);
    for y in 0..height {
        for x in 0..width {
            out.extend(composite(&sorted, 0..sorted.len(), x as f64 + 0.5, y as f64 + 0.5, bg));
        }
    }
    out
}

/// The same image composited back to front with the "over" operator.
pub fn rasterize_back_to_front(
    projected: &[Projected2DGaussian],
    height: usize,
    width: usize,
    bg: [f64; 3],
) -> Vec<f64> {
    let mut sorted = projected.to_vec();
    sort_by_depth(&mut sorted);
    let mut out = Vec::with_capacity(height * width * 4);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut c = [bg[0], bg[1], bg[2], 0.0];
            for p in sorted.iter().rev() {
                if let Some(s) = sample(p, px, py) {
                    let a = p.opacity * s.g;
                    for k in 0..3 {
                        c[k] = a * p.color[k] + (1.0 - a) * c[k];
                    }
                    c[3] = a + (1.0 - a) * c[3];
                }
            }
            out.extend(c);
        }
    }
    out
}

struct Contribution {
    slot: usize,
    a: f64,
    t: f64,
    s: Sample,
}

/// Gradients w.r.t. each sorted splat's screen-space parameters and the
/// background, given the gradient of the `H x W x 4` output.
pub(crate) fn rasterize_backward(
    sorted: &[Projected2DGaussian],
    bins: &TileBins,
    height: usize,
    width: usize,
    bg: [f64; 3],
    grad_out: &[f64],
) -> (Vec<ProjectedGrad>, [f64; 3]) {
    let per_tile: Vec<(Vec<ProjectedGrad>, [f64; 3])> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = bins.rect(tile, height, width);
            let list = &bins.lists[tile];
            let mut grads = vec![ProjectedGrad::default(); list.len()];
            let mut g_bg = [0.0; 3];
            let mut contribs = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let g = &grad_out[(y * width + x) * 4..][..4];
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    contribs.clear();
                    let mut t = 1.0;
                    for (slot, &i) in list.iter().enumerate() {
                        let p = &sorted[i as usize];
                        if let Some(s) = sample(p, px, py) {
                            let a = p.opacity * s.g;
                            contribs.push(Contribution { slot, a, t, s });
                            t *= 1.0 - a;
                        }
                    }
                    for k in 0..3 {
                        g_bg[k] += g[k] * t;
                    }
                    // Composite of everything behind the current splat; the
                    // alpha channel has unit color over a zero background.
                    let mut behind = [bg[0], bg[1], bg[2], 0.0];
                    for c in contribs.iter().rev() {
                        let p = &sorted[list[c.slot] as usize];
                        let color = [p.color[0], p.color[1], p.color[2], 1.0];
                        let mut da = 0.0;
                        for k in 0..4 {
                            da += g[k] * c.t * (color[k] - behind[k]);
                            behind[k] = color[k] * c.a + (1.0 - c.a) * behind[k];
                        }
                        let out = &mut grads[c.slot];
                        for k in 0..3 {
                            out.color[k] += g[k] * c.t * c.a;
                        }
                        out.opacity += c.s.g * da;
                        let d_power = p.opacity * da * c.s.g;
                        let [ca, cb, cc] = p.conic;
                        let (dx, dy) = (c.s.dx, c.s.dy);
                        out.conic[0] -= 0.5 * dx * dx * d_power;
                        out.conic[1] -= dx * dy * d_power;
                        out.conic[2] -= 0.5 * dy * dy * d_power;
                        out.center[0] += d_power * (ca * dx + cb * dy);
                        out.center[1] += d_power * (cb * dx + cc * dy);
                    }
                }
            }
            (grads, g_bg)
        })
        .collect();

    let mut grads = vec![ProjectedGrad::default(); sorted.len()];
    let mut g_bg = [0.0; 3];
    for (tile, (tile_grads, tile_bg)) in per_tile.iter().enumerate() {
        for (slot, &i) in bins.lists[tile].iter().enumerate() {
            let (dst, src) = (&mut grads[i as usize], &tile_grads[slot]);
            for k in 0..2 {
                dst.center[k] += src.center[k];
            }
            for k in 0..3 {
                dst.conic[k] += src.conic[k];
                dst.color[k] += src.color[k];
            }
            dst.opacity += src.opacity;
        }
        for k in 0..3 {
            g_bg[k] += tile_bg[k];
        }
    }
    (grads, g_bg)
}
