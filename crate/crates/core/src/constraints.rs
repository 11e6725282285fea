//! Radial-polygon silhouette approximation and the splat-centre distance
//! penalty that pulls projected centres back inside the object mask.

use std::f64::consts::TAU;

use gamba_autodiff::{Real, Tensor};

use crate::error::{Error, Result};
use crate::image::ImageBuf;

pub const DEFAULT_ANGLES: usize = 360;
pub const MIN_ANGLES: usize = 8;

/// Binary `H x W` mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Degenerate(format!(
                "mask has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self { height, width, data }
    }

    /// Thresholds channel `channel` of `image` at `threshold`.
    pub fn from_image(image: &ImageBuf, channel: usize, threshold: f32) -> Self {
        Self::from_fn(image.height, image.width, |y, x| image.at(y, x, channel) >= threshold)
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Value at integer pixel coordinates; outside the frame is background.
    pub fn at(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    /// Nearest-pixel lookup at continuous coordinates, pixel `(x, y)`
    /// spanning `[x, x + 1) x [y, y + 1)`.
    pub fn contains_point(&self, u: f64, v: f64) -> bool {
        u.is_finite() && v.is_finite() && self.at(u.floor() as i64, v.floor() as i64)
    }
}

/// Per-angle contour distances from the image centre, angle `k` being
/// `2πk / A` measured from `+x` towards `+y` (image down).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialPolygon {
    pub center: [f64; 2],
    pub radii: Vec<f64>,
}

impl RadialPolygon {
    pub fn angles(&self) -> Vec<f64> {
        let a = self.radii.len() as f64;
        (0..self.radii.len()).map(|k| TAU * k as f64 / a).collect()
    }
}

/// Distance from `c` along `dir` to the frame border.
fn border_distance(c: [f64; 2], dir: [f64; 2], width: f64, height: f64) -> f64 {
    let axis = |p: f64, d: f64, hi: f64| {
        if d > 1e-12 {
            (hi - p) / d
        } else if d < -1e-12 {
            -p / d
        } else {
            f64::INFINITY
        }
    };
    axis(c[0], dir[0], width).min(axis(c[1], dir[1], height))
}

/// Walks `n_angles` rays from the image centre through the pixel grid
/// cell by cell; each radius is where the ray leaves the outermost
/// foreground pixel it crosses (the frame border at most). Rays that never
/// cross foreground get radius 0.
pub fn mask_to_radial_polygon(mask: &Mask, n_angles: usize) -> Result<RadialPolygon> {
    if n_angles < MIN_ANGLES {
        return Err(Error::Usage(format!(
            "need at least {MIN_ANGLES} angles, got {n_angles}"
        )));
    }
    if mask.area() == 0 {
        return Err(Error::Degenerate("empty mask".into()));
    }
    let (w, h) = (mask.width as f64, mask.height as f64);
    let center = [w / 2.0, h / 2.0];
    let radii = (0..n_angles)
        .map(|k| {
            let theta = TAU * k as f64 / n_angles as f64;
            let dir = [theta.cos(), theta.sin()];
            let t_max = border_distance(center, dir, w, h);
            let mut walk = [GridAxis::new(center[0], dir[0]), GridAxis::new(center[1], dir[1])];
            let mut t = 0.0;
            let mut radius = 0.0;
            while t < t_max {
                let exit = walk[0].next.min(walk[1].next).min(t_max);
                if mask.at(walk[0].cell, walk[1].cell) {
                    radius = exit;
                }
                t = exit;
                let axis = if walk[0].next <= walk[1].next { 0 } else { 1 };
                walk[axis].advance();
            }
            radius
        })
        .collect();
    Ok(RadialPolygon { center, radii })
}

pub const AXIS_SNAP: f64 = 1e-12;

/// One axis of a grid traversal: the current cell and the ray parameter
/// at which the ray crosses into the next one.
struct GridAxis {
    cell: i64,
    step: i64,
    next: f64,
    delta: f64,
}

impl GridAxis {
    /// Directions within `AXIS_SNAP` of zero count as zero, so a ray along
    /// a grid line walks the cells on its positive side.
    fn new(p: f64, d: f64) -> Self {
        if d > AXIS_SNAP {
            let cell = p.floor();
            Self {
                cell: cell as i64,
                step: 1,
                next: (cell + 1.0 - p) / d,
                delta: 1.0 / d,
            }
        } else if d < -AXIS_SNAP {
            // A start on a cell boundary belongs to the cell the ray enters.
            let cell = p.ceil() - 1.0;
            Self {
                cell: cell as i64,
                step: -1,
                next: (p - cell) / -d,
                delta: -1.0 / d,
            }
        } else {
            Self {
                cell: p.floor() as i64,
                step: 0,
                next: f64::INFINITY,
                delta: f64::INFINITY,
            }
        }
    }

    fn advance(&mut self) {
        self.cell += self.step;
        self.next += self.delta;
    }
}

/// Contour point at `angle`, linearly interpolating the radii of the two
/// neighbouring samples.
pub fn contour_lookup(poly: &RadialPolygon, angle: f64) -> [f64; 2] {
    let a = poly.radii.len();
    let step = TAU / a as f64;
    let theta = angle.rem_euclid(TAU);
    let pos = theta / step;
    let k = (pos.floor() as usize) % a;
    let frac = pos - pos.floor();
    let r = (1.0 - frac) * poly.radii[k] + frac * poly.radii[(k + 1) % a];
    [poly.center[0] + r * theta.cos(), poly.center[1] + r * theta.sin()]
}

/// Mean over all splats of the squared pixel distance between each
/// visible centre lying outside `mask` and the contour point at its
/// angle; centres inside contribute zero. The contour target is constant.
pub fn dist_loss<F: Real>(
    centers: &Tensor<F>,
    visible: &[bool],
    mask: &Mask,
    poly: &RadialPolygon,
) -> Result<Tensor<F>> {
    if centers.ndim() != 2 || centers.dim(1) != 2 || visible.len() != centers.dim(0) {
        return Err(Error::Usage(format!(
            "centres must be [N x 2] with N visibility flags, got {:?} and {}",
            centers.shape(),
            visible.len()
        )));
    }
    let n = centers.dim(0);
    let c: Vec<f64> = centers.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut diffs = vec![[0.0; 2]; n];
    let mut total = 0.0;
    for i in 0..n {
        let (u, v) = (c[i * 2], c[i * 2 + 1]);
        if !visible[i] || mask.contains_point(u, v) {
            continue;
        }
        let angle = (v - poly.center[1]).atan2(u - poly.center[0]);
        let target = contour_lookup(poly, angle);
        diffs[i] = [u - target[0], v - target[1]];
        total += diffs[i][0] * diffs[i][0] + diffs[i][1] * diffs[i][1];
    }
    let denom = n.max(1) as f64;
    Ok(Tensor::from_op(
        "dist_loss",
        vec![F::lit(total / denom)],
        vec![],
        vec![centers.clone()],
        move |g, _| {
            let scale = 2.0 * g[0].to_f64_lossy() / denom;
            vec![Some(
                diffs
                    .iter()
                    .flat_map(|d| [F::lit(scale * d[0]), F::lit(scale * d[1])])
                    .collect(),
            )]
        },
    )?)
}
