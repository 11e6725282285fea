//! Pinhole cameras and the plain-text camera file format.
//!
//! Extrinsics map world to camera coordinates, `p_cam = R p + t`, with the
//! camera looking down `+z`, `x` to the right and `y` down the image.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Distance of the canonical inference camera from the origin.
pub const NORMALIZED_DISTANCE: f64 = 2.0;

/// Values per line in a camera file: 12 extrinsic, 4 intrinsic, width, height.
pub const CAMERA_FILE_FIELDS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-4 || !dot.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "camera rotation is not orthonormal (row {i}·row {j} = {dot})"
                    )));
                }
            }
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Degenerate(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..=f64::from(self.width)).contains(&self.cx) || !(0.0..=f64::from(self.height)).contains(&self.cy) {
            return Err(Error::Degenerate(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite camera translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; focal length `focal` pixels and a
    /// centred principal point.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], width: u32, height: u32, focal: f64) -> Result<Self> {
        let forward = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]])
            .ok_or_else(|| Error::Degenerate("camera eye coincides with target".into()))?;
        // World "up" is −y so that the canonical camera has R = I.
        let right = normalize(cross(forward, [0.0, -1.0, 0.0]))
            .or_else(|| normalize(cross(forward, [0.0, 0.0, 1.0])))
            .expect("one of two orthogonal up vectors is not parallel");
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [0, 1, 2].map(|i| -(0..3).map(|k| rotation[i][k] * eye[k]).sum::<f64>());
        let cam = Self {
            rotation,
            translation,
            fx: focal,
            fy: focal,
            cx: f64::from(width) / 2.0,
            cy: f64::from(height) / 2.0,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// The canonical pose assumed at inference: on the −z axis at
    /// [`NORMALIZED_DISTANCE`], looking at the origin, focal length equal to
    /// the image width (the unit cube spans the frame).
    pub fn normalized(width: u32, height: u32) -> Self {
        Self::look_at(
            [0.0, 0.0, -NORMALIZED_DISTANCE],
            [0.0; 3],
            width,
            height,
            f64::from(width),
        )
        .expect("canonical camera is valid")
    }

    /// Camera centre in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> [f64; 3] {
        let (r, t) = (&self.rotation, &self.translation);
        [0, 1, 2].map(|j| -(0..3).map(|i| r[i][j] * t[i]).sum::<f64>())
    }

    /// The 16 conditioning values: rotation (row-major) and translation,
    /// then `[fx, fy, cx, cy]` divided by the image size.
    pub fn raw_params(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..3 {
            out[i * 3..i * 3 + 3].copy_from_slice(&self.rotation[i]);
        }
        out[9..12].copy_from_slice(&self.translation);
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        out[12] = self.fx / w;
        out[13] = self.fy / h;
        out[14] = self.cx / w;
        out[15] = self.cy / h;
        out
    }

    pub fn to_line(&self) -> String {
        let mut line = String::new();
        for row in &self.rotation {
            for v in row {
                write!(line, "{v} ").expect("string write");
            }
        }
        for v in self.translation.iter().chain(&[self.fx, self.fy, self.cx, self.cy]) {
            write!(line, "{v} ").expect("string write");
        }
        write!(line, "{} {}", self.width, self.height).expect("string write");
        line
    }
}

/// Parses a camera file; `offset` in errors is the byte offset of the
/// offending token.
pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>> {
    let mut cameras = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let offset_of = |tok: &str| line_start + (tok.as_ptr() as usize - line.as_ptr() as usize);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !tokens.is_empty() && !tokens[0].starts_with('#') {
            if tokens.len() != CAMERA_FILE_FIELDS {
                return Err(Error::parse(
                    path,
                    line_start,
                    format!("expected {CAMERA_FILE_FIELDS} values, found {}", tokens.len()),
                ));
            }
            let mut v = [0.0; 16];
            for (i, tok) in tokens[..16].iter().enumerate() {
                v[i] = tok
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, offset_of(tok), format!("{tok:?}: {e}")))?;
            }
            let dim = |tok: &str| {
                tok.parse::<u32>()
                    .map_err(|e| Error::parse(path, offset_of(tok), format!("{tok:?}: {e}")))
            };
            let cam = Camera {
                rotation: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
                translation: [v[9], v[10], v[11]],
                fx: v[12],
                fy: v[13],
                cx: v[14],
                cy: v[15],
                width: dim(tokens[16])?,
                height: dim(tokens[17])?,
            };
            cam.validate()
                .map_err(|e| Error::parse(path, line_start, e.to_string()))?;
            cameras.push(cam);
        }
        line_start += line.len();
    }
    Ok(cameras)
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let mut text = String::new();
    for c in cameras {
        text.push_str(&c.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `count` cameras on a Fibonacci sphere of `radius`, all looking at the
/// origin with focal length equal to the image width.
pub fn fibonacci_sphere(count: usize, radius: f64, width: u32, height: u32) -> Vec<Camera> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let eye = [radius * r * phi.cos(), radius * y, radius * r * phi.sin()];
            Camera::look_at(eye, [0.0; 3], width, height, f64::from(width)).expect("sphere cameras are valid")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_camera_is_identity_rotation() {
        let c = Camera::normalized(64, 64);
        assert_eq!(c.rotation, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(c.translation, [0.0, 0.0, 2.0]);
        assert_eq!(c.center(), [0.0, 0.0, -2.0]);
    }

    #[test]
    fn raw_params_have_sixteen_entries_and_normalized_intrinsics() {
        let c = Camera::normalized(64, 64);
        let raw = c.raw_params();
        assert_eq!(raw.len(), 16);
        assert_eq!(raw[12], 1.0);
        assert_eq!(raw[14], 0.5);
    }

    #[test]
    fn validation_rejects_bad_cameras() {
        let mut c = Camera::normalized(32, 32);
        c.fx = 0.0;
        assert!(c.validate().is_err());
        let mut c = Camera::normalized(32, 32);
        c.rotation[0][0] = 1.1;
        assert!(c.validate().is_err());
        let mut c = Camera::normalized(32, 32);
        c.cx = 40.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let cams = fibonacci_sphere(5, 2.0, 64, 48);
        let text: String = cams.iter().map(|c| c.to_line() + "\n").collect();
        let back = parse_cameras(&text, Path::new("mem")).unwrap();
        assert_eq!(back, cams);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let good = Camera::normalized(8, 8).to_line();
        let (head, _) = good.rsplit_once(' ').unwrap();
        let bad = format!("{head} z");
        let text = format!("{good}\n{bad}\n");
        match parse_cameras(&text, Path::new("cams.txt")) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, good.len() + 1 + head.len() + 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_cameras("1 2 3\n", Path::new("cams.txt")) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("expected parse error at 0, got {other:?}"),
        }
    }

    #[test]
    fn sphere_cameras_look_at_origin() {
        for c in fibonacci_sphere(48, 2.0, 64, 64) {
            let center = c.center();
            let dist = center.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((dist - 2.0).abs() < 1e-9);
            // The origin maps to the principal point.
            let p = c.translation;
            assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9 && (p[2] - 2.0).abs() < 1e-9);
        }
    }
}
