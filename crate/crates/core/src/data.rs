//! Synthetic multi-view dataset: random splat mixtures rendered from a
//! view sphere, plus the loaders and view-selection rules used in training.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.txt
//! obj_0000/gaussians.bin
//! obj_0000/cameras.txt
//! obj_0000/view_000.png   8-bit RGBA, color premultiplied by alpha
//! obj_0000/view_000.raw   the same image as f32
//! obj_0000/mask_000.png   alpha >= 0.5
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::{fibonacci_sphere, read_cameras, write_cameras, Camera};
use crate::config::Config;
use crate::constraints::Mask;
use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, Splat, SH_COEFFS};
use crate::image::ImageBuf;
use crate::render::render_set;

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "gamba-dataset 1";
pub const MASK_THRESHOLD: f32 = 0.5;

/// Radius of the ball holding synthetic splat centres.
const OBJECT_RADIUS: f64 = 0.45;
const SCALE_RANGE: (f64, f64) = (0.03, 0.12);
const OPACITY_RANGE: (f64, f64) = (0.5, 1.0);
const DC_RANGE: f64 = 1.5;
const SH_DETAIL_RANGE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObject {
    pub gaussians: GaussianSet,
    pub cameras: Vec<Camera>,
}

/// One posed view: premultiplied RGBA image, binary mask and camera.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub rgba: ImageBuf,
    pub mask: Mask,
    pub camera: Camera,
}

impl View {
    /// Premultiplied color `[H x W x 3]`.
    pub fn rgb(&self) -> ImageBuf {
        self.rgba.channels_range(0, 3)
    }

    pub fn alpha(&self) -> ImageBuf {
        self.rgba.channels_range(3, 1)
    }

    /// Color composited over white, the form fed to the model.
    pub fn over_white(&self) -> ImageBuf {
        over_color(&self.rgba, [1.0; 3])
    }
}

/// `[H x W x 3]` composite of a premultiplied RGBA image over `color`.
pub fn over_color(rgba: &ImageBuf, color: [f32; 3]) -> ImageBuf {
    assert_eq!(rgba.channels, 4, "expected RGBA");
    let data = rgba
        .data
        .chunks_exact(4)
        .flat_map(|px| [0, 1, 2].map(|k| px[k] + (1.0 - px[3]) * color[k]))
        .collect();
    ImageBuf::new(rgba.height, rgba.width, 3, data).expect("sized by construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectData {
    pub id: String,
    pub gaussians: GaussianSet,
    pub views: Vec<View>,
}

/// A reference view plus the views supervising it, all of one object.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub object: &'a ObjectData,
    pub reference: usize,
    /// Indices into `object.views`; never empty.
    pub views: &'a [usize],
}

impl TrainSample<'_> {
    pub fn reference_view(&self) -> &View {
        &self.object.views[self.reference]
    }
}

fn random_splat(rng: &mut impl Rng) -> Splat {
    let position = loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            break p.map(|v| (v * OBJECT_RADIUS) as f32);
        }
    };
    let opacity = rng.random_range(OPACITY_RANGE.0..OPACITY_RANGE.1) as f32;
    let mut sh = [0.0f32; SH_COEFFS];
    for (i, v) in sh.iter_mut().enumerate() {
        let range = if i < 3 { DC_RANGE } else { SH_DETAIL_RANGE };
        *v = rng.random_range(-range..range) as f32;
    }
    let scale = std::array::from_fn(|_| rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1) as f32);
    let q: [f64; 4] = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            break q.map(|v| v / norm);
        }
    };
    Splat {
        position,
        opacity,
        sh,
        scale,
        rotation: q.map(|v| v as f32),
    }
}

/// Draws objects until every view has a nonempty mask.
pub fn random_object(cfg: &Config, rng: &mut impl Rng) -> Result<(SyntheticObject, Vec<ImageBuf>)> {
    let size = cfg.image_size as u32;
    let cameras = fibonacci_sphere(cfg.views_per_object, cfg.camera_radius, size, size);
    for _ in 0..64 {
        let count = rng.random_range(cfg.min_object_splats..=cfg.max_object_splats);
        let gaussians = GaussianSet {
            splats: (0..count).map(|_| random_splat(rng)).collect(),
        };
        gaussians.validate(cfg.s_max)?;
        let images: Vec<ImageBuf> = cameras.iter().map(|c| render_set(&gaussians, c, [0.0; 3])).collect();
        if images
            .iter()
            .all(|im| Mask::from_image(im, 3, MASK_THRESHOLD).area() > 0)
        {
            return Ok((SyntheticObject { gaussians, cameras }, images));
        }
    }
    Err(Error::Degenerate(
        "could not generate an object visible from every camera".into(),
    ))
}

pub fn object_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("obj_{index:04}"))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates `cfg.n_objects` objects under `root`; object `i` draws from
/// stream `i` of a ChaCha8 generator seeded with `cfg.seed`.
pub fn gen_synthetic_dataset(root: &Path, cfg: &Config) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    mkdir(root)?;
    let mut manifest = String::new();
    writeln!(manifest, "{MANIFEST_HEADER}").expect("string write");
    writeln!(manifest, "image_size = {}", cfg.image_size).expect("string write");
    writeln!(manifest, "views = {}", cfg.views_per_object).expect("string write");
    writeln!(manifest, "seed = {}", cfg.seed).expect("string write");
    let mut dirs = Vec::with_capacity(cfg.n_objects);
    for i in 0..cfg.n_objects {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let (object, images) = random_object(cfg, &mut rng)?;
        let dir = object_dir(root, i);
        mkdir(&dir)?;
        object.gaussians.write(&dir.join("gaussians.bin"))?;
        write_cameras(&dir.join("cameras.txt"), &object.cameras)?;
        for (v, im) in images.iter().enumerate() {
            im.write_png(&dir.join(format!("view_{v:03}.png")))?;
            im.write_raw(&dir.join(format!("view_{v:03}.raw")))?;
            let mask = Mask::from_image(im, 3, MASK_THRESHOLD);
            mask_image(&mask).write_png(&dir.join(format!("mask_{v:03}.png")))?;
        }
        writeln!(manifest, "object {}", dir.file_name().unwrap().to_string_lossy()).expect("string write");
        log::info!("generated {} ({} splats)", dir.display(), object.gaussians.len());
        dirs.push(dir);
    }
    let path = root.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(dirs)
}

pub fn mask_image(mask: &Mask) -> ImageBuf {
    let data = mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    ImageBuf::new(mask.height, mask.width, 1, data).expect("sized by construction")
}

/// Loads one object directory; views come from the raw float images.
pub fn load_object(dir: &Path) -> Result<ObjectData> {
    let cameras = read_cameras(&dir.join("cameras.txt"))?;
    let gaussians = GaussianSet::read(&dir.join("gaussians.bin"))?;
    let mut views = Vec::with_capacity(cameras.len());
    for (v, camera) in cameras.into_iter().enumerate() {
        let path = dir.join(format!("view_{v:03}.raw"));
        let rgba = ImageBuf::read_raw(&path)?;
        if rgba.channels != 4 || (rgba.height, rgba.width) != (camera.height as usize, camera.width as usize) {
            return Err(Error::Degenerate(format!(
                "{} is {}x{}x{}, camera expects {}x{}x4",
                path.display(),
                rgba.height,
                rgba.width,
                rgba.channels,
                camera.height,
                camera.width
            )));
        }
        let mask_path = dir.join(format!("mask_{v:03}.png"));
        let mask = Mask::from_image(&ImageBuf::read_png(&mask_path)?, 0, MASK_THRESHOLD);
        if (mask.height, mask.width) != (rgba.height, rgba.width) || mask.area() == 0 {
            return Err(Error::Degenerate(format!(
                "{} is empty or mis-sized",
                mask_path.display()
            )));
        }
        views.push(View { rgba, mask, camera });
    }
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ObjectData { id, gaussians, views })
}

/// Loads every object listed in the manifest, in manifest order.
pub fn load_dataset(root: &Path) -> Result<Vec<ObjectData>> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::parse(&path, 0, format!("expected header {MANIFEST_HEADER:?}")));
    }
    let mut objects = Vec::new();
    let mut offset = MANIFEST_HEADER.len() + 1;
    for line in lines {
        if let Some(name) = line.strip_prefix("object ") {
            let name = name.trim();
            if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
                return Err(Error::parse(&path, offset, format!("bad object name {name:?}")));
            }
            objects.push(load_object(&root.join(name))?);
        }
        offset += line.len() + 1;
    }
    if objects.is_empty() {
        return Err(Error::Degenerate(format!("{} lists no objects", path.display())));
    }
    Ok(objects)
}

/// The view with the largest mask area; ties go to the lowest index.
pub fn select_reference_view<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Result<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, m) in masks.into_iter().enumerate() {
        let area = m.area();
        if best.is_none_or(|(_, a)| area > a) {
            best = Some((i, area));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Usage("reference selection needs at least one view".into()))
}

/// `count` indices spread evenly over `0..total`; `count == 0` or
/// `count >= total` selects everything.
pub fn spread_indices(total: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= total {
        return (0..total).collect();
    }
    (0..count).map(|i| i * total / count).collect()
}

/// Reference plus up to `count - 1` distinct other views drawn without
/// replacement from `pool`.
pub fn sample_views(pool: &[usize], reference: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut others: Vec<usize> = pool.iter().copied().filter(|&v| v != reference).collect();
    let take = count.saturating_sub(1).min(others.len());
    for i in 0..take {
        let j = rng.random_range(i..others.len());
        others.swap(i, j);
    }
    let mut out = vec![reference];
    out.extend_from_slice(&others[..take]);
    out
}
