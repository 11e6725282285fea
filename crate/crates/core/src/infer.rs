//! Single-pass inference, re-rendering of exported splats, and evaluation
//! of a predicted set against posed ground truth.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gamba_autodiff::no_grad;

use crate::camera::{read_cameras, Camera};
use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::{over_color, select_reference_view, spread_indices, ObjectData, View};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::image::ImageBuf;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::GambaModel;
use crate::render::render_set;

/// Background of model inputs and of evaluation composites.
pub const WHITE: [f32; 3] = [1.0; 3];

/// Reads a `.raw` float image or an 8-bit PNG.
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => ImageBuf::read_raw(path),
        _ => ImageBuf::read_png(path),
    }
}

/// RGB input as fed to the model: RGBA (premultiplied) is composited over
/// white, RGB passes through.
pub fn model_input(image: &ImageBuf, size: usize) -> Result<ImageBuf> {
    if (image.height, image.width) != (size, size) {
        return Err(Error::Config(format!(
            "input is {}x{}, the model expects {size}x{size}",
            image.height, image.width
        )));
    }
    match image.channels {
        3 => Ok(image.clone()),
        4 => Ok(over_color(image, WHITE)),
        c => Err(Error::Config(format!("input must have 3 or 4 channels, got {c}"))),
    }
}

/// One forward pass; `camera` defaults to the normalized reference pose.
pub fn infer(model: &GambaModel<f32>, image: &ImageBuf, camera: Option<&Camera>) -> Result<(GaussianSet, Duration)> {
    let size = model.backbone.config.image_size;
    let input = model_input(image, size)?.to_tensor();
    let normalized = Camera::normalized(size as u32, size as u32);
    let cam = camera.unwrap_or(&normalized);
    let start = Instant::now();
    let set = no_grad(|| model.forward(&input, cam))?.to_set();
    Ok((set, start.elapsed()))
}

#[derive(Debug, Clone)]
pub struct InferReport {
    pub splats: usize,
    pub seconds: f64,
    pub output: PathBuf,
}

pub fn infer_file(checkpoint: &Path, image: &Path, camera: Option<&Path>, output: &Path) -> Result<InferReport> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let (model, _, _) = ckpt.restore()?;
    let cam = match camera {
        Some(p) => {
            let cams = read_cameras(p)?;
            let [c] = cams.as_slice() else {
                return Err(Error::Usage(format!("{} must hold exactly one camera", p.display())));
            };
            Some(*c)
        }
        None => None,
    };
    let (set, elapsed) = infer(&model, &read_image(image)?, cam.as_ref())?;
    set.validate(ckpt.config.s_max)?;
    set.write(output)?;
    Ok(InferReport {
        splats: set.len(),
        seconds: elapsed.as_secs_f64(),
        output: output.to_path_buf(),
    })
}

/// Renders `set` from every camera into `out_dir` as `view_NNN.png` and
/// `view_NNN.raw` (premultiplied RGBA over black). Returns the count.
pub fn render_views(gaussians: &Path, cameras: &Path, out_dir: &Path) -> Result<usize> {
    let set = GaussianSet::read(gaussians)?;
    let cams = read_cameras(cameras)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, cam) in cams.iter().enumerate() {
        let im = render_set(&set, cam, [0.0; 3]);
        im.write_png(&out_dir.join(format!("view_{i:03}.png")))?;
        im.write_raw(&out_dir.join(format!("view_{i:03}.raw")))?;
    }
    Ok(cams.len())
}

/// PSNR and SSIM of `set` rendered at each view, both sides composited
/// over white.
pub fn evaluate_views<'a>(set: &GaussianSet, views: impl IntoIterator<Item = &'a View>) -> Result<MetricsReport> {
    let (pred, gt): (Vec<_>, Vec<_>) = views
        .into_iter()
        .map(|v| (over_color(&render_set(set, &v.camera, [0.0; 3]), WHITE), v.over_white()))
        .unzip();
    evaluate(&pred, &gt)
}

/// Metrics of one object split into the training pool and the remaining
/// (held-out) views.
#[derive(Debug, Clone)]
pub struct SplitMetrics {
    pub reference: usize,
    pub train: MetricsReport,
    pub held_out: Option<MetricsReport>,
}

/// Predicts `object` from its reference view, chosen exactly as in
/// training, and scores every view.
pub fn evaluate_object(model: &GambaModel<f32>, cfg: &Config, object: &ObjectData) -> Result<SplitMetrics> {
    let pool = spread_indices(object.views.len(), cfg.train_views);
    let reference = pool[select_reference_view(pool.iter().map(|&v| &object.views[v].mask))?];
    let view = &object.views[reference];
    let (set, _) = infer(model, &view.rgba, Some(&view.camera))?;
    let train = evaluate_views(&set, pool.iter().map(|&v| &object.views[v]))?;
    let rest: Vec<&View> = (0..object.views.len())
        .filter(|v| !pool.contains(v))
        .map(|v| &object.views[v])
        .collect();
    let held_out = if rest.is_empty() {
        None
    } else {
        Some(evaluate_views(&set, rest)?)
    };
    Ok(SplitMetrics {
        reference,
        train,
        held_out,
    })
}
