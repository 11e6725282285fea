//! Amortized multi-view training loop with clipping, logging, periodic
//! checkpoints and bit-exact resume.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gamba_autodiff::{clip_grad_norm, AdamW, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::constraints::{dist_loss, mask_to_radial_polygon, RadialPolygon};
use crate::data::{
    load_dataset, mask_image, sample_views, select_reference_view, spread_indices, ObjectData, TrainSample,
};
use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::losses::{random_background, sample_background, total_loss};
use crate::metrics::psnr_from_mse;
use crate::model::GambaModel;
use crate::render::{project_centers, render};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.bin";
const CSV_HEADER: &str = "step,loss,rgb,mask,lpips,dist,psnr,grad_norm";

/// Sampling stream of the training generator; stream 0 initializes weights.
const SAMPLER_STREAM: u64 = 1;

/// Per-view supervision targets, computed once.
struct Target {
    rgb: ImageBuf,
    alpha: ImageBuf,
    mask: Tensor<f32>,
    polygon: RadialPolygon,
}

struct Prepared {
    object: ObjectData,
    pool: Vec<usize>,
    reference: usize,
    input: Tensor<f32>,
    targets: Vec<Option<Target>>,
}

impl Prepared {
    fn new(object: ObjectData, cfg: &Config) -> Result<Self> {
        let pool = spread_indices(object.views.len(), cfg.train_views);
        let reference = pool[select_reference_view(pool.iter().map(|&v| &object.views[v].mask))?];
        let input = object.views[reference].over_white().to_tensor();
        let mut targets: Vec<Option<Target>> = (0..object.views.len()).map(|_| None).collect();
        for &v in &pool {
            let view = &object.views[v];
            targets[v] = Some(Target {
                rgb: view.rgb(),
                alpha: view.alpha(),
                mask: mask_image(&view.mask).to_tensor(),
                polygon: mask_to_radial_polygon(&view.mask, cfg.n_angles)?,
            });
        }
        Ok(Self {
            object,
            pool,
            reference,
            input,
            targets,
        })
    }
}

/// Scalar summary of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Zero-based index of the step that produced this report.
    pub step: u64,
    pub loss: f64,
    pub rgb: f64,
    pub mask: f64,
    pub lpips: f64,
    pub dist: f64,
    /// Mean PSNR of the supervised views against their composited targets.
    pub psnr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.4},{:.6e}",
            self.step, self.loss, self.rgb, self.mask, self.lpips, self.dist, self.psnr, self.grad_norm
        )
    }
}

pub struct Trainer {
    pub config: Config,
    pub model: GambaModel<f32>,
    pub opt: AdamW<f32>,
    pub rng: ChaCha8Rng,
    /// Completed steps.
    pub step: u64,
    objects: Vec<Prepared>,
}

impl Trainer {
    pub fn new(config: &Config, objects: Vec<ObjectData>) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = GambaModel::new(config, &mut init)?;
        let opt = AdamW::new(config.optimizer(), &model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        Self::assemble(config, model, opt, rng, 0, objects)
    }

    /// Continues from `ckpt`. The model shape comes from the checkpoint and
    /// must agree with `config`; schedule, paths and optimizer settings come
    /// from `config`.
    pub fn resume(config: &Config, ckpt: &Checkpoint, objects: Vec<ObjectData>) -> Result<Self> {
        config.validate()?;
        let same = |a: &Config| (a.backbone(), a.decoder());
        if same(config) != same(&ckpt.config) {
            return Err(Error::Config("model shape differs from the checkpoint's".into()));
        }
        let (model, mut opt, rng) = ckpt.restore()?;
        opt.config = config.optimizer();
        Self::assemble(config, model, opt, rng, ckpt.step, objects)
    }

    fn assemble(
        config: &Config,
        model: GambaModel<f32>,
        opt: AdamW<f32>,
        rng: ChaCha8Rng,
        step: u64,
        objects: Vec<ObjectData>,
    ) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::Degenerate("no training objects".into()));
        }
        let size = config.image_size;
        for o in &objects {
            if let Some(v) = o.views.iter().find(|v| (v.rgba.height, v.rgba.width) != (size, size)) {
                return Err(Error::Config(format!(
                    "object {} has {}x{} views, configured image_size is {size}",
                    o.id, v.rgba.height, v.rgba.width
                )));
            }
        }
        let objects = objects
            .into_iter()
            .map(|o| Prepared::new(o, config))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            model,
            opt,
            rng,
            step,
            objects,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.step, &self.rng, &self.model, &self.opt)
    }

    /// The reference view and training pool of object `i`.
    pub fn sample(&self, i: usize) -> TrainSample<'_> {
        let p = &self.objects[i];
        TrainSample {
            object: &p.object,
            reference: p.reference,
            views: &p.pool,
        }
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    /// One optimizer step. A non-finite value anywhere aborts with a
    /// numerical error after dumping the batch to the run directory.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let mut batch = Vec::with_capacity(self.config.batch_objects);
        for _ in 0..self.config.batch_objects {
            let i = self.rng.random_range(0..self.objects.len());
            let p = &self.objects[i];
            let views = sample_views(&p.pool, p.reference, self.config.views_per_step, &mut self.rng);
            let backgrounds: Vec<[f64; 3]> = views.iter().map(|_| sample_background(&mut self.rng)).collect();
            batch.push((i, views, backgrounds));
        }
        match self.run_batch(&batch) {
            Ok(report) => Ok(report),
            Err(e) if e.exit_code() == 3 => {
                let dump = self.dump_batch(&batch, &e);
                Err(Error::Numerical(match dump {
                    Ok(path) => format!("{e} at step {}; batch written to {}", self.step, path.display()),
                    Err(d) => format!("{e} at step {}; batch dump failed: {d}", self.step),
                }))
            }
            Err(e) => Err(e),
        }
    }

    fn run_batch(&mut self, batch: &[(usize, Vec<usize>, Vec<[f64; 3]>)]) -> Result<StepReport> {
        let weights = self.config.loss_weights();
        let use_dist = weights.dist > 0.0 && self.step < weights.dist_warmup_steps;
        let mut total: Option<Tensor<f32>> = None;
        let mut report = StepReport {
            step: self.step,
            loss: 0.0,
            rgb: 0.0,
            mask: 0.0,
            lpips: 0.0,
            dist: 0.0,
            psnr: 0.0,
            grad_norm: 0.0,
        };
        let mut count = 0usize;
        for (i, views, backgrounds) in batch {
            let p = &self.objects[*i];
            let reference = &p.object.views[p.reference];
            let g = self.model.forward(&p.input, &reference.camera)?;
            for (&v, bg) in views.iter().zip(backgrounds) {
                let view = &p.object.views[v];
                let target = p.targets[v].as_ref().expect("pool views have targets");
                let gt = random_background(&target.rgb, &target.alpha, *bg)?.to_tensor();
                let bg_t = Tensor::new(bg.map(|c| c as f32).to_vec(), &[3])?;
                let pred = render(&g, &view.camera, &bg_t)?;
                let dist = if use_dist {
                    let (centers, visible) = project_centers(&g.position, &view.camera)?;
                    Some(dist_loss(&centers, &visible, &view.mask, &target.polygon)?)
                } else {
                    None
                };
                let terms = total_loss(&pred, &gt, &target.mask, dist.as_ref(), &weights, self.step, None)?;
                report.rgb += terms.rgb;
                report.mask += terms.mask;
                report.lpips += terms.lpips;
                report.dist += terms.dist;
                report.psnr += psnr_from_mse(terms.rgb);
                total = Some(match total {
                    None => terms.total,
                    Some(t) => t.add(&terms.total)?,
                });
                count += 1;
            }
        }
        let inv = 1.0 / count as f64;
        let loss = total.expect("at least one view").scale(inv as f32)?;
        report.loss = f64::from(loss.item()?);
        for v in [
            &mut report.rgb,
            &mut report.mask,
            &mut report.lpips,
            &mut report.dist,
            &mut report.psnr,
        ] {
            *v *= inv;
        }
        if !report.loss.is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }

        let params = self.model.params();
        params.iter().for_each(Tensor::zero_grad);
        loss.backward()?;
        let norm = clip_grad_norm(&params, self.config.clip_norm as f32);
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite gradient norm".into()));
        }
        report.grad_norm = f64::from(norm);
        self.opt.step(&params)?;
        self.step += 1;
        Ok(report)
    }

    fn dump_batch(&self, batch: &[(usize, Vec<usize>, Vec<[f64; 3]>)], err: &Error) -> Result<PathBuf> {
        let dir = Path::new(&self.config.run_dir).join(format!("nan_step_{:06}", self.step));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut info = format!("step = {}\nerror = {err}\n", self.step);
        for (k, (i, views, backgrounds)) in batch.iter().enumerate() {
            let p = &self.objects[*i];
            writeln!(
                info,
                "object {k} = {} reference {} views {views:?}",
                p.object.id, p.reference
            )
            .expect("string write");
            for (v, bg) in views.iter().zip(backgrounds) {
                writeln!(info, "  view {v} background {bg:?}").expect("string write");
            }
            p.object.views[p.reference]
                .over_white()
                .write_raw(&dir.join(format!("input_{k}.raw")))?;
        }
        let path = dir.join("batch.txt");
        std::fs::write(&path, info).map_err(|e| Error::io(&path, e))?;
        self.checkpoint().write(&dir.join("state.bin"))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub reports: Vec<StepReport>,
    pub final_checkpoint: PathBuf,
    pub seconds: f64,
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    let exists = path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if !append || !exists {
        writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    Ok(file)
}

/// Runs `trainer` until `config.steps` completed steps, logging to and
/// checkpointing into the run directory.
pub fn run(trainer: &mut Trainer) -> Result<TrainSummary> {
    let cfg = trainer.config.clone();
    let run_dir = PathBuf::from(&cfg.run_dir);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let log_path = run_dir.join(METRICS_FILE);
    let mut log = open_log(&log_path, trainer.step > 0)?;
    let start = Instant::now();
    let mut reports = Vec::new();
    while trainer.step < cfg.steps {
        let r = trainer.train_step()?;
        let done = trainer.step;
        if r.step % cfg.log_every == 0 || done == cfg.steps {
            writeln!(log, "{}", r.csv_row()).map_err(|e| Error::io(&log_path, e))?;
            log::info!(
                "step {} loss {:.5} rgb {:.5} psnr {:.2} |g| {:.3}",
                r.step,
                r.loss,
                r.rgb,
                r.psnr,
                r.grad_norm
            );
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            trainer
                .checkpoint()
                .write(&run_dir.join(format!("checkpoint_{done:06}.bin")))?;
        }
        reports.push(r);
    }
    let final_checkpoint = run_dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint().write(&final_checkpoint)?;
    Ok(TrainSummary {
        reports,
        final_checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loads the dataset named by `config`, optionally resumes, and trains.
pub fn train(config: &Config, resume: Option<&Path>) -> Result<TrainSummary> {
    let objects = load_dataset(Path::new(&config.data_dir))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, &Checkpoint::read(path)?, objects)?,
        None => Trainer::new(config, objects)?,
    };
    run(&mut trainer)
}
