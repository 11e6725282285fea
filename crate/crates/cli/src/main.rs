//! `gamba`: dataset generation, training, inference, rendering, evaluation
//! and self-checks from the command line.
//!
//! Every subcommand accepts `--config <file>` plus one flag per
//! configuration key (`--image-size 64`, `--seed 3`, ...); flags override
//! the file. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use gamba_autodiff::gradcheck::GradCheckOptions;
use gamba_core::bench::{median_scan_time, ScanInputs};
use gamba_core::checkpoint::Checkpoint;
use gamba_core::config::Config;
use gamba_core::data::{gen_synthetic_dataset, load_dataset};
use gamba_core::image::ImageBuf;
use gamba_core::infer::{evaluate_object, infer_file, read_image, render_views, WHITE};
use gamba_core::metrics::evaluate;
use gamba_core::scenes::{random_scene, render_gradcheck, weighted_mean};
use gamba_core::train::train;
use gamba_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRADCHECK_TOLERANCE: f64 = 1e-3;

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn with_config_flags(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value configuration file; flags override it"),
    );
    Config::KEYS.iter().fold(cmd, |cmd, (key, doc)| {
        cmd.arg(
            Arg::new(*key)
                .long(flag(key))
                .value_name("VALUE")
                .help(*doc)
                .help_heading("Configuration"),
        )
    })
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .help(help)
        .required(required)
        .value_parser(clap::value_parser!(PathBuf))
}

fn cli() -> Command {
    let sub = |name: &'static str, about: &'static str| with_config_flags(Command::new(name).about(about));
    Command::new("gamba")
        .about("Single-view 3D Gaussian splat reconstruction")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("More log output on stderr"),
        )
        .subcommand(
            sub("gen-data", "Generate a synthetic multi-view dataset into data_dir").arg(path_arg(
                "out",
                "Output directory (defaults to data_dir)",
                false,
            )),
        )
        .subcommand(
            sub("train", "Train on data_dir, writing logs and checkpoints to run_dir").arg(path_arg(
                "resume",
                "Checkpoint to continue from",
                false,
            )),
        )
        .subcommand(
            sub("infer", "Predict splats for one image")
                .arg(path_arg("checkpoint", "Trained checkpoint", true))
                .arg(path_arg("image", "RGBA or RGB input image (.png or .raw)", true))
                .arg(path_arg(
                    "camera",
                    "Camera file with one camera; defaults to the normalized pose",
                    false,
                ))
                .arg(path_arg("out", "Output splat file", true)),
        )
        .subcommand(
            sub("render", "Render a splat file from every camera of a camera file")
                .arg(path_arg("gaussians", "Splat file", true))
                .arg(path_arg("cameras", "Camera file", true))
                .arg(path_arg("out", "Output directory", true)),
        )
        .subcommand(
            sub(
                "eval",
                "PSNR and SSIM of predicted images, or of a checkpoint on data_dir",
            )
            .arg(path_arg("pred", "Directory of predicted view_NNN images", false))
            .arg(path_arg("gt", "Directory of ground-truth view_NNN images", false))
            .arg(path_arg(
                "checkpoint",
                "Evaluate this checkpoint on every object of data_dir",
                false,
            ))
            .arg(path_arg("csv", "Metrics CSV (defaults to run_dir/eval.csv)", false)),
        )
        .subcommand(
            sub(
                "gradcheck",
                "Finite-difference check of the renderer and the selective scan",
            )
            .arg(
                Arg::new("scenes")
                    .long("scenes")
                    .value_name("N")
                    .default_value("20")
                    .value_parser(clap::value_parser!(usize))
                    .help("Random renderer scenes to check"),
            ),
        )
        .subcommand(
            sub("bench-scan", "Time the selective scan at several sequence lengths")
                .arg(
                    Arg::new("lengths")
                        .long("lengths")
                        .value_name("L,L,...")
                        .default_value("1024,2048,4096")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(usize))
                        .help("Sequence lengths"),
                )
                .arg(
                    Arg::new("runs")
                        .long("runs")
                        .value_name("N")
                        .default_value("5")
                        .value_parser(clap::value_parser!(usize))
                        .help("Timed runs per length; the median is reported"),
                ),
        )
}

fn load_config(m: &ArgMatches) -> Result<Config> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => Config::load(Path::new(path))?,
        None => Config::default(),
    };
    for (key, _) in Config::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| Error::Usage(format!("--{}: {e}", flag(key))))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a Path> {
    m.get_one::<PathBuf>(name).map(PathBuf::as_path)
}

fn required<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    path(m, name).expect("clap enforces required arguments")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `view_*.raw` files of `dir` in name order, or `view_*.png` if there
/// are no raw files; RGBA images are composited over white.
fn read_views(dir: &Path) -> Result<Vec<ImageBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(dir, err))?;
        names.push(e.file_name().to_string_lossy().into_owned());
    }
    names.retain(|n| n.starts_with("view_"));
    names.sort();
    let pick = |ext: &str| names.iter().filter(|n| n.ends_with(ext)).cloned().collect::<Vec<_>>();
    let chosen = Some(pick(".raw"))
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| pick(".png"));
    chosen
        .iter()
        .map(|n| {
            let im = read_image(&dir.join(n))?;
            Ok(if im.channels == 4 {
                gamba_core::data::over_color(&im, WHITE)
            } else {
                im
            })
        })
        .collect()
}

fn gen_data(m: &ArgMatches, cfg: &Config) -> Result<()> {
    let out = path(m, "out").map_or_else(|| PathBuf::from(&cfg.data_dir), Path::to_path_buf);
    let dirs = gen_synthetic_dataset(&out, cfg)?;
    println!(
        "wrote {} objects x {} views to {}",
        dirs.len(),
        cfg.views_per_object,
        out.display()
    );
    Ok(())
}

fn run_train(m: &ArgMatches, cfg: &Config) -> Result<()> {
    let summary = train(cfg, path(m, "resume"))?;
    match summary.reports.last() {
        Some(r) => println!(
            "trained to step {}: loss {:.5}, view PSNR {:.2} dB, {:.1} s; checkpoint {}",
            r.step + 1,
            r.loss,
            r.psnr,
            summary.seconds,
            summary.final_checkpoint.display()
        ),
        None => println!("nothing to do; checkpoint {}", summary.final_checkpoint.display()),
    }
    Ok(())
}

fn run_infer(m: &ArgMatches) -> Result<()> {
    let r = infer_file(
        required(m, "checkpoint"),
        required(m, "image"),
        path(m, "camera"),
        required(m, "out"),
    )?;
    println!(
        "{} splats in {:.1} ms -> {}",
        r.splats,
        r.seconds * 1e3,
        r.output.display()
    );
    Ok(())
}

fn run_render(m: &ArgMatches) -> Result<()> {
    let n = render_views(required(m, "gaussians"), required(m, "cameras"), required(m, "out"))?;
    println!("rendered {n} views to {}", required(m, "out").display());
    Ok(())
}

fn run_eval(m: &ArgMatches, cfg: &Config) -> Result<()> {
    let csv_path = path(m, "csv").map_or_else(|| Path::new(&cfg.run_dir).join("eval.csv"), Path::to_path_buf);
    if let Some(ckpt) = path(m, "checkpoint") {
        let (model, _, _) = Checkpoint::read(ckpt)?.restore()?;
        let mut csv = String::from("object,split,view,psnr,ssim\n");
        for object in load_dataset(Path::new(&cfg.data_dir))? {
            let split = evaluate_object(&model, cfg, &object)?;
            println!("{} reference view {}", object.id, split.reference);
            for (name, report) in [("train", Some(&split.train)), ("held_out", split.held_out.as_ref())] {
                let Some(report) = report else { continue };
                println!("  {name}: {}", report.summary());
                for (i, v) in report.views.iter().enumerate() {
                    csv.push_str(&format!("{},{name},{i},{:.6},{:.6}\n", object.id, v.psnr, v.ssim));
                }
            }
        }
        return write_text(&csv_path, &csv);
    }
    let (Some(pred), Some(gt)) = (path(m, "pred"), path(m, "gt")) else {
        return Err(Error::Usage("eval needs --pred and --gt, or --checkpoint".into()));
    };
    let report = evaluate(&read_views(pred)?, &read_views(gt)?)?;
    println!("{}", report.summary());
    write_text(&csv_path, &report.to_csv())
}

fn run_gradcheck(m: &ArgMatches, cfg: &Config) -> Result<()> {
    let scenes = *m.get_one::<usize>("scenes").expect("has default");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for i in 0..scenes {
        let scene = random_scene(&mut rng, 8, 16, true);
        let report = render_gradcheck(&scene, GradCheckOptions::default())?;
        log::info!(
            "scene {i}: {} splats, max rel err {:.3e}",
            scene.splats.len(),
            report.max_rel_err
        );
        worst = worst.max(report.max_rel_err);
    }
    println!("renderer: {scenes} scenes, max rel err {worst:.3e}");
    let scan = ScanInputs::<f64>::random(24, 4, 3, true, &mut rng);
    let report = gamba_autodiff::gradcheck::check_gradients(
        &scan.as_vec(),
        |t| {
            let y = gamba_core::ssm::selective_scan_kernel(&t[0], &t[1], &t[2], &t[3], &t[4], &t[5])
                .map_err(|e| gamba_autodiff::Error::Usage(e.to_string()))?;
            weighted_mean(&y, 5)
        },
        GradCheckOptions::default(),
    )?;
    println!("selective scan: max rel err {:.3e}", report.max_rel_err);
    let worst = worst.max(report.max_rel_err);
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Error::Numerical(format!(
            "gradient mismatch {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn run_bench(m: &ArgMatches, cfg: &Config) -> Result<()> {
    let lengths: Vec<usize> = m.get_many::<usize>("lengths").expect("has default").copied().collect();
    let runs = *m.get_one::<usize>("runs").expect("has default");
    let d_inner = cfg.expand * cfg.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    println!("d_inner {d_inner}, d_state {}, median of {runs} runs", cfg.d_state);
    let mut prev: Option<f64> = None;
    for len in lengths {
        let t = median_scan_time(len, d_inner, cfg.d_state, runs, &mut rng)?.as_secs_f64();
        let ratio = prev.map_or(String::new(), |p| format!("  ratio {:.3}", t / p));
        println!("L {len:>6}: {:>9.3} ms{ratio}", t * 1e3);
        prev = Some(t);
    }
    Ok(())
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = load_config(sub)?;
    match name {
        "gen-data" => gen_data(sub, &cfg),
        "train" => run_train(sub, &cfg),
        "infer" => run_infer(sub),
        "render" => run_render(sub),
        "eval" => run_eval(sub, &cfg),
        "gradcheck" => run_gradcheck(sub, &cfg),
        "bench-scan" => run_bench(sub, &cfg),
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
