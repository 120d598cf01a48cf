//! `trivol`: scene generation, training, rendering, evaluation,
//! gradient checks and decoder benchmarks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use trivol::alloc_track::TrackingAllocator;
use trivol::bench::{sweep, BenchConfig, CSV_HEADER};
use trivol::eval::{load_train_scene, render_and_score, select_views, EVAL_HEADER};
use trivol::model::{pixel_gradcheck, TriVolModel};
use trivol::render::{Camera, RenderSettings};
use trivol::scene::{make_benchmark, BenchmarkSpec, SceneData, BENCHMARKS};
use trivol::tensor::gradcheck::GradCheckConfig;
use trivol::train::{TrainConfig, Trainer};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

/// Exit status for a missing input file.
const EXIT_MISSING: u8 = 2;

#[derive(Parser)]
#[command(name = "trivol", version, about = "Point cloud rendering with triple slim feature volumes")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark scene directory.
    MakeScene {
        /// One of sphere, checker-cube, two-object.
        #[arg(long, default_value = "sphere")]
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Number of ring views.
        #[arg(long, default_value_t = 9)]
        views: usize,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 10_000)]
        points: usize,
    },
    /// Train on one or more scene directories.
    Train {
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Receives checkpoint.triv and train_log.csv.
        #[arg(long)]
        out: PathBuf,
        /// Training views, e.g. 0-7 or 0,2,4 (default: all).
        #[arg(long, value_parser = parse_list)]
        views: Option<IndexList>,
    },
    /// Render views of a scene with a trained checkpoint.
    Render {
        #[command(flatten)]
        common: ViewArgs,
        /// Override the image size; intrinsics are rescaled.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
    },
    /// Render views and score them against the ground truth.
    Eval {
        #[command(flatten)]
        common: ViewArgs,
    },
    /// Finite-difference check of end-to-end pixel gradients.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Cell counts, peak memory and time of the slim-volume decoders
    /// against a dense UNet.
    Bench {
        /// Slab counts, e.g. 4,8,16 or 4..16 (powers of two).
        #[arg(long, default_value = "4..16", value_parser = parse_sweep)]
        groups: IndexList,
        /// Grid resolutions, e.g. 32..64.
        #[arg(long, default_value = "32..64", value_parser = parse_sweep)]
        resolutions: IndexList,
        /// Only report cell counts.
        #[arg(long)]
        cells_only: bool,
        #[arg(long, default_value_t = 16)]
        base_width: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Sample counts are read from here (default: training defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_list)]
    views: Option<IndexList>,
}

#[derive(Clone, Debug, PartialEq)]
struct IndexList(Vec<usize>);

impl std::ops::Deref for IndexList {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

/// `0,2,5-7` style index lists.
fn parse_list(s: &str) -> Result<IndexList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad index {t:?} in {s:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("empty view list".into());
    }
    Ok(IndexList(out))
}

/// A comma list, or `a..b` for the powers of two from `a` to `b`.
fn parse_sweep(s: &str) -> Result<IndexList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
        let b: usize = b.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
        if a == 0 || a > b {
            return Err(format!("bad range {s:?}"));
        }
        return Ok(IndexList(
            std::iter::successors(Some(a), |v| Some(v * 2)).take_while(|&v| v <= b).collect(),
        ));
    }
    parse_list(s)
}

/// A required input that does not exist; reported with exit status 2.
#[derive(Debug)]
struct Missing(PathBuf, &'static str);

impl std::fmt::Display for Missing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} not found: {}", self.1, self.0.display())
    }
}

impl std::error::Error for Missing {}

fn require(path: &Path, what: &'static str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(Missing(path.to_path_buf(), what).into());
    }
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            require(p, "config file")?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn train(
    scenes: &[PathBuf],
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    out: &Path,
    views: Option<&[usize]>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let cfg = load_config(config, seed)?;
    let mut loaded = Vec::with_capacity(scenes.len());
    for dir in scenes {
        require(dir, "scene directory")?;
        loaded.push(load_train_scene(dir, &cfg.model, views).with_context(|| format!("loading {}", dir.display()))?);
    }
    let mut trainer = match checkpoint {
        Some(path) => {
            require(path, "checkpoint")?;
            Trainer::resume(cfg, loaded, path)?
        }
        None => Trainer::new(cfg, loaded)?,
    };
    create_dir(out)?;
    let log_path = out.join("train_log.csv");
    let log = if trainer.step_count() > 0 {
        std::fs::OpenOptions::new().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("cannot open {}", log_path.display()))?;
    let mut log = BufWriter::new(log);
    let ckpt = out.join("checkpoint.triv");
    let records = trainer.run(&mut log, Some(&ckpt))?;
    log.flush()?;
    if let Some(last) = records.last() {
        eprintln!(
            "trained {} steps; final loss {:.6} ({:.2} dB); checkpoint {}",
            records.len(),
            last.loss,
            last.psnr,
            ckpt.display()
        );
    }
    Ok(())
}

fn rescale(cam: &Camera, size: Option<(usize, usize)>) -> anyhow::Result<Camera> {
    let Some((w, h)) = size else {
        return Ok(cam.clone());
    };
    let (sx, sy) = (w as f64 / cam.width as f64, h as f64 / cam.height as f64);
    let mut k = cam.intrinsics;
    for c in 0..3 {
        k[0][c] *= sx;
        k[1][c] *= sy;
    }
    Ok(Camera::new(k, cam.rotation, cam.translation, w, h)?)
}

fn render_views(args: &ViewArgs, size: Option<(usize, usize)>, score: bool, seed: Option<u64>) -> anyhow::Result<()> {
    require(&args.checkpoint, "checkpoint")?;
    require(&args.scene, "scene directory")?;
    let cfg = load_config(args.config.as_deref(), seed)?;
    let model = TriVolModel::load(&args.checkpoint)?;
    let data = SceneData::load(&args.scene)?;
    let prepared = model.prepare(&data.points)?;
    let views = select_views(args.views.as_deref(), data.cameras.len())?;
    let cams = views.iter().map(|&v| rescale(&data.cameras[v], size)).collect::<anyhow::Result<Vec<_>>>()?;
    let targets: Vec<_> = views
        .iter()
        .zip(&cams)
        .map(|(&v, cam)| (v, cam, score.then_some(&data.images[v])))
        .collect();
    let settings = RenderSettings {
        jitter: false,
        ..cfg.render_settings()
    };
    let results = render_and_score(&model, &prepared, &targets, &settings, cfg.seed)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
    }
    let mut report = String::new();
    if score {
        report.push_str(EVAL_HEADER);
        report.push('\n');
    }
    for (&v, (img, s)) in views.iter().zip(&results) {
        if let Some(out) = &args.out {
            img.save_ppm(out.join(format!("view_{v:03}.ppm")))?;
        }
        if let Some(s) = s {
            report.push_str(&s.csv_line());
            report.push('\n');
        }
    }
    if score {
        print!("{report}");
        if let Some(out) = &args.out {
            std::fs::write(out.join("eval.csv"), &report)?;
        }
    } else if args.out.is_none() {
        bail!("render needs --out to write images");
    }
    Ok(())
}

fn gradcheck(samples: usize, step: f64, tolerance: f64, seed: u64) -> anyhow::Result<bool> {
    let report = pixel_gradcheck(
        seed,
        samples,
        &GradCheckConfig {
            step,
            tolerance,
            samples,
        },
    )?;
    println!("input,index,analytic,numeric,error");
    for p in &report.probes {
        println!("{},{},{},{},{}", p.input, p.index, p.analytic, p.numeric, p.error);
    }
    let ok = report.passed();
    eprintln!(
        "{} probes, max relative error {:.3e} (tolerance {tolerance:e}): {}",
        report.probes.len(),
        report.max_error(),
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    groups: &[usize],
    resolutions: &[usize],
    cells_only: bool,
    base_width: usize,
    depth: usize,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = BenchConfig {
        base_width,
        depth,
        seed,
        ..BenchConfig::default()
    };
    let rows = sweep(resolutions, groups, &cfg, !cells_only)?;
    let mut text = format!("{CSV_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = out {
        create_dir(out)?;
        std::fs::write(out.join("bench.csv"), text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    trivol::threads::init_from_env()?;
    let seed = cli.seed;
    match cli.command {
        Command::MakeScene {
            name,
            out,
            views,
            size,
            points,
        } => {
            if !BENCHMARKS.contains(&name.as_str()) {
                bail!("unknown benchmark {name:?}; choose one of {}", BENCHMARKS.join(", "));
            }
            let spec = BenchmarkSpec {
                views,
                width: size.0,
                height: size.1,
                points,
                seed: seed.unwrap_or(0),
            };
            make_benchmark(&name, &spec, &out)?;
        }
        Command::Train {
            scenes,
            config,
            checkpoint,
            out,
            views,
        } => train(&scenes, config.as_deref(), checkpoint.as_deref(), &out, views.as_deref(), seed)?,
        Command::Render { common, size } => render_views(&common, size, false, seed)?,
        Command::Eval { common } => render_views(&common, None, true, seed)?,
        Command::Gradcheck {
            samples,
            step,
            tolerance,
        } => return gradcheck(samples, step, tolerance, seed.unwrap_or(0)),
        Command::Bench {
            groups,
            resolutions,
            cells_only,
            base_width,
            depth,
            out,
        } => bench(&groups, &resolutions, cells_only, base_width, depth, seed.unwrap_or(0), out.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Missing>().is_some() {
                ExitCode::from(EXIT_MISSING)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
