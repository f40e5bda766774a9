use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use gsdiff::augmentation::augmentation_step;
use gsdiff::geometry::{interpolate_pose_spline, Camera, Pose};
use gsdiff::io::synthetic::{arc_cameras, random_gaussians, synthetic_dataset, SyntheticOptions};
use gsdiff::io::{load_dataset, psnr, read_camera_file, save_dataset, ssim, write_image};
use gsdiff::losses::MsSsimDistance;
use gsdiff::trainer::{
    load_checkpoint, oracle_from_spec, save_checkpoint, save_ground_truth, TrainConfig, Trainer, GROUND_TRUTH_FILE,
};
use gsdiff::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gsdiff",
    version,
    about = "Gaussian splatting with generative view augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a JSON-lines metrics log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// identity | gt | file:PATH; augmentation is off without one.
        #[arg(long)]
        oracle: Option<String>,
        /// Continue from a checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render PNG frames along a spline through the poses of a camera file.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame count; defaults to one per pose.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        appearance: usize,
    },
    /// Print PSNR/SSIM per held-out view (training views if none) as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write render|generated pairs for one augmentation round.
    AugmentPreview {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        oracle: String,
        #[arg(long, default_value = "preview")]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset and its ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        gaussians: usize,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 120.0)]
        arc: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated view indices to hold out.
        #[arg(long, value_delimiter = ',')]
        held_out: Vec<usize>,
        #[arg(long)]
        depth: bool,
    },
}

fn train(data: &Path, config: Option<&Path>, out: &Path, oracle: Option<&str>, resume: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(data)?;
    let mut trainer = match resume {
        Some(p) => load_checkpoint(p)?,
        None => {
            let cfg = match config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            Trainer::new(cfg, &dataset)?
        }
    };
    let oracle = oracle.map(|o| oracle_from_spec(o, data)).transpose()?;
    fs::create_dir_all(out)?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(out.join("metrics.jsonl"))?;
    let every = trainer.config.checkpoint_every;
    let total = trainer.config.iterations;
    trainer.run(&dataset.views, oracle.as_deref(), &MsSsimDistance, total, |b, t| {
        writeln!(log, "{}", serde_json::to_string(b)?)?;
        if every > 0 && b.iteration % every == 0 && b.iteration < total {
            save_checkpoint(t, &out.join(format!("checkpoint_{:06}.gsdf", b.iteration)))?;
        }
        if b.iteration % 100 == 0 {
            log::info!("iteration {} loss {:.5}", b.iteration, b.total);
        }
        Ok(())
    })?;
    save_checkpoint(&trainer, &out.join("checkpoint.gsdf"))
}

fn render_frames(ckpt: &Path, poses: &Path, out: &Path, frames: Option<usize>, appearance: usize) -> Result<()> {
    let trainer = load_checkpoint(ckpt)?;
    let cams = read_camera_file(poses)?;
    let Some((_, intrinsics, _)) = cams.first() else {
        return Err(Error::invalid("pose file is empty"));
    };
    let keys: Vec<Pose> = cams.iter().map(|c| c.2).collect();
    let n = frames.unwrap_or(keys.len());
    if n == 0 {
        return Err(Error::invalid("frame count must be positive"));
    }
    fs::create_dir_all(out)?;
    for i in 0..n {
        let pose = if keys.len() == 1 {
            keys[0]
        } else {
            let t = if n == 1 {
                0.0
            } else {
                i as f64 * (keys.len() - 1) as f64 / (n - 1) as f64
            };
            interpolate_pose_spline(&keys, t)?
        };
        let img = trainer.render(&Camera::new(*intrinsics, pose), appearance)?.color;
        write_image(&out.join(format!("frame_{i:04}.png")), &img)?;
    }
    Ok(())
}

fn db(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn eval(ckpt: &Path, data: &Path) -> Result<Value> {
    let trainer = load_checkpoint(ckpt)?;
    let dataset = load_dataset(data)?;
    let (split, views) = if dataset.test_views.is_empty() {
        ("train", &dataset.views)
    } else {
        ("test", &dataset.test_views)
    };
    let mut rows = Vec::new();
    let (mut sp, mut ss) = (0.0, 0.0);
    for v in views {
        let img = trainer.render(&v.camera(), v.appearance_id)?.color;
        let (p, s) = (psnr(&img, &v.image)?, ssim(&img, &v.image)?);
        sp += p;
        ss += s;
        rows.push(json!({"view": v.name, "psnr": db(p), "ssim": s}));
    }
    let n = views.len() as f64;
    Ok(json!({"split": split, "views": rows, "mean_psnr": db(sp / n), "mean_ssim": ss / n}))
}

fn augment_preview(ckpt: &Path, data: &Path, oracle: &str, out: &Path) -> Result<()> {
    let trainer = load_checkpoint(ckpt)?;
    let dataset = load_dataset(data)?;
    let oracle = oracle_from_spec(oracle, data)?;
    let cfg = trainer.config.clone();
    let round = augmentation_step(
        &dataset.views,
        oracle.as_ref(),
        &MsSsimDistance,
        &cfg.augmentation,
        cfg.loss.epsilon,
        cfg.seed,
        |cam, app| Ok((trainer.render(cam, app)?.color, ())),
    )?;
    fs::create_dir_all(out)?;
    let mut stdout = std::io::stdout().lock();
    for (i, v) in round.views.iter().enumerate() {
        let file = format!("pair_{i:03}.png");
        write_image(&out.join(&file), &v.rendered.hconcat(&v.generated)?)?;
        let (a, b) = v.pair;
        writeln!(
            stdout,
            "{}",
            json!({"file": file, "pair": [dataset.views[a].name, dataset.views[b].name],
                   "distance": v.gate_distance, "active": v.active})
        )?;
    }
    if round.dropped > 0 {
        log::warn!("{} targets dropped by the oracle", round.dropped);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    out: &Path,
    count: usize,
    views: usize,
    size: usize,
    arc: f64,
    seed: u64,
    held_out: Vec<usize>,
    depth: bool,
) -> Result<()> {
    if let Some(i) = held_out.iter().find(|i| **i >= views) {
        return Err(Error::invalid(format!("held-out index {i} out of range")));
    }
    let g = random_gaussians(count, seed);
    let focal = size as f64 * 70.0 / 64.0;
    let cams = arc_cameras(views, 4.0, arc, size, focal)?;
    let opts = SyntheticOptions {
        test_indices: held_out,
        with_depth: depth,
        seed,
        ..Default::default()
    };
    let data = synthetic_dataset(&g, &cams, &opts)?;
    save_dataset(&data, out)?;
    save_ground_truth(&g, opts.settings, &out.join(GROUND_TRUTH_FILE))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            config,
            out,
            oracle,
            resume,
        } => train(&data, config.as_deref(), &out, oracle.as_deref(), resume.as_deref()),
        Command::Render {
            ckpt,
            poses,
            out,
            frames,
            appearance,
        } => render_frames(&ckpt, &poses, &out, frames, appearance),
        Command::Eval { ckpt, data } => {
            println!("{}", eval(&ckpt, &data)?);
            Ok(())
        }
        Command::AugmentPreview {
            ckpt,
            data,
            oracle,
            out,
        } => augment_preview(&ckpt, &data, &oracle, &out),
        Command::Synth {
            out,
            gaussians,
            views,
            size,
            arc,
            seed,
            held_out,
            depth,
        } => synth(&out, gaussians, views, size, arc, seed, held_out, depth),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
