use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tugs_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tugs_core::io::config::{read_synthetic_spec, read_train_config};
use tugs_core::io::dataset::{load_cameras, load_dataset, write_synthetic};
use tugs_core::io::png::{gray_to_rgb, write_png};
use tugs_core::io::MetricsCsv;
use tugs_core::medium::attenuation_map;
use tugs_core::metrics::evaluate;
use tugs_core::synth::{generate_synthetic, SyntheticSpec};
use tugs_core::tensor::compression_stats;
use tugs_core::trainer::{forward, init_from_points, train, MediumMode, StepOutcome, TrainConfig};
use tugs_core::Camera;

#[derive(Parser)]
#[command(name = "tugs", version, about = "Tensorized underwater Gaussian splatting")]
struct Cli {
    /// Worker threads for rendering (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Medium {
    Underwater,
    None,
}

impl From<Medium> for MediumMode {
    fn from(m: Medium) -> Self {
        match m {
            Medium::Underwater => MediumMode::Underwater,
            Medium::None => MediumMode::Disabled,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
        /// Key-value training config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render composed underwater images for every camera.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A cameras.json file.
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Medium::Underwater)]
        medium: Medium,
    },
    /// Render medium-free images, optionally with backscatter and attenuation maps.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        backscatter: bool,
        #[arg(long)]
        attenuation: bool,
    },
    /// PSNR and SSIM on a dataset split, plus storage size.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train, eval or all.
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, value_enum, default_value_t = Medium::Underwater)]
        medium: Medium,
    },
    /// Generate a synthetic dataset with a known medium.
    Synth {
        /// Key-value scene description; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print parameter counts and compression for a checkpoint.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    match cli.command {
        Command::Train { dataset, out, config, steps, seed } => cmd_train(&dataset, &out, config.as_deref(), steps, seed),
        Command::Render { checkpoint, cameras, out, medium } => cmd_render(&checkpoint, &cameras, &out, medium.into()),
        Command::Restore { checkpoint, cameras, out, backscatter, attenuation } => {
            cmd_restore(&checkpoint, &cameras, &out, backscatter, attenuation)
        }
        Command::Eval { checkpoint, dataset, split, medium } => cmd_eval(&checkpoint, &dataset, &split, medium.into()),
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Stats { checkpoint } => cmd_stats(&checkpoint),
    }
}

fn cmd_train(dataset: &Path, out: &Path, config: Option<&Path>, steps: Option<u64>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = load_dataset(dataset)?;
    let views = ds.train_views();
    if views.is_empty() {
        bail!("{}: the train split is empty", dataset.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut state = init_from_points(&ds.points, &cfg)?;
    log::info!(
        "training {} views, {} Gaussians, rank {}, {} steps",
        views.len(),
        state.num_gaussians(),
        cfg.rank,
        cfg.steps
    );
    let csv_path = out.join("metrics.csv");
    let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let mut csv = MetricsCsv::new(BufWriter::new(file))?;
    let ck_path = out.join("checkpoint.tugs");
    train(&cfg, &mut state, &views, |s, rec| {
        csv.record(rec.step, rec.outcome.loss())?;
        if let StepOutcome::Skipped { .. } = rec.outcome {
            log::warn!("step {}: non-finite loss, step skipped", rec.step);
        }
        if cfg.checkpoint_interval > 0 && s.step % cfg.checkpoint_interval == 0 {
            csv.flush()?;
            save_checkpoint(&ck_path, &Checkpoint { factors: s.factors.clone(), medium: s.medium })?;
            log::info!(
                "step {}: loss {:.4}, {} Gaussians, {} parameters",
                s.step,
                rec.outcome.loss().total,
                s.num_gaussians(),
                s.parameter_count()
            );
        }
        Ok(())
    })?;
    csv.flush()?;
    let model = out.join("model.tugs");
    save_checkpoint(&model, &Checkpoint { factors: state.factors.clone(), medium: state.medium })?;
    println!("wrote {}", model.display());
    Ok(())
}

fn load_inputs(checkpoint: &Path, cameras: &Path, out: &Path) -> Result<(Checkpoint, Vec<Camera>)> {
    let ck = load_checkpoint(checkpoint)?;
    let cams = load_cameras(cameras)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok((ck, cams))
}

fn cmd_render(checkpoint: &Path, cameras: &Path, out: &Path, mode: MediumMode) -> Result<()> {
    let (ck, cams) = load_inputs(checkpoint, cameras, out)?;
    for (i, cam) in cams.iter().enumerate() {
        let f = forward(&ck.factors, &ck.medium, cam, mode)?;
        write_png(&out.join(format!("render_{i:03}.png")), &f.composed)?;
    }
    println!("rendered {} views to {}", cams.len(), out.display());
    Ok(())
}

fn cmd_restore(checkpoint: &Path, cameras: &Path, out: &Path, backscatter: bool, attenuation: bool) -> Result<()> {
    let (ck, cams) = load_inputs(checkpoint, cameras, out)?;
    for (i, cam) in cams.iter().enumerate() {
        let f = forward(&ck.factors, &ck.medium, cam, MediumMode::Underwater)?;
        write_png(&out.join(format!("restore_{i:03}.png")), &f.object.color)?;
        if backscatter {
            write_png(&out.join(format!("backscatter_{i:03}.png")), &f.backscatter)?;
        }
        if attenuation {
            let a = attenuation_map(&f.medium.color, &f.medium.depth)?;
            write_png(&out.join(format!("attenuation_{i:03}.png")), &a)?;
            let zmax = f.medium.depth.data().iter().cloned().fold(0.0, f64::max);
            let z = gray_to_rgb(&f.medium.depth, if zmax > 0.0 { zmax } else { 1.0 });
            write_png(&out.join(format!("medium_depth_{i:03}.png")), &z)?;
        }
    }
    println!("restored {} views to {}", cams.len(), out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: &Path, split: &str, mode: MediumMode) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let bytes = std::fs::metadata(checkpoint)?.len();
    let ds = load_dataset(dataset)?;
    let views = ds.split(split)?;
    if views.is_empty() {
        bail!("{}: the {split} split is empty", dataset.display());
    }
    let idx: Vec<usize> = match split {
        "train" => ds.train.clone(),
        "eval" => ds.eval.clone(),
        _ => (0..ds.views.len()).collect(),
    };
    let report = evaluate(&ck.factors, &ck.medium, &views, mode)?;
    println!("{:<28} {:>9} {:>8}", "view", "PSNR", "SSIM");
    for (i, s) in idx.iter().zip(&report.views) {
        println!("{:<28} {:>9.4} {:>8.4}", ds.image_paths[*i], s.psnr, s.ssim);
    }
    println!("{:<28} {:>9.4} {:>8.4}", "mean", report.mean_psnr, report.mean_ssim);
    println!("storage: {bytes} bytes ({:.3} MB)", bytes as f64 / 1e6);
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => read_synthetic_spec(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scene = generate_synthetic(&spec)?;
    write_synthetic(out, &scene)?;
    println!("wrote {} views ({} train, {} eval) to {}", scene.views.len(), scene.train.len(), scene.eval.len(), out.display());
    Ok(())
}

fn cmd_stats(checkpoint: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let bytes = std::fs::metadata(checkpoint)?.len();
    let f = &ck.factors;
    let s = compression_stats(f.num_gaussians() as u64, f.num_attributes() as u64, f.rank() as u64);
    println!("gaussians:         {}", f.num_gaussians());
    println!("attributes:        {}", f.num_attributes());
    println!("rank:              {}", f.rank());
    println!("dense params:      {}", s.dense_params);
    println!("compressed params: {}", s.compressed_params);
    println!("reduction:         {:.1}%", 100.0 * s.reduction_fraction);
    println!("medium params:     9");
    println!("storage:           {bytes} bytes");
    Ok(())
}
