use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vecset4d_pipeline::models::{load_models, Stage};
use vecset4d_pipeline::recon::{evaluate, observe, reconstruct_sequence, write_sequence};
use vecset4d_pipeline::stages::{train_stage, RunContext};
use vecset4d_pipeline::synth::{dataset_dir, dataset_specs, load_dataset, synth_dataset, Split};
use vecset4d_pipeline::{PipelineError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "vecset4d", version, about = "Latent vector-set reconstruction of deforming surface sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used for absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root for data, checkpoints, logs and results.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Worker threads for parallel geometry kernels (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train the shape autoencoder.
    TrainShapeVae(TrainArgs),
    /// Train the deformation autoencoder.
    TrainDeformVae(TrainArgs),
    /// Train the shape diffusion model on cached shape latents.
    TrainShapeDiff(TrainArgs),
    /// Train the deformation diffusion model on cached deformation latents.
    TrainDeformDiff(TrainArgs),
    /// Reconstruct sequences of a split and write them as OBJ files.
    Reconstruct(SplitArgs),
    /// Reconstruct and score a split; writes metrics CSVs and error maps.
    Eval(SplitArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from the last checkpoint if one exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value = "train")]
    split: String,
    /// Only this sequence.
    #[arg(long)]
    sequence: Option<String>,
    /// Apply the single-view partial filter to the observations.
    #[arg(long)]
    partial: bool,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train(cfg: &RunConfig, out: &Path, stage: Stage, args: &TrainArgs) -> Result<()> {
    let data = dataset_dir(out, cfg.paths.data.as_ref());
    let dataset = load_dataset(&data)?;
    let ctx = RunContext { cfg, out, dataset: &dataset, resume: args.resume };
    let summary = train_stage(&ctx, stage)?;
    let last = summary.losses.last().map_or(f64::NAN, |l| l.1);
    println!(
        "{}: {} steps run (now at step {}), last loss {last:.6}, log {}",
        stage.slug(),
        summary.steps_run,
        summary.step,
        summary.log.display()
    );
    Ok(())
}

fn split_sequences(cfg: &RunConfig, out: &Path, args: &SplitArgs) -> Result<(Split, Vec<vecset4d_pipeline::synth::Sequence>)> {
    let split = Split::parse(&args.split)?;
    let data = dataset_dir(out, cfg.paths.data.as_ref());
    let seqs: Vec<_> = load_dataset(&data)?
        .into_iter()
        .filter(|s| s.split == split && args.sequence.as_ref().map_or(true, |n| &s.name == n))
        .collect();
    if seqs.is_empty() {
        return Err(PipelineError::Validation(format!("no sequences selected from split {}", split.slug())));
    }
    Ok((split, seqs))
}

fn run(cli: Cli) -> Result<()> {
    if cli.common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.threads)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    match &cli.command {
        Command::Synth => {
            let dir = dataset_dir(out, cfg.paths.data.as_ref());
            let manifest = synth_dataset(&dataset_specs(&cfg.data, cfg.seed), cfg.seed, &dir)?;
            println!("{} sequences written to {}", manifest.sequences.len(), dir.display());
        }
        Command::TrainShapeVae(a) => train(&cfg, out, Stage::ShapeVae, a)?,
        Command::TrainDeformVae(a) => train(&cfg, out, Stage::DeformVae, a)?,
        Command::TrainShapeDiff(a) => train(&cfg, out, Stage::ShapeDiffusion, a)?,
        Command::TrainDeformDiff(a) => train(&cfg, out, Stage::DeformDiffusion, a)?,
        Command::Reconstruct(a) => {
            cfg.corruption.partial |= a.partial;
            let (_, seqs) = split_sequences(&cfg, out, a)?;
            let models = load_models(&cfg, out)?;
            for seq in &seqs {
                let seed = vecset4d::rng::derive_seed_str(cfg.seed, &format!("reconstruct/{}", seq.name));
                let rec = reconstruct_sequence(&seq.name, &observe(seq, &cfg)?, &models, &cfg, seed)?;
                let dir = out.join("recon").join(&seq.name);
                write_sequence(&dir, &rec.meshes)?;
                println!("{}: {} frames written to {}", seq.name, rec.meshes.len(), dir.display());
            }
        }
        Command::Eval(a) => {
            cfg.corruption.partial |= a.partial;
            let (split, seqs) = split_sequences(&cfg, out, a)?;
            let models = load_models(&cfg, out)?;
            let refs: Vec<_> = seqs.iter().collect();
            let report = evaluate(&refs, split, &models, &cfg, out)?;
            for s in &report.sequences {
                println!("{}: mean chamfer {:.6} (copy-first-frame {:.6})", s.sequence, s.mean_chamfer(), s.baseline_chamfer());
            }
            println!("metrics written to {}", report.metrics_csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
