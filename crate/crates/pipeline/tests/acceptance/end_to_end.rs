use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use vecset4d_pipeline::models::{checkpoint_dir, load_models, Stage};
use vecset4d_pipeline::recon::{evaluate, EvalReport};
use vecset4d_pipeline::stages::{cache_path, train_stage, RunContext};
use vecset4d_pipeline::synth::{dataset_specs, load_dataset, synth_dataset, Sequence, Split};
use vecset4d_pipeline::train::log_path;
use vecset4d_pipeline::{Result, RunConfig};

use crate::common::{tree, Checks, Outcome};

const STAGES: [Stage; 4] = [Stage::ShapeVae, Stage::DeformVae, Stage::ShapeDiffusion, Stage::DeformDiffusion];
const REPLAY_STEPS: u64 = 20;

fn root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn fresh(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| vecset4d_pipeline::PipelineError::Io { path: dir.into(), source: e })?;
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<Sequence>> {
    let dir = out.join("data");
    synth_dataset(&dataset_specs(&cfg.data, cfg.seed), cfg.seed, &dir)?;
    load_dataset(&dir)
}

fn train_split(data: &[Sequence]) -> Vec<&Sequence> {
    data.iter().filter(|s| s.split == Split::Train).collect()
}

pub struct MainRun {
    cfg: RunConfig,
    out: PathBuf,
    data: Vec<Sequence>,
    report: EvalReport,
    stage_secs: Vec<(String, f64)>,
}

fn main_run() -> Result<MainRun> {
    let cfg = RunConfig::default();
    let out = root().join("main");
    fresh(&out)?;
    let mut stage_secs = Vec::new();
    let mut lap = Instant::now();
    let mut mark = |name: &str, secs: &mut Vec<(String, f64)>| {
        secs.push((name.to_string(), lap.elapsed().as_secs_f64()));
        lap = Instant::now();
    };
    let data = synth(&cfg, &out)?;
    mark("synth", &mut stage_secs);
    for stage in STAGES {
        train_stage(&RunContext { cfg: &cfg, out: &out, dataset: &data, resume: false }, stage)?;
        mark(stage.slug(), &mut stage_secs);
    }
    let models = load_models(&cfg, &out)?;
    let report = evaluate(&train_split(&data), Split::Train, &models, &cfg, &out)?;
    mark("eval", &mut stage_secs);
    Ok(MainRun { cfg, out, data, report, stage_secs })
}

static MAIN: OnceLock<std::result::Result<MainRun, String>> = OnceLock::new();

fn main_once() -> &'static std::result::Result<MainRun, String> {
    MAIN.get_or_init(|| main_run().map_err(|e| e.to_string()))
}

fn log_prefix(out: &Path, stage: Stage, rows: usize) -> Option<Vec<String>> {
    let text = std::fs::read_to_string(log_path(out, stage)).ok()?;
    let lines: Vec<String> = text.lines().take(rows + 1).map(str::to_string).collect();
    (lines.len() == rows + 1).then_some(lines)
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        std::fs::copy(e.path(), to.join(e.file_name()))?;
    }
    Ok(())
}

/// Regenerates the data and replays the first steps of every stage in a
/// second directory; the diffusion stages start from the main run's
/// autoencoders so their latent caches agree.
fn replay(main: &MainRun, checks: &mut Checks) -> Result<()> {
    let out = root().join("replay");
    fresh(&out)?;
    let mut cfg = main.cfg.clone();
    for s in [&mut cfg.train.shape_vae, &mut cfg.train.deform_vae, &mut cfg.train.shape_diffusion, &mut cfg.train.deform_diffusion]
    {
        s.steps = REPLAY_STEPS;
    }
    let data = synth(&cfg, &out)?;
    let same_data = tree(&out.join("data")) == tree(&main.out.join("data"));
    checks.check("synth replay", same_data, format!("{} files", tree(&out.join("data")).len()));
    let mut same = Vec::new();
    for stage in STAGES {
        if stage == Stage::ShapeDiffusion {
            for ae in [Stage::ShapeVae, Stage::DeformVae] {
                copy_dir(&checkpoint_dir(&main.out, ae), &checkpoint_dir(&out, ae))
                    .map_err(|e| vecset4d_pipeline::PipelineError::Io { path: out.clone(), source: e })?;
            }
            let _ = std::fs::remove_file(cache_path(&out));
        }
        train_stage(&RunContext { cfg: &cfg, out: &out, dataset: &data, resume: false }, stage)?;
        let rows = REPLAY_STEPS as usize;
        let ok = log_prefix(&out, stage, rows).is_some() && log_prefix(&out, stage, rows) == log_prefix(&main.out, stage, rows);
        same.push((stage.slug(), ok));
    }
    let bad: Vec<_> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    checks.check(
        "training replay",
        bad.is_empty(),
        if bad.is_empty() { format!("first {REPLAY_STEPS} logged steps identical in all stages") } else { format!("differs in {bad:?}") },
    );
    Ok(())
}

pub fn full_run() -> Outcome {
    let mut checks = Checks::new();
    let main = match main_once() {
        Ok(m) => m,
        Err(e) => {
            checks.error("run", e);
            return checks.finish();
        }
    };
    let times: Vec<String> = main.stage_secs.iter().map(|(n, s)| format!("{n} {s:.0}s")).collect();
    checks.check("stages", true, times.join(", "));

    let seqs = &main.report.sequences;
    let better = seqs.iter().filter(|s| s.mean_chamfer() < s.baseline_chamfer()).count();
    let frac = better as f64 / seqs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&vecset4d_pipeline::recon::SequenceReport) -> f64| seqs.iter().map(f).sum::<f64>() / seqs.len() as f64;
    checks.check(
        "beats copy-first-frame",
        !seqs.is_empty() && frac >= 0.75,
        format!(
            "{better}/{} train sequences (mean chamfer {:.4} vs {:.4})",
            seqs.len(),
            mean(&|s| s.mean_chamfer()),
            mean(&|s| s.baseline_chamfer())
        ),
    );

    let first = std::fs::read(&main.report.metrics_csv).unwrap_or_default();
    let again = load_models(&main.cfg, &main.out)
        .and_then(|m| evaluate(&train_split(&main.data), Split::Train, &m, &main.cfg, &main.out))
        .map(|r| std::fs::read(&r.metrics_csv).unwrap_or_default());
    match again {
        Ok(bytes) => checks.check("eval replay", !first.is_empty() && bytes == first, format!("{} byte metrics.csv", first.len())),
        Err(e) => checks.error("eval replay", e),
    }
    if let Err(e) = replay(main, &mut checks) {
        checks.error("replay", e);
    }
    checks.finish()
}

/// Retrains the observation-conditioned stages on view-filtered inputs,
/// reusing the main run's data, autoencoders and latent cache, then
/// evaluates the training split under the same filter.
fn partial(main: &MainRun, checks: &mut Checks) -> Result<()> {
    let out = root().join("partial");
    fresh(&out)?;
    let mut cfg = main.cfg.clone();
    cfg.corruption.partial = true;
    let io = |e| vecset4d_pipeline::PipelineError::Io { path: out.clone(), source: e };
    for ae in [Stage::ShapeVae, Stage::DeformVae] {
        copy_dir(&checkpoint_dir(&main.out, ae), &checkpoint_dir(&out, ae)).map_err(io)?;
    }
    copy_dir(cache_path(&main.out).parent().expect("cache dir"), cache_path(&out).parent().expect("cache dir")).map_err(io)?;
    for stage in [Stage::ShapeDiffusion, Stage::DeformDiffusion] {
        train_stage(&RunContext { cfg: &cfg, out: &out, dataset: &main.data, resume: false }, stage)?;
    }
    let models = load_models(&cfg, &out)?;
    let seqs = train_split(&main.data);
    let report = evaluate(&seqs, Split::Train, &models, &cfg, &out)?;
    let rows: Vec<_> = report.sequences.iter().flat_map(|s| s.rows.iter()).collect();
    let finite = rows.iter().all(|r| r.iou.is_finite() && r.chamfer.is_finite() && r.corr.is_finite());
    let expected = seqs.len() * cfg.data.frames;
    let mean_chamfer = rows.iter().map(|r| r.chamfer).sum::<f64>() / rows.len().max(1) as f64;
    checks.check(
        "partial metrics",
        finite && rows.len() == expected,
        format!("{} of {expected} frames finite (mean chamfer {mean_chamfer:.4})", rows.iter().filter(|r| r.chamfer.is_finite()).count()),
    );
    Ok(())
}

pub fn partial_run() -> Outcome {
    let mut checks = Checks::new();
    match checks.excluding(main_once) {
        Ok(main) => {
            if let Err(e) = partial(main, &mut checks) {
                checks.error("partial run", e);
            }
        }
        Err(e) => checks.error("main run", e),
    }
    checks.finish()
}
