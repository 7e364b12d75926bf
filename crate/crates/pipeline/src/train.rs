//! Generic training loop: seeded per-step randomness, Adam, loss logs,
//! periodic and best-validation checkpoints, and exact resume.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vecset4d::rng::{self, Rng};
use vecset4d::tensor::{Adam, AdamConfig, Bound, Graph, Var};

use crate::config::{CheckpointChoice, StageConfig};
use crate::error::{IoContext, PipelineError, Result};
use crate::models::{build_checkpoint, checkpoint_dir, checkpoint_path, read_checkpoint, restore_params, Stage, Store};

/// Weighted total plus named components, all scalars in the step graph.
pub struct StepLoss {
    pub total: Var,
    pub parts: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub stage: Stage,
    /// Last completed step.
    pub step: u64,
    pub steps_run: u64,
    /// `(step, total, parts)` for the steps run in this call.
    pub losses: Vec<(u64, f64, Vec<f64>)>,
    pub best_val: Option<f64>,
    pub log: PathBuf,
}

pub struct Trainer<'a> {
    pub stage: Stage,
    pub out: &'a Path,
    pub cfg: &'a StageConfig,
    pub seed: u64,
    pub model_config: String,
    /// Names of the loss components after the total.
    pub columns: &'static [&'static str],
    pub resume: bool,
}

pub fn log_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("logs").join(format!("{}.csv", stage.slug()))
}

fn val_log_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("logs").join(format!("{}_val.csv", stage.slug()))
}

/// Keeps the header and rows with step ≤ `upto`.
fn trimmed_log(path: &Path, header: &str, upto: u64) -> Result<String> {
    let mut s = format!("{header}\n");
    if upto == 0 || !path.is_file() {
        return Ok(s);
    }
    let text = std::fs::read_to_string(path).at(path)?;
    for line in text.lines().skip(1) {
        let step: u64 = line.split(',').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
        if step <= upto {
            s.push_str(line);
            s.push('\n');
        }
    }
    Ok(s)
}

impl Trainer<'_> {
    fn rng_for(&self, step: u64) -> Rng {
        rng::rng(rng::derive_seed(rng::derive_seed_str(self.seed, self.stage.slug()), step))
    }

    fn save(&self, which: CheckpointChoice, store: &Store, adam: &Adam<f32>, step: u64, best: Option<f64>) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("step".to_string(), step.to_string());
        if let Some(b) = best {
            meta.insert("best_val".to_string(), format!("{b:e}"));
        }
        let opt = (which == CheckpointChoice::Last).then_some(&adam.state);
        let ck = build_checkpoint(self.stage, &self.model_config, store, opt, meta);
        Ok(ck.save(checkpoint_path(self.out, self.stage, which))?)
    }

    /// Runs steps up to `cfg.steps`. `step_fn` builds one step's loss;
    /// `val_fn` scores the current parameters (lower is better).
    pub fn run(
        &self,
        store: &mut Store,
        mut step_fn: impl FnMut(&mut Graph<f32>, &Bound, &mut Rng) -> Result<StepLoss>,
        mut val_fn: impl FnMut(&Store) -> Result<f64>,
    ) -> Result<TrainSummary> {
        let dir = checkpoint_dir(self.out, self.stage);
        std::fs::create_dir_all(&dir).at(&dir)?;
        let logs = self.out.join("logs");
        std::fs::create_dir_all(&logs).at(&logs)?;
        let adam_cfg = AdamConfig { lr: self.cfg.lr, ..AdamConfig::default() };
        let mut adam = Adam::new(adam_cfg, store);
        let (mut start, mut best) = (0u64, None);
        let last = checkpoint_path(self.out, self.stage, CheckpointChoice::Last);
        if self.resume && last.is_file() {
            let ck = read_checkpoint(&last, "checkpoint")?;
            restore_params(&ck, self.stage, &self.model_config, store)?;
            adam = Adam::with_state(adam_cfg, ck.load_optimizer(&format!("{}/", self.stage.slug()), store)?);
            start = ck.meta.get("step").and_then(|s| s.parse().ok()).unwrap_or(0);
            best = ck.meta.get("best_val").and_then(|s| s.parse().ok());
        }
        let header = std::iter::once("step").chain(std::iter::once("total")).chain(self.columns.iter().copied()).collect::<Vec<_>>().join(",");
        let log = log_path(self.out, self.stage);
        let mut log_text = trimmed_log(&log, &header, start)?;
        let val_log = val_log_path(self.out, self.stage);
        let mut val_text = trimmed_log(&val_log, "step,val", start)?;
        let flush = |log_text: &str, val_text: &str| -> Result<()> {
            std::fs::write(&log, log_text).at(&log)?;
            std::fs::write(&val_log, val_text).at(&val_log)
        };

        let mut losses = Vec::new();
        for step in start + 1..=self.cfg.steps {
            let mut r = self.rng_for(step);
            let mut g = Graph::new();
            let bound = g.bind(store);
            let loss = step_fn(&mut g, &bound, &mut r)?;
            let total: f64 = g.value(loss.total).item().into();
            let parts: Vec<f64> = loss.parts.iter().map(|&v| g.value(v).item().into()).collect();
            let mut line = format!("{step},{total}");
            for p in &parts {
                write!(line, ",{p}").unwrap();
            }
            log_text.push_str(&line);
            log_text.push('\n');
            if !total.is_finite() {
                flush(&log_text, &val_text)?;
                return Err(PipelineError::Numeric {
                    stage: self.stage.slug().into(),
                    step,
                    detail: format!("loss is {total}"),
                });
            }
            g.backward(loss.total).map_err(|e| self.numeric(step, e))?;
            let grads = g.param_grads(&bound);
            adam.step(store, &grads).map_err(|e| self.numeric(step, e))?;
            losses.push((step, total, parts));

            let final_step = step == self.cfg.steps;
            if self.cfg.val_every > 0 && (step % self.cfg.val_every == 0 || final_step) {
                let v = val_fn(store)?;
                writeln!(val_text, "{step},{v}").unwrap();
                if v.is_finite() && best.map_or(true, |b| v < b) {
                    best = Some(v);
                    self.save(CheckpointChoice::Best, store, &adam, step, best)?;
                }
            }
            if final_step || (self.cfg.checkpoint_every > 0 && step % self.cfg.checkpoint_every == 0) {
                self.save(CheckpointChoice::Last, store, &adam, step, best)?;
                flush(&log_text, &val_text)?;
            }
        }
        if self.cfg.val_every == 0 && !losses.is_empty() {
            self.save(CheckpointChoice::Best, store, &adam, self.cfg.steps, None)?;
        }
        flush(&log_text, &val_text)?;
        Ok(TrainSummary {
            stage: self.stage,
            step: self.cfg.steps.max(start),
            steps_run: losses.len() as u64,
            losses,
            best_val: best,
            log,
        })
    }

    fn numeric(&self, step: u64, e: vecset4d::Error) -> PipelineError {
        PipelineError::Numeric { stage: self.stage.slug().into(), step, detail: e.to_string() }
    }
}
