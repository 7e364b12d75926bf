//! The four training stages and the cached latents that link them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use vecset4d::attention::{LatentSequence, LatentSet};
use vecset4d::deform_vae::{encode_deformation, DeformPair};
use vecset4d::diffusion::{diffusion_loss, NoiseDraw};
use vecset4d::rng::{self, Rng};
use vecset4d::shape_vae::encode_shape;
use vecset4d::tensor::checkpoint::Checkpoint;
use vecset4d::tensor::{Graph, Tensor};

use crate::config::RunConfig;
use crate::data::{corrupt_sequence, deform_example, shape_example, SequencePool, ShapeExample, DeformExample};
use crate::error::{PipelineError, Result};
use crate::models::{self, read_checkpoint, restore_params, Stage, Store};
use crate::synth::{Sequence, Split};
use crate::train::{StepLoss, TrainSummary, Trainer};

/// Shared inputs of every stage.
pub struct RunContext<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub dataset: &'a [Sequence],
    pub resume: bool,
}

impl RunContext<'_> {
    pub fn split(&self, split: Split) -> Vec<&Sequence> {
        self.dataset.iter().filter(|s| s.split == split).collect()
    }

    fn trainer(&self, stage: Stage, columns: &'static [&'static str]) -> Trainer<'_> {
        let cfg = match stage {
            Stage::ShapeVae => &self.cfg.train.shape_vae,
            Stage::DeformVae => &self.cfg.train.deform_vae,
            Stage::ShapeDiffusion => &self.cfg.train.shape_diffusion,
            Stage::DeformDiffusion => &self.cfg.train.deform_diffusion,
        };
        Trainer {
            stage,
            out: self.out,
            cfg,
            seed: self.cfg.seed,
            model_config: stage.model_config(self.cfg),
            columns,
            resume: self.resume,
        }
    }

    fn batch(&self, stage: Stage) -> usize {
        match stage {
            Stage::ShapeVae => self.cfg.train.shape_vae.batch,
            Stage::DeformVae => self.cfg.train.deform_vae.batch,
            Stage::ShapeDiffusion => self.cfg.train.shape_diffusion.batch,
            Stage::DeformDiffusion => self.cfg.train.deform_diffusion.batch,
        }
    }
}

const VAL_EXAMPLES: usize = 8;

fn val_rng(cfg: &RunConfig, stage: Stage) -> Rng {
    rng::rng(rng::derive_seed_str(cfg.seed, &format!("val/{}", stage.slug())))
}

fn nonempty<'a>(seqs: Vec<&'a Sequence>, what: &str) -> Result<Vec<&'a Sequence>> {
    if seqs.is_empty() {
        return Err(PipelineError::Validation(format!("no {what} sequences in the dataset")));
    }
    Ok(seqs)
}

pub fn train_shape_vae(ctx: &RunContext) -> Result<TrainSummary> {
    let cfg = ctx.cfg;
    let train = nonempty(ctx.split(Split::Train), "training")?;
    let pools = SequencePool::pools(&train, &cfg.sampling, true, rng::derive_seed_str(cfg.seed, "pool/train"))?;
    let val = ctx.split(Split::Val);
    let val_pools = SequencePool::pools(&val, &cfg.sampling, true, rng::derive_seed_str(cfg.seed, "pool/val"))?;
    let mut vr = val_rng(cfg, Stage::ShapeVae);
    let val_examples: Vec<ShapeExample> = (0..if val_pools.is_empty() { 0 } else { VAL_EXAMPLES })
        .map(|_| {
            let p = &val_pools[vr.gen_range(0..val_pools.len())];
            shape_example(&p.frames[vr.gen_range(0..p.frames.len())], &cfg.sampling, &mut vr)
        })
        .collect();

    let (vae, mut store) = models::new_shape_vae(cfg)?;
    let batch = ctx.batch(Stage::ShapeVae);
    ctx.trainer(Stage::ShapeVae, &["bce", "kl"]).run(
        &mut store,
        |g, p, r| {
            let mut acc = Vec::with_capacity(batch);
            for _ in 0..batch {
                let pool = &pools[r.gen_range(0..pools.len())];
                let ex = shape_example(&pool.frames[r.gen_range(0..pool.frames.len())], &cfg.sampling, r);
                acc.push(vae.loss(g, p, &ex.points, &ex.queries, &ex.occupancy, r.gen())?);
            }
            mean_losses(g, acc.iter().map(|l| (l.total, vec![l.recon, l.kl])).collect())
        },
        |store| {
            if val_examples.is_empty() {
                return Ok(f64::NAN);
            }
            let mut total = 0.0;
            for (i, ex) in val_examples.iter().enumerate() {
                let mut g = Graph::no_grad();
                let p = g.bind(store);
                let l = vae.loss(&mut g, &p, &ex.points, &ex.queries, &ex.occupancy, i as u64)?;
                total += f64::from(g.value(l.recon).item());
            }
            Ok(total / val_examples.len() as f64)
        },
    )
}

/// Averages per-example `(total, parts)` scalars.
fn mean_losses(g: &mut Graph<f32>, items: Vec<(vecset4d::tensor::Var, Vec<vecset4d::tensor::Var>)>) -> Result<StepLoss> {
    let n = items.len();
    let k = items[0].1.len();
    let scale = 1.0 / n as f64;
    let mut total = items[0].0;
    let mut parts = items[0].1.clone();
    for (t, ps) in &items[1..] {
        total = g.add(total, *t)?;
        for j in 0..k {
            parts[j] = g.add(parts[j], ps[j])?;
        }
    }
    let total = g.scale(total, scale)?;
    let parts = parts.into_iter().map(|v| g.scale(v, scale)).collect::<vecset4d::Result<Vec<_>>>()?;
    Ok(StepLoss { total, parts })
}

fn random_deform_example(pools: &[SequencePool], cfg: &RunConfig, r: &mut Rng) -> Result<DeformExample> {
    let pool = &pools[r.gen_range(0..pools.len())];
    let t = r.gen_range(1..pool.frames.len());
    deform_example(pool, t, &cfg.sampling, r)
}

pub fn train_deform_vae(ctx: &RunContext) -> Result<TrainSummary> {
    let cfg = ctx.cfg;
    let train = nonempty(ctx.split(Split::Train), "training")?;
    let pools = SequencePool::pools(&train, &cfg.sampling, false, rng::derive_seed_str(cfg.seed, "pool/train"))?;
    let val = ctx.split(Split::Val);
    let val_pools = SequencePool::pools(&val, &cfg.sampling, false, rng::derive_seed_str(cfg.seed, "pool/val"))?;
    let mut vr = val_rng(cfg, Stage::DeformVae);
    let val_examples: Vec<DeformExample> = (0..if val_pools.is_empty() { 0 } else { VAL_EXAMPLES })
        .map(|_| random_deform_example(&val_pools, cfg, &mut vr))
        .collect::<Result<_>>()?;

    let (vae, mut store) = models::new_deform_vae(cfg)?;
    let batch = ctx.batch(Stage::DeformVae);
    ctx.trainer(Stage::DeformVae, &["mse", "kl"]).run(
        &mut store,
        |g, p, r| {
            let mut acc = Vec::with_capacity(batch);
            for _ in 0..batch {
                let ex = random_deform_example(&pools, cfg, r)?;
                let pair = DeformPair::new(ex.src, ex.tgt)?;
                let l = vae.loss(g, p, &pair, &ex.queries, &ex.targets, r.gen())?;
                acc.push((l.total, vec![l.recon, l.kl]));
            }
            mean_losses(g, acc)
        },
        |store| {
            if val_examples.is_empty() {
                return Ok(f64::NAN);
            }
            let mut total = 0.0;
            for (i, ex) in val_examples.iter().enumerate() {
                let mut g = Graph::no_grad();
                let p = g.bind(store);
                let pair = DeformPair::new(ex.src.clone(), ex.tgt.clone())?;
                let l = vae.loss(&mut g, &p, &pair, &ex.queries, &ex.targets, i as u64)?;
                total += f64::from(g.value(l.recon).item());
            }
            Ok(total / val_examples.len() as f64)
        },
    )
}

/// Posterior means of the trained autoencoders for every sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCache {
    pub shape: BTreeMap<String, LatentSet>,
    pub deform: BTreeMap<String, LatentSequence>,
    pub meta: BTreeMap<String, String>,
}

pub fn cache_path(out: &Path) -> PathBuf {
    out.join("cache").join("latents.ckpt")
}

fn to_f32_precision(t: &Tensor<f64>) -> Tensor<f64> {
    t.cast::<f32>().cast()
}

impl LatentCache {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new("latents");
        for (name, s) in &self.shape {
            ck.push(format!("shape/{name}"), &s.codes);
        }
        for (name, d) in &self.deform {
            ck.push(format!("deform/{name}"), &d.codes);
        }
        ck.meta = self.meta.clone();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.into(), source })?;
        }
        Ok(ck.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = read_checkpoint(path, "latent cache")?;
        let (mut shape, mut deform) = (BTreeMap::new(), BTreeMap::new());
        for e in &ck.entries {
            let t = Tensor::new(e.shape.clone(), e.data.iter().map(|&v| v as f64).collect())?;
            if let Some(name) = e.name.strip_prefix("shape/") {
                shape.insert(name.to_string(), LatentSet::new(t)?);
            } else if let Some(name) = e.name.strip_prefix("deform/") {
                deform.insert(name.to_string(), LatentSequence::new(t)?);
            }
        }
        Ok(Self { shape, deform, meta: ck.meta })
    }
}

fn source_meta(cfg: &RunConfig, out: &Path) -> Result<BTreeMap<String, String>> {
    let mut meta = BTreeMap::new();
    for stage in [Stage::ShapeVae, Stage::DeformVae] {
        let ck = read_checkpoint(&models::checkpoint_path(out, stage, cfg.eval.checkpoint), "trained autoencoder checkpoint")?;
        meta.insert(format!("{}/step", stage.slug()), ck.meta.get("step").cloned().unwrap_or_default());
        meta.insert(format!("{}/config", stage.slug()), stage.model_config(cfg));
    }
    meta.insert("seed".into(), cfg.seed.to_string());
    Ok(meta)
}

/// Encodes the train and validation sequences with the frozen autoencoders.
/// Values are rounded to `f32`, the precision the cache file stores.
pub fn build_latent_cache(ctx: &RunContext) -> Result<LatentCache> {
    let cfg = ctx.cfg;
    let meta = source_meta(cfg, ctx.out)?;
    let (svae, mut sstore) = models::new_shape_vae(cfg)?;
    let ck = read_checkpoint(&models::checkpoint_path(ctx.out, Stage::ShapeVae, cfg.eval.checkpoint), "shape autoencoder")?;
    restore_params(&ck, Stage::ShapeVae, &Stage::ShapeVae.model_config(cfg), &mut sstore)?;
    let (dvae, mut dstore) = models::new_deform_vae(cfg)?;
    let ck = read_checkpoint(&models::checkpoint_path(ctx.out, Stage::DeformVae, cfg.eval.checkpoint), "deformation autoencoder")?;
    restore_params(&ck, Stage::DeformVae, &Stage::DeformVae.model_config(cfg), &mut dstore)?;

    let mut seqs = ctx.split(Split::Train);
    seqs.extend(ctx.split(Split::Val));
    let pools = SequencePool::pools(&seqs, &cfg.sampling, false, rng::derive_seed_str(cfg.seed, "pool/cache"))?;
    let (mut shape, mut deform) = (BTreeMap::new(), BTreeMap::new());
    for pool in &pools {
        let mut r = rng::rng(rng::derive_seed_str(cfg.seed, &format!("cache/{}", pool.name)));
        let idx = crate::data::choose(&mut r, pool.frames[0].tracked.len(), cfg.sampling.surface_points);
        let pick = |t: usize| idx.iter().map(|&i| pool.frames[t].tracked[i]).collect::<Vec<_>>();
        let enc = encode_shape(&svae, &sstore, &pick(0))?;
        shape.insert(pool.name.clone(), LatentSet::new(to_f32_precision(&enc.mu))?);
        let frames = (1..pool.frames.len())
            .map(|t| {
                let enc = encode_deformation(&dvae, &dstore, &DeformPair::new(pick(0), pick(t))?)?;
                LatentSet::new(to_f32_precision(&enc.mu))
            })
            .collect::<vecset4d::Result<Vec<_>>>()?;
        deform.insert(pool.name.clone(), LatentSequence::from_frames(&frames)?);
    }
    Ok(LatentCache { shape, deform, meta })
}

/// Loads the cache when it matches the current autoencoder checkpoints,
/// otherwise rebuilds and saves it.
pub fn latent_cache(ctx: &RunContext) -> Result<LatentCache> {
    let path = cache_path(ctx.out);
    let meta = source_meta(ctx.cfg, ctx.out)?;
    if path.is_file() {
        let cached = LatentCache::load(&path)?;
        if cached.meta == meta {
            return Ok(cached);
        }
    }
    let cache = build_latent_cache(ctx)?;
    cache.save(&path)?;
    Ok(cache)
}

struct DiffusionData<'a> {
    seq: &'a Sequence,
    shape: Tensor<f64>,
    deform: Tensor<f64>,
}

fn diffusion_data<'a>(seqs: &[&'a Sequence], cache: &LatentCache) -> Result<Vec<DiffusionData<'a>>> {
    seqs.iter()
        .map(|s| {
            let missing = || PipelineError::Validation(format!("latent cache lacks {}", s.name));
            Ok(DiffusionData {
                seq: s,
                shape: cache.shape.get(&s.name).ok_or_else(missing)?.codes.clone(),
                deform: cache.deform.get(&s.name).ok_or_else(missing)?.flat(),
            })
        })
        .collect()
}

pub fn train_shape_diffusion(ctx: &RunContext) -> Result<TrainSummary> {
    let cfg = ctx.cfg;
    let cache = latent_cache(ctx)?;
    let train = diffusion_data(&nonempty(ctx.split(Split::Train), "training")?, &cache)?;
    let val = diffusion_data(&ctx.split(Split::Val), &cache)?;
    let (model, mut store) = models::new_shape_denoiser(cfg)?;
    let edm = model.cfg.edm.clone();
    let batch = ctx.batch(Stage::ShapeDiffusion);
    let loss_for = |g: &mut Graph<f32>, p: &vecset4d::tensor::Bound, d: &DiffusionData, seed: u64| -> Result<vecset4d::tensor::Var> {
        let obs = corrupt_sequence(&d.seq.meshes[..1], &cfg.corruption, rng::derive_seed(seed, 0), |_, _, _| {})?;
        let cond = model.cond.forward(g, p, &obs[0])?;
        let noise = NoiseDraw::draw(d.shape.numel(), 1, &edm, rng::derive_seed(seed, 1));
        Ok(diffusion_loss(g, &d.shape, &noise, &edm, |g, x, s| model.denoise(g, p, x, s, cond))?)
    };
    ctx.trainer(Stage::ShapeDiffusion, &[]).run(
        &mut store,
        |g, p, r| {
            let items = (0..batch)
                .map(|_| Ok((loss_for(g, p, &train[r.gen_range(0..train.len())], r.gen())?, vec![])))
                .collect::<Result<Vec<_>>>()?;
            mean_losses(g, items)
        },
        |store| validation_loss(store, &val, cfg, Stage::ShapeDiffusion, &loss_for),
    )
}

fn validation_loss(
    store: &Store,
    val: &[DiffusionData],
    cfg: &RunConfig,
    stage: Stage,
    loss_for: &dyn Fn(&mut Graph<f32>, &vecset4d::tensor::Bound, &DiffusionData, u64) -> Result<vecset4d::tensor::Var>,
) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let mut vr = val_rng(cfg, stage);
    let mut total = 0.0;
    for i in 0..VAL_EXAMPLES {
        let mut g = Graph::no_grad();
        let p = g.bind(store);
        let l = loss_for(&mut g, &p, &val[i % val.len()], vr.gen())?;
        total += f64::from(g.value(l).item());
    }
    Ok(total / VAL_EXAMPLES as f64)
}

pub fn train_deform_diffusion(ctx: &RunContext) -> Result<TrainSummary> {
    let cfg = ctx.cfg;
    let cache = latent_cache(ctx)?;
    let train = diffusion_data(&nonempty(ctx.split(Split::Train), "training")?, &cache)?;
    let val = diffusion_data(&ctx.split(Split::Val), &cache)?;
    let (model, mut store) = models::new_deform_denoiser(cfg)?;
    let edm = model.cfg.edm.clone();
    let batch = ctx.batch(Stage::DeformDiffusion);
    let loss_for = |g: &mut Graph<f32>, p: &vecset4d::tensor::Bound, d: &DiffusionData, seed: u64| -> Result<vecset4d::tensor::Var> {
        let frames = d.seq.meshes.len() - 1;
        let obs = corrupt_sequence(&d.seq.meshes, &cfg.corruption, rng::derive_seed(seed, 0), |_, _, _| {})?;
        let cond = model.cond.forward(g, p, &obs[0], &obs[1..])?;
        let shape = g.constant(d.shape.cast());
        let noise = NoiseDraw::draw(d.deform.numel(), frames, &edm, rng::derive_seed(seed, 1));
        Ok(diffusion_loss(g, &d.deform, &noise, &edm, |g, x, s| model.denoise(g, p, x, s, cond, shape, frames))?)
    };
    ctx.trainer(Stage::DeformDiffusion, &[]).run(
        &mut store,
        |g, p, r| {
            let items = (0..batch)
                .map(|_| Ok((loss_for(g, p, &train[r.gen_range(0..train.len())], r.gen())?, vec![])))
                .collect::<Result<Vec<_>>>()?;
            mean_losses(g, items)
        },
        |store| validation_loss(store, &val, cfg, Stage::DeformDiffusion, &loss_for),
    )
}

pub fn train_stage(ctx: &RunContext, stage: Stage) -> Result<TrainSummary> {
    match stage {
        Stage::ShapeVae => train_shape_vae(ctx),
        Stage::DeformVae => train_deform_vae(ctx),
        Stage::ShapeDiffusion => train_shape_diffusion(ctx),
        Stage::DeformDiffusion => train_deform_diffusion(ctx),
    }
}
