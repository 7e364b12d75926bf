use rand::Rng as _;
use vecset4d::attention::{LatentSequence, LatentSet};
use vecset4d::deform_vae::{decode_deformation, encode_deformation, DeformPair, DeformVae, DeformVaeConfig};
use vecset4d::diffusion::{
    condition_encode_deform, condition_encode_shape, diffusion_loss, heun_sample, sample_deformation, sample_shape,
    DeformDenoiser, DiffusionConfig, EdmConfig, NoiseDraw, ShapeDenoiser,
};
use vecset4d::geometry::{primitives, sample_surface, transfer_samples, TriMesh};
use vecset4d::metrics::{correspondence_error, volumetric_iou};
use vecset4d::rng;
use vecset4d::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use vecset4d_pipeline::config::CorruptionConfig;
use vecset4d_pipeline::data::corrupt_sequence;

use crate::overfit::{cosine_lr, shape_fit, ShapeFit};

use crate::common::{Checks, Outcome};

pub fn sampler_oracle() -> Outcome {
    let mut checks = Checks::new();
    let (mu, s) = (0.7, 0.2);
    // Exact posterior mean of x0 ~ N(mu, s²) observed with noise level sigma.
    let denoiser = |x: &[f64], sigma: f64| {
        let k = s * s / (s * s + sigma * sigma);
        Ok(x.iter().map(|&v| mu + k * (v - mu)).collect())
    };
    let cfg = EdmConfig { steps: 40, ..EdmConfig::default() };
    match heun_sample(denoiser, 10_000, &cfg, 5) {
        Ok(x) => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            checks.check("mean", (mean - mu).abs() <= 0.05, format!("{mean:.4} (target {mu})"));
            checks.check(
                "variance",
                (var / (s * s) - 1.0).abs() <= 0.1,
                format!("{var:.5} (target {:.5}, {} Heun steps)", s * s, cfg.steps),
            );
        }
        Err(e) => checks.error("heun", e),
    }
    checks.finish()
}

const SHAPE_DIFF_STEPS: usize = 5000;
const DEFORM_DIFF_STEPS: usize = 3000;
const DEFORM_VAE_STEPS: usize = 1500;
const SAMPLES: u64 = 10;

fn adam_step(
    store: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    step: usize,
    total: usize,
    loss: impl FnOnce(&mut Graph<f32>, &vecset4d::tensor::Bound) -> vecset4d::Result<vecset4d::tensor::Var>,
) -> vecset4d::Result<()> {
    adam.config.lr = cosine_lr(1e-3, step, total).max(1e-5);
    let mut g = Graph::new();
    let p = g.bind(store);
    let l = loss(&mut g, &p)?;
    g.backward(l)?;
    let grads = g.param_grads(&p);
    adam.step(store, &grads)
}

/// Shape diffusion on two cached latent sets, one per conditioning cloud.
fn shape_memorization(checks: &mut Checks, fit: &ShapeFit) -> vecset4d::Result<()> {
    let chosen = [0, 2];
    let mut clean = Vec::new();
    let mut obs = Vec::new();
    for &i in &chosen {
        clean.push(fit.latents(i, 500 + i as u64)?.codes);
        let o = corrupt_sequence(&[fit.shapes[i].mesh.clone()], &CorruptionConfig::default(), 600 + i as u64, |_, _, _| {})
            .map_err(|e| vecset4d::Error::InvalidArgument(e.to_string()))?;
        obs.push(o.into_iter().next().expect("one frame"));
    }
    let mut store = ParamStore::<f32>::new();
    let model = ShapeDenoiser::new(DiffusionConfig::default(), &mut store, &mut rng::rng(7))?;
    let edm = model.cfg.edm.clone();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let mut r = rng::rng(8);
    for step in 0..SHAPE_DIFF_STEPS {
        adam_step(&mut store, &mut adam, step, SHAPE_DIFF_STEPS, |g, p| {
            let mut total = None;
            for (c, o) in clean.iter().zip(&obs) {
                let cond = model.cond.forward(g, p, o)?;
                let noise = NoiseDraw::draw(c.numel(), 1, &edm, r.gen());
                let l = diffusion_loss(g, c, &noise, &edm, |g, x, s| model.denoise(g, p, x, s, cond))?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            g.scale(total.expect("two shapes"), 0.5)
        })?;
    }
    for (k, o) in obs.iter().enumerate() {
        let cond = condition_encode_shape(&model, &store, o)?;
        let mut best = 0.0f64;
        for seed in 0..SAMPLES {
            let s = sample_shape(&model, &store, &cond, fit.vae.cfg.latents, seed)?;
            let mesh = match fit.mesh(&s) {
                Ok(m) if !m.is_empty() => m,
                _ => continue,
            };
            for &i in &chosen {
                best = best.max(volumetric_iou(&mesh, &fit.shapes[i].mesh, 100_000, 700 + seed)?);
            }
        }
        let name = fit.shapes[chosen[k]].name;
        checks.check(&format!("shape({name} cond)"), best > 0.8, format!("best iou {best:.3}"));
    }
    Ok(())
}

/// A sphere that drifts and stretches over three frames.
fn toy_sequence() -> Vec<TriMesh> {
    let base = primitives::icosphere(0.35, 3);
    let frame = |t: f64| base.map_vertices(|v| [v[0] * (1.0 + 0.15 * t) + 0.08 * t, v[1] + 0.04 * t, v[2] * (1.0 - 0.1 * t)]);
    vec![base.clone(), frame(1.0), frame(2.0)]
}

fn deform_memorization(checks: &mut Checks, fit: &ShapeFit) -> vecset4d::Result<()> {
    let meshes = toy_sequence();
    let pool = sample_surface(&meshes[0], 20_000, 900)?;
    let frames: Vec<Vec<_>> = meshes.iter().map(|m| transfer_samples(&meshes[0], m, &pool)).collect::<Result<_, _>>()?;

    let mut dstore = ParamStore::<f32>::new();
    let dvae = DeformVae::new(DeformVaeConfig::default(), &mut dstore, &mut rng::rng(9))?;
    let mut adam = Adam::new(AdamConfig::default(), &dstore);
    let mut r = rng::rng(10);
    let subset = |r: &mut rng::Rng, t: usize| -> vecset4d::Result<DeformPair> {
        let idx: Vec<usize> = (0..2048).map(|_| r.gen_range(0..pool.len())).collect();
        DeformPair::new(idx.iter().map(|&i| frames[0][i]).collect(), idx.iter().map(|&i| frames[t][i]).collect())
    };
    for step in 0..DEFORM_VAE_STEPS {
        adam_step(&mut dstore, &mut adam, step, DEFORM_VAE_STEPS, |g, p| {
            let a = subset(&mut r, 1)?;
            let b = subset(&mut r, 2)?;
            let la = dvae.loss(g, p, &a, &a.src, &a.tgt, r.gen())?;
            let lb = dvae.loss(g, p, &b, &b.src, &b.tgt, r.gen())?;
            g.add(la.total, lb.total)
        })?;
    }
    let mut er = rng::rng(11);
    let codes: Vec<LatentSet> = (1..3)
        .map(|t| LatentSet::new(encode_deformation(&dvae, &dstore, &subset(&mut er, t)?)?.mu))
        .collect::<vecset4d::Result<_>>()?;
    let clean = LatentSequence::from_frames(&codes)?.flat::<f64>();
    let shape = fit.latents(0, 12)?;
    let obs = corrupt_sequence(&meshes, &CorruptionConfig::default(), 13, |_, _, _| {})
        .map_err(|e| vecset4d::Error::InvalidArgument(e.to_string()))?;

    let mut store = ParamStore::<f32>::new();
    let model = DeformDenoiser::new(DiffusionConfig::default(), &mut store, &mut rng::rng(14))?;
    let edm = model.cfg.edm.clone();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let shape_t: Tensor<f32> = shape.codes.cast();
    for step in 0..DEFORM_DIFF_STEPS {
        adam_step(&mut store, &mut adam, step, DEFORM_DIFF_STEPS, |g, p| {
            let cond = model.cond.forward(g, p, &obs[0], &obs[1..])?;
            let sv = g.constant(shape_t.clone());
            let noise = NoiseDraw::draw(clean.numel(), 2, &edm, r.gen());
            diffusion_loss(g, &clean, &noise, &edm, |g, x, s| model.denoise(g, p, x, s, cond, sv, 2))
        })?;
    }

    let eval_pts = sample_surface(&meshes[0], 4000, 15)?;
    let gt: Vec<Vec<_>> = meshes.iter().map(|m| transfer_samples(&meshes[0], m, &eval_pts)).collect::<Result<_, _>>()?;
    let cond = condition_encode_deform(&model, &store, &obs[0], &obs[1..])?;
    let mut best = f64::INFINITY;
    for seed in 0..SAMPLES {
        let d = sample_deformation(&model, &store, &cond, &shape, dvae.cfg.latents, seed)?;
        let mut worst = 0.0f64;
        for t in 0..2 {
            let pred = decode_deformation(&dvae, &dstore, &d.frame(t), &eval_pts.points, 8192)?;
            worst = worst.max(correspondence_error(&pred, &gt[t + 1])?);
        }
        best = best.min(worst);
    }
    checks.check("deform(3 frames)", best < 0.05, format!("best worst-frame corr {best:.4}"));
    Ok(())
}

pub fn memorization() -> Outcome {
    let mut checks = Checks::new();
    let fit = checks.excluding(shape_fit);
    match fit {
        Ok(fit) => {
            if let Err(e) = shape_memorization(&mut checks, fit) {
                checks.error("shape", e);
            }
            if let Err(e) = deform_memorization(&mut checks, fit) {
                checks.error("deform", e);
            }
        }
        Err(e) => checks.error("shape vae", e),
    }
    checks.finish()
}
