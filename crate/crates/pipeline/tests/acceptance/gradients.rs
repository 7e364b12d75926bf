use vecset4d::attention::IstaBlock;
use vecset4d::deform_vae::{DeformPair, DeformVae, DeformVaeConfig};
use vecset4d::diffusion::{diffusion_loss, DeformDenoiser, DiffusionConfig, EdmConfig, NoiseDraw, ShapeDenoiser};
use vecset4d::rng;
use vecset4d::shape_vae::{ShapeVae, ShapeVaeConfig};
use vecset4d::tensor::gradcheck::{self, check_inputs, check_params, op_cases, project, random, FD_H, FD_TOL};
use vecset4d::tensor::{Graph, ParamStore, Var};

use crate::common::{cloud, Checks, Outcome};

const SEEDS: u64 = 20;

fn perturb(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng::rng(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng::normal(&mut r);
        }
    }
}

/// Worst error over all seeds, or the first error raised.
fn worst(mut f: impl FnMut(u64) -> vecset4d::Result<f64>) -> Result<f64, String> {
    let mut w = 0.0f64;
    for seed in 0..SEEDS {
        w = w.max(f(seed).map_err(|e| format!("seed {seed}: {e}"))?);
    }
    Ok(w)
}

fn record(checks: &mut Checks, name: &str, r: Result<f64, String>) {
    match r {
        Ok(e) => checks.check(name, e < FD_TOL, format!("{e:.1e}")),
        Err(e) => checks.error(name, e),
    }
}

fn diffusion_cfg() -> DiffusionConfig {
    DiffusionConfig { cond_latents: 4, channels: 8, heads: 2, depth: 1, edm: EdmConfig::default() }
}

pub fn run() -> Outcome {
    let mut checks = Checks::new();

    let mut op_worst = 0.0f64;
    let mut op_name = "";
    let mut ops = 0;
    let mut op_err = None;
    for seed in 0..SEEDS {
        for (name, inputs, op) in op_cases(seed) {
            ops += 1;
            let r = check_inputs(&inputs, FD_H, |g, v| {
                let y = op(g, v)?;
                project(g, y, 7 + seed)
            });
            match r {
                Ok(e) if e >= op_worst => (op_worst, op_name) = (e, name),
                Ok(_) => {}
                Err(e) => op_err = Some(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    match op_err {
        Some(e) => checks.error("ops", e),
        None => checks.check(
            "ops",
            op_worst < FD_TOL,
            format!("{} ops x {SEEDS} seeds worst {op_worst:.1e} ({op_name})", ops / SEEDS as usize),
        ),
    }

    let shape_cfg = ShapeVaeConfig { latents: 4, channels: 8, heads: 2, decoder_depth: 1, kl_weight: 1e-3 };
    let r = worst(|seed| {
        let mut store = ParamStore::new();
        let vae = ShapeVae::new(shape_cfg.clone(), &mut store, &mut rng::rng(seed))?;
        perturb(&mut store, 100 + seed);
        let (x, q) = (cloud(32, 0.5, 200 + seed), cloud(16, 0.5, 300 + seed));
        let occ: Vec<u8> = (0..16).map(|i| ((i + seed as usize) % 2) as u8).collect();
        check_params(&store, FD_H, Some(120), seed, |g, p| Ok(vae.loss(g, p, &x, &q, &occ, seed)?.total))
    });
    record(&mut checks, "shape_vae_loss", r);

    let deform_cfg = DeformVaeConfig { latents: 4, channels: 8, heads: 2, decoder_depth: 1, kl_weight: 1e-3 };
    let r = worst(|seed| {
        let mut store = ParamStore::new();
        let vae = DeformVae::new(deform_cfg.clone(), &mut store, &mut rng::rng(seed))?;
        perturb(&mut store, 100 + seed);
        let src = cloud(32, 0.5, 200 + seed);
        let tgt = src.iter().map(|p| [p[0] * 1.1 + 0.05, p[1] - 0.1 * p[2], p[2]]).collect();
        let pair = DeformPair::new(src, tgt)?;
        let (q, t) = (pair.src[..16].to_vec(), pair.tgt[..16].to_vec());
        check_params(&store, FD_H, Some(120), seed, |g, p| Ok(vae.loss(g, p, &pair, &q, &t, seed)?.total))
    });
    record(&mut checks, "deform_vae_loss", r);

    let r = worst(|seed| {
        let mut store = ParamStore::new();
        let model = ShapeDenoiser::new(diffusion_cfg(), &mut store, &mut rng::rng(seed))?;
        perturb(&mut store, 100 + seed);
        let clean = random(&[4, 8], 200 + seed);
        let p1 = cloud(12, 0.5, 300 + seed);
        let draw = NoiseDraw::draw(32, 1, &model.cfg.edm, 400 + seed);
        check_params(&store, 1e-4, Some(80), seed, |g, p| {
            let cond = model.cond.forward(g, p, &p1)?;
            diffusion_loss(g, &clean, &draw, &model.cfg.edm, |g, x, s| model.denoise(g, p, x, s, cond))
        })
    });
    record(&mut checks, "diffusion_loss(shape)", r);

    let r = worst(|seed| {
        let mut store = ParamStore::new();
        let model = DeformDenoiser::new(diffusion_cfg(), &mut store, &mut rng::rng(seed))?;
        perturb(&mut store, 100 + seed);
        let clean = random(&[6, 8], 200 + seed);
        let p1 = cloud(10, 0.5, 300 + seed);
        let later = vec![cloud(10, 0.5, 301 + seed), cloud(10, 0.5, 302 + seed)];
        let shape = random(&[3, 8], 303 + seed);
        let draw = NoiseDraw::draw(48, 2, &model.cfg.edm, 400 + seed);
        check_params(&store, 1e-4, Some(80), seed, |g, p| {
            let cond = model.cond.forward(g, p, &p1, &later)?;
            let sv = g.constant(shape.clone());
            diffusion_loss(g, &clean, &draw, &model.cfg.edm, |g, x, s| model.denoise(g, p, x, s, cond, sv, 2))
        })
    });
    record(&mut checks, "diffusion_loss(deform)", r);

    let r = worst(|seed| {
        let (frames, codes, k, c) = (2, 2, 3, 8);
        let mut store = ParamStore::new();
        let block = IstaBlock::new(&mut store, "ista", c, 2, &mut rng::rng(seed))?;
        perturb(&mut store, 100 + seed);
        let d = random(&[frames * codes, c], 200 + seed);
        let cond = random(&[frames * k, c], 300 + seed);
        let f = |g: &mut Graph<f64>, v: &[Var], p: &vecset4d::tensor::Bound| -> vecset4d::Result<Var> {
            let y = block.forward(g, p, v[0], v[1], frames)?;
            gradcheck::project(g, y, 7)
        };
        let inputs = check_inputs(&[d.clone(), cond.clone()], FD_H, |g, v| {
            let p = g.bind(&store);
            f(g, v, &p)
        })?;
        let params = check_params(&store, FD_H, Some(60), seed, |g, p| {
            let dv = g.constant(d.clone());
            let cv = g.constant(cond.clone());
            f(g, &[dv, cv], p)
        })?;
        Ok(inputs.max(params))
    });
    record(&mut checks, "ista_block", r);

    checks.finish()
}
