use std::sync::OnceLock;

use rand::Rng as _;
use vecset4d::deform_vae::{decode_deformation, encode_deformation, DeformPair, DeformVae, DeformVaeConfig};
use vecset4d::geometry::sampling::{displace, normal_offsets, uniform_points};
use vecset4d::geometry::{near_surface_points, occupancy_query, primitives, sample_surface, vec3, TriMesh, Vec3};
use vecset4d::metrics::volumetric_iou;
use vecset4d::rng::{self, Rng};
use vecset4d::shape_vae::{decode_occupancy, encode_shape, ShapeVae, ShapeVaeConfig};
use vecset4d::tensor::{Adam, AdamConfig, Graph, ParamStore};
use vecset4d::attention::LatentSet;
use vecset4d_pipeline::recon::occupancy_mesh;

use crate::common::{Checks, Outcome};

pub const BOUND: f64 = 0.55;
const POINTS: usize = 2048;
const QUERIES: usize = 1024;
const SIGMAS: [f64; 2] = [0.05, 0.15];
const SHAPE_STEPS: usize = 3000;
const DEFORM_STEPS: usize = 2500;
const DEFORM_POINTS: usize = 512;

/// Cosine decay from `peak` to zero over `total` steps.
pub fn cosine_lr(peak: f64, step: usize, total: usize) -> f64 {
    0.5 * peak * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

pub struct Primitive {
    pub name: &'static str,
    pub mesh: TriMesh,
    surface: Vec<Vec3>,
    uniform: (Vec<Vec3>, Vec<u8>),
    near: (Vec<Vec3>, Vec<u8>),
}

impl Primitive {
    fn new(name: &'static str, mesh: TriMesh, seed: u64) -> vecset4d::Result<Self> {
        let pool = sample_surface(&mesh, 20_000, seed)?;
        let near = near_surface_points(&mesh, &pool, SIGMAS, seed + 1)?;
        let uq = uniform_points(20_000, [-BOUND; 3], [BOUND; 3], &mut rng::rng(seed + 2));
        let uo = occupancy_query(&mesh, &uq)?;
        Ok(Self { name, surface: pool.points, uniform: (uq, uo), near: (near.queries, near.occupancy), mesh })
    }

    /// A random surface cloud and a half-uniform, half-near query batch.
    fn example(&self, r: &mut Rng) -> (Vec<Vec3>, Vec<Vec3>, Vec<u8>) {
        let pick = |v: &[Vec3], r: &mut Rng, n| (0..n).map(|_| v[r.gen_range(0..v.len())]).collect::<Vec<_>>();
        let points = pick(&self.surface, r, POINTS);
        let mut q = Vec::with_capacity(2 * QUERIES);
        let mut o = Vec::with_capacity(2 * QUERIES);
        for (qs, os) in [&self.uniform, &self.near] {
            for _ in 0..QUERIES {
                let i = r.gen_range(0..qs.len());
                q.push(qs[i]);
                o.push(os[i]);
            }
        }
        (points, q, o)
    }
}

pub fn primitives() -> vecset4d::Result<Vec<Primitive>> {
    Ok(vec![
        Primitive::new("sphere", primitives::icosphere(0.35, 3), 10)?,
        Primitive::new("ellipsoid", primitives::ellipsoid([0.45, 0.3, 0.2], 3), 20)?,
        Primitive::new("box", primitives::cuboid([-0.4, -0.25, -0.3], [0.4, 0.25, 0.3], 4), 30)?,
        Primitive::new("capsule", primitives::capsule(0.2, 0.25, 6, 24), 40)?,
    ])
}

pub struct ShapeFit {
    pub vae: ShapeVae,
    pub store: ParamStore<f32>,
    pub shapes: Vec<Primitive>,
    pub steps: usize,
}

impl ShapeFit {
    /// Posterior mean for a fresh surface cloud of shape `i`.
    pub fn latents(&self, i: usize, seed: u64) -> vecset4d::Result<LatentSet> {
        let pts = sample_surface(&self.shapes[i].mesh, POINTS, seed)?.points;
        LatentSet::new(encode_shape(&self.vae, &self.store, &pts)?.mu)
    }

    pub fn mesh(&self, s: &LatentSet) -> vecset4d_pipeline::Result<TriMesh> {
        occupancy_mesh(&self.vae, &self.store, s, 64, BOUND)
    }

    /// Classification accuracy on fresh queries drawn like the training batches.
    fn accuracy(&self, i: usize, seed: u64) -> vecset4d::Result<f64> {
        let mut r = rng::rng(seed);
        let s = self.latents(i, r.gen())?;
        let (mut q, mut o) = (Vec::new(), Vec::new());
        for _ in 0..4 {
            let (_, qs, os) = self.shapes[i].example(&mut r);
            q.extend(qs);
            o.extend(os);
        }
        let p = decode_occupancy(&self.vae, &self.store, &s, &q, 8192)?;
        Ok(p.iter().zip(&o).filter(|(p, &o)| (**p > 0.5) == (o == 1)).count() as f64 / q.len() as f64)
    }
}

fn train_shape_vae() -> vecset4d::Result<ShapeFit> {
    let shapes = primitives()?;
    let mut store = ParamStore::<f32>::new();
    let vae = ShapeVae::new(ShapeVaeConfig::default(), &mut store, &mut rng::rng(1))?;
    let peak = 1e-3;
    let mut adam = Adam::new(AdamConfig { lr: peak, ..AdamConfig::default() }, &store);
    let mut r = rng::rng(2);
    for step in 0..SHAPE_STEPS {
        adam.config.lr = cosine_lr(peak, step, SHAPE_STEPS).max(1e-5);
        let mut g = Graph::new();
        let p = g.bind(&store);
        let mut total = None;
        for sh in &shapes {
            let (x, q, o) = sh.example(&mut r);
            let l = vae.loss(&mut g, &p, &x, &q, &o, r.gen())?.total;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = g.scale(total.expect("four shapes"), 1.0 / shapes.len() as f64)?;
        g.backward(loss)?;
        let grads = g.param_grads(&p);
        adam.step(&mut store, &grads)?;
    }
    Ok(ShapeFit { vae, store, shapes, steps: SHAPE_STEPS })
}

static SHAPE_FIT: OnceLock<Result<ShapeFit, String>> = OnceLock::new();

/// The overfit shape autoencoder, trained on first use.
pub fn shape_fit() -> &'static Result<ShapeFit, String> {
    SHAPE_FIT.get_or_init(|| train_shape_vae().map_err(|e| e.to_string()))
}

pub fn shape_vae() -> Outcome {
    let mut checks = Checks::new();
    let fit = match shape_fit() {
        Ok(f) => f,
        Err(e) => {
            checks.error("training", e);
            return checks.finish();
        }
    };
    checks.check("steps", fit.steps <= 3000, format!("{}", fit.steps));
    for (i, sh) in fit.shapes.iter().enumerate() {
        let acc = fit.accuracy(i, 100 + i as u64);
        let iou = fit
            .latents(i, 200 + i as u64)
            .map_err(|e| e.to_string())
            .and_then(|s| fit.mesh(&s).map_err(|e| e.to_string()))
            .and_then(|m| volumetric_iou(&m, &sh.mesh, 100_000, 300 + i as u64).map_err(|e| e.to_string()));
        match (acc, iou) {
            (Ok(a), Ok(v)) => checks.check(sh.name, a >= 0.95 && v >= 0.85, format!("acc {a:.3} iou {v:.3}")),
            (Err(e), _) => checks.error(sh.name, e),
            (_, Err(e)) => checks.error(sh.name, e),
        }
    }
    checks.finish()
}

struct DeformData {
    src: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl DeformData {
    /// Source cloud, and queries made of the cloud plus normal offsets.
    fn draw(&self, r: &mut Rng) -> vecset4d::Result<(Vec<Vec3>, Vec<Vec3>)> {
        let idx: Vec<usize> = (0..DEFORM_POINTS).map(|_| r.gen_range(0..self.src.len())).collect();
        let src: Vec<Vec3> = idx.iter().map(|&i| self.src[i]).collect();
        let normals: Vec<Vec3> = idx.iter().map(|&i| self.normals[i]).collect();
        let mut q = src.clone();
        q.extend(displace(&src, &normals, &normal_offsets(DEFORM_POINTS, SIGMAS, r.gen())?));
        Ok((src, q))
    }
}

const SHIFT: Vec3 = [0.3, 0.0, 0.0];

fn translate(p: &[Vec3]) -> Vec<Vec3> {
    p.iter().map(|&v| vec3::add(v, SHIFT)).collect()
}

fn identity_mse(vae: &DeformVae, store: &ParamStore<f32>, data: &DeformData, seed: u64) -> vecset4d::Result<f64> {
    let mut r = rng::rng(seed);
    let (src, q) = data.draw(&mut r)?;
    let pair = DeformPair::new(src.clone(), src)?;
    let d = LatentSet::new(encode_deformation(vae, store, &pair)?.mu)?;
    let out = decode_deformation(vae, store, &d, &q, 8192)?;
    Ok(out.iter().zip(&q).map(|(a, b)| vec3::dist2(*a, *b)).sum::<f64>() / q.len() as f64)
}

fn translation_error(vae: &DeformVae, store: &ParamStore<f32>, data: &DeformData, seed: u64) -> vecset4d::Result<f64> {
    let mut r = rng::rng(seed);
    let (src, q) = data.draw(&mut r)?;
    let pair = DeformPair::new(src.clone(), translate(&src))?;
    let d = LatentSet::new(encode_deformation(vae, store, &pair)?.mu)?;
    let out = decode_deformation(vae, store, &d, &q, 8192)?;
    Ok(out
        .iter()
        .zip(translate(&q))
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
        .fold(0.0, f64::max))
}

pub fn deform_vae() -> Outcome {
    let mut checks = Checks::new();
    if let Err(e) = deform_vae_checks(&mut checks) {
        checks.error("run", e);
    }
    checks.finish()
}

fn deform_vae_checks(checks: &mut Checks) -> vecset4d::Result<()> {
    let mesh = primitives::icosphere(0.35, 3);
    let pool = sample_surface(&mesh, 20_000, 50)?;
    let data = DeformData { src: pool.points, normals: pool.normals };
    let mut store = ParamStore::<f32>::new();
    let vae = DeformVae::new(DeformVaeConfig::default(), &mut store, &mut rng::rng(3))?;
    let init = identity_mse(&vae, &store, &data, 60)?;
    checks.check("identity@init", init < 1e-5, format!("mse {init:.1e}"));

    let peak = 2e-3;
    let mut adam = Adam::new(AdamConfig { lr: peak, ..AdamConfig::default() }, &store);
    let mut r = rng::rng(4);
    for step in 0..DEFORM_STEPS {
        adam.config.lr = cosine_lr(peak, step, DEFORM_STEPS).max(1e-6);
        let mut g = Graph::new();
        let p = g.bind(&store);
        let (src, q) = data.draw(&mut r)?;
        let shift = vae.loss(&mut g, &p, &DeformPair::new(src.clone(), translate(&src))?, &q, &translate(&q), r.gen())?;
        let (src, q) = data.draw(&mut r)?;
        let still = vae.loss(&mut g, &p, &DeformPair::new(src.clone(), src)?, &q, &q, r.gen())?;
        let total = g.add(shift.total, still.total)?;
        g.backward(total)?;
        let grads = g.param_grads(&p);
        adam.step(&mut store, &grads)?;
    }
    let err = translation_error(&vae, &store, &data, 70)?;
    checks.check("translation", err <= 0.01, format!("max |dq error| {err:.4} after {DEFORM_STEPS} steps"));
    let after = identity_mse(&vae, &store, &data, 80)?;
    checks.check("identity@trained", after < 1e-5, format!("mse {after:.1e}"));
    Ok(())
}
