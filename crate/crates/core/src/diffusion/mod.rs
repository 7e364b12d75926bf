//! EDM latent diffusion over shape sets and deformation sequences.

pub mod edm;
pub mod models;

pub use edm::{edm_precondition, heun_sample, karras_schedule, sample_sigma, EdmConfig, NoiseDraw, Precond};
pub use models::{
    diffusion_loss, DeformCondEncoder, DeformDenoiser, DiffusionConfig, NoiseEmbedding, ShapeCondEncoder, ShapeDenoiser,
};

use crate::attention::{LatentSequence, LatentSet};
use crate::error::Result;
use crate::geometry::Vec3;
use crate::tensor::{Graph, ParamStore, Real, Tensor};

/// Condition codes for a first observed frame.
pub fn condition_encode_shape<T: Real>(model: &ShapeDenoiser, store: &ParamStore<T>, p1: &[Vec3]) -> Result<LatentSet> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let c = model.cond.forward(&mut g, &p, p1)?;
    LatentSet::from_tensor(g.value(c))
}

/// Condition codes for each later frame, paired with the first.
pub fn condition_encode_deform<T: Real>(
    model: &DeformDenoiser,
    store: &ParamStore<T>,
    p1: &[Vec3],
    later: &[Vec<Vec3>],
) -> Result<LatentSequence> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let c = model.cond.forward(&mut g, &p, p1, later)?;
    LatentSequence::from_flat(g.value(c), later.len())
}

pub fn denoise_shape<T: Real>(
    model: &ShapeDenoiser,
    store: &ParamStore<T>,
    s_hat: &LatentSet,
    sigma: f64,
    cond: &LatentSet,
) -> Result<LatentSet> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let x = g.constant(s_hat.tensor());
    let c = g.constant(cond.tensor());
    let d = model.denoise(&mut g, &p, x, sigma, c)?;
    LatentSet::from_tensor(g.value(d))
}

pub fn denoise_deformation_sequence<T: Real>(
    model: &DeformDenoiser,
    store: &ParamStore<T>,
    d_hat: &LatentSequence,
    sigma: f64,
    cond: &LatentSequence,
    shape_cond: &LatentSet,
) -> Result<LatentSequence> {
    if d_hat.frames() != cond.frames() {
        return Err(crate::Error::InvalidArgument(format!(
            "{} deformation frames vs {} condition frames",
            d_hat.frames(),
            cond.frames()
        )));
    }
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let x = g.constant(d_hat.flat());
    let c = g.constant(cond.flat());
    let s = g.constant(shape_cond.tensor());
    let d = model.denoise(&mut g, &p, x, sigma, c, s, d_hat.frames())?;
    LatentSequence::from_flat(g.value(d), d_hat.frames())
}

/// Heun sample of a shape set given its condition codes.
pub fn sample_shape<T: Real>(
    model: &ShapeDenoiser,
    store: &ParamStore<T>,
    cond: &LatentSet,
    latents: usize,
    seed: u64,
) -> Result<LatentSet> {
    let c = model.cfg.channels;
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let cv = g.constant(cond.tensor());
    let mark = g.len();
    let x = heun_sample(
        |x, sigma| {
            g.truncate(mark);
            let xv = g.constant(Tensor::<T>::from_f64(vec![latents, c], x)?);
            let d = model.denoise(&mut g, &p, xv, sigma, cv)?;
            Ok(g.value(d).to_f64_vec())
        },
        latents * c,
        &model.cfg.edm,
        seed,
    )?;
    LatentSet::new(Tensor::new(vec![latents, c], x)?)
}

/// Heun sample of a deformation sequence given per-frame conditions and the
/// shape latents.
pub fn sample_deformation<T: Real>(
    model: &DeformDenoiser,
    store: &ParamStore<T>,
    cond: &LatentSequence,
    shape: &LatentSet,
    latents: usize,
    seed: u64,
) -> Result<LatentSequence> {
    let (frames, c) = (cond.frames(), model.cfg.channels);
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let cv = g.constant(cond.flat());
    let sv = g.constant(shape.tensor());
    let mark = g.len();
    let x = heun_sample(
        |x, sigma| {
            g.truncate(mark);
            let xv = g.constant(Tensor::<T>::from_f64(vec![frames * latents, c], x)?);
            let d = model.denoise(&mut g, &p, xv, sigma, cv, sv, frames)?;
            Ok(g.value(d).to_f64_vec())
        },
        frames * latents * c,
        &model.cfg.edm,
        seed,
    )?;
    LatentSequence::new(Tensor::new(vec![frames, latents, c], x)?)
}
