use serde::{Deserialize, Serialize};

use super::edm::{edm_precondition, EdmConfig, NoiseDraw};
use crate::attention::{AttentionBlock, IstaBlock, LayerNorm, Linear};
use crate::deform_vae::PairEncoder;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::Rng;
use crate::shape_vae::PointSetEncoder;
use crate::tensor::{Bound, Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Condition codes per frame.
    pub cond_latents: usize,
    pub channels: usize,
    pub heads: usize,
    pub depth: usize,
    pub edm: EdmConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { cond_latents: 16, channels: 32, heads: 4, depth: 3, edm: EdmConfig::default() }
    }
}

const NOISE_OCTAVES: usize = 8;

/// MLP embedding of `c_noise`, added to every code.
#[derive(Clone, Debug)]
pub struct NoiseEmbedding {
    pub l1: Linear,
    pub l2: Linear,
}

impl NoiseEmbedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let f = 1 + 2 * NOISE_OCTAVES;
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), f, channels, true, rng),
            l2: Linear::new(store, &format!("{name}.l2"), channels, channels, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, c_noise: f64) -> Result<Var> {
        let mut f = vec![c_noise];
        for k in 0..NOISE_OCTAVES {
            let w = (1u32 << k) as f64 * c_noise;
            f.push(w.sin());
            f.push(w.cos());
        }
        let x = g.constant(Tensor::from_f64(vec![1, f.len()], &f)?);
        let h = self.l1.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.l2.forward(g, p, h)
    }
}

/// Deterministic encoder of the first observed frame.
#[derive(Clone, Debug)]
pub struct ShapeCondEncoder {
    pub encoder: PointSetEncoder,
    pub out: Linear,
    pub codes: usize,
}

impl ShapeCondEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &DiffusionConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            encoder: PointSetEncoder::new(store, &format!("{name}.enc"), cfg.channels, cfg.heads, rng)?,
            out: Linear::new(store, &format!("{name}.out"), cfg.channels, cfg.channels, true, rng),
            codes: cfg.cond_latents,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, p1: &[Vec3]) -> Result<Var> {
        if p1.len() < self.codes {
            return Err(Error::InvalidArgument(format!("{} observed points for {} condition codes", p1.len(), self.codes)));
        }
        let h = self.encoder.forward(g, p, p1, self.codes)?;
        self.out.forward(g, p, h)
    }
}

/// Deterministic encoder of (first frame, frame t) observation pairs.
#[derive(Clone, Debug)]
pub struct DeformCondEncoder {
    pub encoder: PairEncoder,
    pub out: Linear,
    pub codes: usize,
}

impl DeformCondEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &DiffusionConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            encoder: PairEncoder::new(store, &format!("{name}.enc"), cfg.channels, cfg.heads, rng)?,
            out: Linear::new(store, &format!("{name}.out"), cfg.channels, cfg.channels, true, rng),
            codes: cfg.cond_latents,
        })
    }

    pub fn forward_pair<T: Real>(&self, g: &mut Graph<T>, p: &Bound, p1: &[Vec3], pt: &[Vec3]) -> Result<Var> {
        if p1.len() != pt.len() {
            return Err(Error::InvalidArgument(format!("{} vs {} observed points", p1.len(), pt.len())));
        }
        if p1.len() < self.codes {
            return Err(Error::InvalidArgument(format!("{} observed points for {} condition codes", p1.len(), self.codes)));
        }
        let h = self.encoder.forward(g, p, p1, pt, self.codes)?;
        self.out.forward(g, p, h)
    }

    /// Frame-major `[F·K, C]` conditions for frames `2..=T` given `P¹`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, p1: &[Vec3], later: &[Vec<Vec3>]) -> Result<Var> {
        let parts = later.iter().map(|pt| self.forward_pair(g, p, p1, pt)).collect::<Result<Vec<_>>>()?;
        g.concat_rows(&parts)
    }
}

fn precondition<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    sigma: f64,
    edm: &EdmConfig,
    net: impl FnOnce(&mut Graph<T>, Var, f64) -> Result<Var>,
) -> Result<Var> {
    let c = edm_precondition(sigma, edm);
    let x_in = g.scale(x, c.c_in)?;
    let f = net(g, x_in, c.c_noise)?;
    let f = g.scale(f, c.c_out)?;
    let skip = g.scale(x, c.c_skip)?;
    g.add(skip, f)
}

/// Shape-set denoiser: interleaved within-set self-attention and
/// cross-attention to the condition codes.
#[derive(Clone, Debug)]
pub struct ShapeDenoiser {
    pub cfg: DiffusionConfig,
    pub cond: ShapeCondEncoder,
    pub input: Linear,
    pub noise: NoiseEmbedding,
    pub blocks: Vec<(AttentionBlock, AttentionBlock)>,
    pub norm: LayerNorm,
    pub out: Linear,
}

impl ShapeDenoiser {
    pub fn new<T: Real>(cfg: DiffusionConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        let blocks = (0..cfg.depth)
            .map(|i| {
                Ok((
                    AttentionBlock::self_attention(store, &format!("net.space{i}"), c, cfg.heads, rng)?,
                    AttentionBlock::cross_attention(store, &format!("net.cond{i}"), c, cfg.heads, true, rng)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cond: ShapeCondEncoder::new(store, "cond", &cfg, rng)?,
            input: Linear::new(store, "net.in", c, c, true, rng),
            noise: NoiseEmbedding::new(store, "net.noise", c, rng),
            blocks,
            norm: LayerNorm::new(store, "net.norm", c, rng),
            out: Linear::zeroed(store, "net.out", c, c, rng),
            cfg,
        })
    }

    pub fn net<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, c_noise: f64, cond: Var) -> Result<Var> {
        let h = self.input.forward(g, p, x)?;
        let e = self.noise.forward(g, p, c_noise)?;
        let mut h = g.add_row(h, e)?;
        for (space, cross) in &self.blocks {
            h = space.forward_self(g, p, h, 1)?;
            h = cross.forward_cross(g, p, h, cond, 1)?;
        }
        let h = self.norm.forward(g, p, h)?;
        self.out.forward(g, p, h)
    }

    /// D(x; σ) for `x: [M, C]`.
    pub fn denoise<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, sigma: f64, cond: Var) -> Result<Var> {
        precondition(g, x, sigma, &self.cfg.edm, |g, x, c| self.net(g, p, x, c, cond))
    }
}

/// Deformation-sequence denoiser: a stack of interleaved spatio-temporal
/// blocks. Each frame's condition is its pair encoding followed by the
/// shape latents.
#[derive(Clone, Debug)]
pub struct DeformDenoiser {
    pub cfg: DiffusionConfig,
    pub cond: DeformCondEncoder,
    pub input: Linear,
    pub noise: NoiseEmbedding,
    pub blocks: Vec<IstaBlock>,
    pub norm: LayerNorm,
    pub out: Linear,
}

impl DeformDenoiser {
    pub fn new<T: Real>(cfg: DiffusionConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        let blocks = (0..cfg.depth)
            .map(|i| IstaBlock::new(store, &format!("net.ista{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            cond: DeformCondEncoder::new(store, "cond", &cfg, rng)?,
            input: Linear::new(store, "net.in", c, c, true, rng),
            noise: NoiseEmbedding::new(store, "net.noise", c, rng),
            blocks,
            norm: LayerNorm::new(store, "net.norm", c, rng),
            out: Linear::zeroed(store, "net.out", c, c, rng),
            cfg,
        })
    }

    /// Per-frame `[cond^t; shape]` stacked frame-major: `[F·(K+M), C]`.
    pub fn frame_conditions<T: Real>(&self, g: &mut Graph<T>, cond: Var, shape: Var, frames: usize) -> Result<Var> {
        let (rows, m) = (g.shape(cond)[0], g.shape(shape)[0]);
        if frames == 0 || rows % frames != 0 {
            return Err(Error::ShapeMismatch { op: "frame conditions", lhs: g.shape(cond).to_vec(), rhs: vec![frames] });
        }
        let k = rows / frames;
        let all = g.concat_rows(&[cond, shape])?;
        let idx: Vec<usize> = (0..frames).flat_map(|t| (t * k..(t + 1) * k).chain(rows..rows + m)).collect();
        g.gather_rows(all, &idx)
    }

    pub fn net<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, c_noise: f64, cond: Var, frames: usize) -> Result<Var> {
        let h = self.input.forward(g, p, x)?;
        let e = self.noise.forward(g, p, c_noise)?;
        let mut h = g.add_row(h, e)?;
        for b in &self.blocks {
            h = b.forward(g, p, h, cond, frames)?;
        }
        let h = self.norm.forward(g, p, h)?;
        self.out.forward(g, p, h)
    }

    /// D(x; σ) for frame-major `x: [F·M, C]`; `cond: [F·K, C]`, `shape: [M', C]`.
    pub fn denoise<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        sigma: f64,
        cond: Var,
        shape: Var,
        frames: usize,
    ) -> Result<Var> {
        let (xr, cr) = (g.shape(x)[0], g.shape(cond)[0]);
        if frames == 0 || xr % frames != 0 || cr % frames != 0 {
            return Err(Error::ShapeMismatch { op: "denoise_deformation_sequence", lhs: g.shape(x).to_vec(), rhs: g.shape(cond).to_vec() });
        }
        let full = self.frame_conditions(g, cond, shape, frames)?;
        precondition(g, x, sigma, &self.cfg.edm, |g, x, c| self.net(g, p, x, c, full, frames))
    }
}

/// `λ(σ) · Σ (D(clean + σε; σ) − clean)²` for one noise draw.
pub fn diffusion_loss<T: Real>(
    g: &mut Graph<T>,
    clean: &Tensor<f64>,
    noise: &NoiseDraw,
    edm: &EdmConfig,
    denoise: impl FnOnce(&mut Graph<T>, Var, f64) -> Result<Var>,
) -> Result<Var> {
    let noised = Tensor::<T>::from_f64(clean.shape().to_vec(), &noise.apply(clean.data()))?;
    let x = g.constant(noised);
    let d = denoise(g, x, noise.sigma)?;
    let target = g.constant(clean.cast());
    let diff = g.sub(d, target)?;
    let sq = g.square(diff)?;
    let s = g.sum(sq)?;
    g.scale(s, edm.loss_weight(noise.sigma))
}
