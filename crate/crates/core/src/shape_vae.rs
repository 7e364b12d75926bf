//! Point cloud → KL-regularised latent set → occupancy field.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlock, LatentSet, LayerNorm, Linear, PosEmb};
use crate::error::{Error, Result};
use crate::geometry::{canonical_start, farthest_point_sample, Vec3};
use crate::rng::{self, Rng};
use crate::tensor::{Bound, Graph, ParamStore, Real, Tensor, Var};

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeVaeConfig {
    pub latents: usize,
    pub channels: usize,
    pub heads: usize,
    pub decoder_depth: usize,
    pub kl_weight: f64,
}

impl Default for ShapeVaeConfig {
    fn default() -> Self {
        Self { latents: 16, channels: 32, heads: 4, decoder_depth: 4, kl_weight: 1e-3 }
    }
}

/// Cross-attention from embedded FPS anchors to the embedded full cloud.
/// The FPS start is the point farthest from the centroid, so the anchors do
/// not depend on input order.
#[derive(Clone, Debug)]
pub struct PointSetEncoder {
    pub pe: PosEmb,
    pub cross: AttentionBlock,
}

impl PointSetEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            pe: PosEmb::new(store, &format!("{name}.pe"), channels, rng),
            cross: AttentionBlock::cross_attention(store, &format!("{name}.cross"), channels, heads, true, rng)?,
        })
    }

    pub fn anchors(points: &[Vec3], m: usize) -> Result<Vec<usize>> {
        if m > points.len() {
            return Err(Error::InvalidArgument(format!("{m} latents requested from {} points", points.len())));
        }
        farthest_point_sample(points, m, canonical_start(points))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, points: &[Vec3], m: usize) -> Result<Var> {
        let idx = Self::anchors(points, m)?;
        let anchors: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
        let q = self.pe.forward(g, p, &anchors)?;
        let kv = self.pe.forward(g, p, points)?;
        self.cross.forward_cross(g, p, q, kv, 1)
    }
}

/// Latent self-attention stack, then query cross-attention and a linear
/// read-out of one logit per query.
#[derive(Clone, Debug)]
pub struct OccupancyDecoder {
    pub layers: Vec<AttentionBlock>,
    pub pe: PosEmb,
    pub query: AttentionBlock,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl OccupancyDecoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &ShapeVaeConfig, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        let layers = (0..cfg.decoder_depth)
            .map(|i| AttentionBlock::self_attention(store, &format!("{name}.self{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            pe: PosEmb::new(store, &format!("{name}.pe"), c, rng),
            query: AttentionBlock::cross_attention(store, &format!("{name}.query"), c, cfg.heads, false, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), c, rng),
            head: Linear::new(store, &format!("{name}.head"), c, 1, true, rng),
        })
    }

    /// Latents after the self-attention stack; reusable across query batches.
    pub fn context<T: Real>(&self, g: &mut Graph<T>, p: &Bound, latents: Var) -> Result<Var> {
        let mut x = latents;
        for l in &self.layers {
            x = l.forward_self(g, p, x, 1)?;
        }
        Ok(x)
    }

    /// `[Q, 1]` logits given a context from [`OccupancyDecoder::context`].
    pub fn logits<T: Real>(&self, g: &mut Graph<T>, p: &Bound, context: Var, queries: &[Vec3]) -> Result<Var> {
        let q = self.pe.forward(g, p, queries)?;
        let z = self.query.forward_cross(g, p, q, context, 1)?;
        let z = self.norm.forward(g, p, z)?;
        self.head.forward(g, p, z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEncoderOutput {
    pub mu: Tensor<f64>,
    pub logvar: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct ShapeVae {
    pub cfg: ShapeVaeConfig,
    pub encoder: PointSetEncoder,
    pub mu: Linear,
    pub logvar: Linear,
    pub decoder: OccupancyDecoder,
}

/// Graph handles for one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct VaeLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

impl ShapeVae {
    pub fn new<T: Real>(cfg: ShapeVaeConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            encoder: PointSetEncoder::new(store, "enc", c, cfg.heads, rng)?,
            mu: Linear::new(store, "enc.mu", c, c, true, rng),
            logvar: Linear::new(store, "enc.logvar", c, c, true, rng),
            decoder: OccupancyDecoder::new(store, "dec", &cfg, rng)?,
            cfg,
        })
    }

    /// `(mu, logvar)` graph nodes, `logvar` clamped to `±LOGVAR_CLAMP`.
    pub fn encode_vars<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: &[Vec3]) -> Result<(Var, Var)> {
        let h = self.encoder.forward(g, p, x, self.cfg.latents)?;
        let mu = self.mu.forward(g, p, h)?;
        let lv = self.logvar.forward(g, p, h)?;
        let lv = g.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        Ok((mu, lv))
    }

    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: &[Vec3],
        queries: &[Vec3],
        occupancy: &[u8],
        seed: u64,
    ) -> Result<VaeLoss> {
        if queries.len() != occupancy.len() {
            return Err(Error::InvalidArgument(format!("{} queries with {} labels", queries.len(), occupancy.len())));
        }
        if occupancy.iter().any(|&o| o > 1) {
            return Err(Error::InvalidArgument("occupancy labels must be 0 or 1".into()));
        }
        let (mu, lv) = self.encode_vars(g, p, x)?;
        let s = reparameterize_var(g, mu, lv, seed)?;
        let ctx = self.decoder.context(g, p, s)?;
        let logits = self.decoder.logits(g, p, ctx, queries)?;
        let targets: Vec<T> = occupancy.iter().map(|&o| T::of(o as f64)).collect();
        let recon = g.bce_with_logits(logits, &targets)?;
        let kl = kl_var(g, mu, lv)?;
        let weighted = g.scale(kl, self.cfg.kl_weight)?;
        let total = g.add(recon, weighted)?;
        Ok(VaeLoss { total, recon, kl })
    }
}

/// `mu + exp(logvar / 2) ⊙ ε` with seeded ε.
pub fn reparameterize_var<T: Real>(g: &mut Graph<T>, mu: Var, logvar: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    let mut r = rng::rng(seed);
    let eps = Tensor::<T>::from_f64(shape.clone(), &rng::normals(&mut r, shape.iter().product()))?;
    let eps = g.constant(eps);
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// Mean over codes of `0.5 · Σ_c (mu² + e^logvar − 1 − logvar)`.
pub fn kl_var<T: Real>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let codes = g.value(mu).rows();
    let m2 = g.square(mu)?;
    let e = g.exp(logvar)?;
    let a = g.add(m2, e)?;
    let b = g.sub(a, logvar)?;
    let b = g.add_scalar(b, -1.0)?;
    let s = g.sum(b)?;
    g.scale(s, 0.5 / codes as f64)
}

pub fn encode_shape<T: Real>(vae: &ShapeVae, store: &ParamStore<T>, x: &[Vec3]) -> Result<ShapeEncoderOutput> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let (mu, lv) = vae.encode_vars(&mut g, &p, x)?;
    Ok(ShapeEncoderOutput { mu: g.value(mu).cast(), logvar: g.value(lv).cast() })
}

pub fn reparameterize(enc: &ShapeEncoderOutput, seed: u64) -> Result<LatentSet> {
    let mut g = Graph::<f64>::no_grad();
    let mu = g.constant(enc.mu.clone());
    let lv = g.constant(enc.logvar.clone());
    let s = reparameterize_var(&mut g, mu, lv, seed)?;
    LatentSet::new(g.value(s).clone())
}

pub fn kl_divergence(enc: &ShapeEncoderOutput) -> Result<f64> {
    let mut g = Graph::<f64>::no_grad();
    let mu = g.constant(enc.mu.clone());
    let lv = g.constant(enc.logvar.clone());
    let kl = kl_var(&mut g, mu, lv)?;
    Ok(g.value(kl).item())
}

/// Occupancy probabilities, decoded in chunks of `chunk` queries.
pub fn decode_occupancy<T: Real>(
    vae: &ShapeVae,
    store: &ParamStore<T>,
    s: &LatentSet,
    queries: &[Vec3],
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let z = g.constant(s.tensor());
    let ctx = vae.decoder.context(&mut g, &p, z)?;
    let mark = g.len();
    let mut out = Vec::with_capacity(queries.len());
    for part in queries.chunks(chunk.max(1)) {
        g.truncate(mark);
        let l = vae.decoder.logits(&mut g, &p, ctx, part)?;
        let l = g.sigmoid(l)?;
        out.extend(g.value(l).data().iter().map(|v| v.f64()));
    }
    Ok(out)
}
