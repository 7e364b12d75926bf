//! Paired point clouds → KL-regularised deformation latent set → offset
//! field that moves source-frame points to the target frame.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlock, LatentSet, Linear, PosEmb};
use crate::error::{Error, Result};
use crate::geometry::{canonical_start, farthest_point_sample, Vec3};
use crate::rng::Rng;
use crate::shape_vae::{kl_var, reparameterize_var, ShapeEncoderOutput, VaeLoss, LOGVAR_CLAMP};
use crate::tensor::{Bound, Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformVaeConfig {
    pub latents: usize,
    pub channels: usize,
    pub heads: usize,
    pub decoder_depth: usize,
    pub kl_weight: f64,
}

impl Default for DeformVaeConfig {
    fn default() -> Self {
        Self { latents: 16, channels: 32, heads: 4, decoder_depth: 2, kl_weight: 1e-6 }
    }
}

/// Row-aligned source and target clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformPair {
    pub src: Vec<Vec3>,
    pub tgt: Vec<Vec3>,
}

impl DeformPair {
    pub fn new(src: Vec<Vec3>, tgt: Vec<Vec3>) -> Result<Self> {
        if src.len() != tgt.len() || src.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "deformation pair needs equal non-zero row counts, got {} and {}",
                src.len(),
                tgt.len()
            )));
        }
        Ok(Self { src, tgt })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Source and target embeddings (half the channels each) concatenated per
/// row; FPS anchors are chosen on the source cloud and reused for the target.
#[derive(Clone, Debug)]
pub struct PairEncoder {
    pub pe_src: PosEmb,
    pub pe_tgt: PosEmb,
    pub cross: AttentionBlock,
}

impl PairEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(Error::InvalidArgument(format!("pair encoder needs even channels, got {channels}")));
        }
        Ok(Self {
            pe_src: PosEmb::new(store, &format!("{name}.pe_src"), channels / 2, rng),
            pe_tgt: PosEmb::new(store, &format!("{name}.pe_tgt"), channels / 2, rng),
            cross: AttentionBlock::cross_attention(store, &format!("{name}.cross"), channels, heads, true, rng)?,
        })
    }

    fn embed<T: Real>(&self, g: &mut Graph<T>, p: &Bound, src: &[Vec3], tgt: &[Vec3]) -> Result<Var> {
        let a = self.pe_src.forward(g, p, src)?;
        let b = self.pe_tgt.forward(g, p, tgt)?;
        g.concat_cols(&[a, b])
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, src: &[Vec3], tgt: &[Vec3], m: usize) -> Result<Var> {
        if src.len() != tgt.len() {
            return Err(Error::InvalidArgument(format!("{} source rows vs {} target rows", src.len(), tgt.len())));
        }
        if m > src.len() {
            return Err(Error::InvalidArgument(format!("{m} latents requested from {} points", src.len())));
        }
        let idx = farthest_point_sample(src, m, canonical_start(src))?;
        let ds: Vec<Vec3> = idx.iter().map(|&i| src[i]).collect();
        let dt: Vec<Vec3> = idx.iter().map(|&i| tgt[i]).collect();
        let q = self.embed(g, p, &ds, &dt)?;
        let kv = self.embed(g, p, src, tgt)?;
        self.cross.forward_cross(g, p, q, kv, 1)
    }
}

/// Latent self-attention, query cross-attention to a fused feature `z`, and
/// an MLP on `[z, PE(q)]` predicting the offset. The last layer starts at
/// zero, so a fresh decoder is the identity map.
#[derive(Clone, Debug)]
pub struct DeformDecoder {
    pub layers: Vec<AttentionBlock>,
    pub pe: PosEmb,
    pub query: AttentionBlock,
    pub hidden: Vec<Linear>,
    pub out: Linear,
}

impl DeformDecoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &DeformVaeConfig, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        let layers = (0..cfg.decoder_depth)
            .map(|i| AttentionBlock::self_attention(store, &format!("{name}.self{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        let hidden = vec![
            Linear::new(store, &format!("{name}.mlp0"), 2 * c, 4 * c, true, rng),
            Linear::new(store, &format!("{name}.mlp1"), 4 * c, 4 * c, true, rng),
            Linear::new(store, &format!("{name}.mlp2"), 4 * c, 4 * c, true, rng),
        ];
        Ok(Self {
            layers,
            pe: PosEmb::new(store, &format!("{name}.pe"), c, rng),
            query: AttentionBlock::cross_attention(store, &format!("{name}.query"), c, cfg.heads, false, rng)?,
            hidden,
            out: Linear::zeroed(store, &format!("{name}.out"), 4 * c, 3, rng),
        })
    }

    pub fn context<T: Real>(&self, g: &mut Graph<T>, p: &Bound, latents: Var) -> Result<Var> {
        let mut x = latents;
        for l in &self.layers {
            x = l.forward_self(g, p, x, 1)?;
        }
        Ok(x)
    }

    /// `[Q, 3]` offsets Δq.
    pub fn offsets<T: Real>(&self, g: &mut Graph<T>, p: &Bound, context: Var, queries: &[Vec3]) -> Result<Var> {
        let e = self.pe.forward(g, p, queries)?;
        let z = self.query.forward_cross(g, p, e, context, 1)?;
        let mut h = g.concat_cols(&[z, e])?;
        for l in &self.hidden {
            h = l.forward(g, p, h)?;
            h = g.gelu(h)?;
        }
        self.out.forward(g, p, h)
    }

    /// `[Q, 3]` predicted positions `q + Δq`.
    pub fn positions<T: Real>(&self, g: &mut Graph<T>, p: &Bound, context: Var, queries: &[Vec3]) -> Result<Var> {
        let d = self.offsets(g, p, context, queries)?;
        let q = g.constant(Tensor::<T>::from_points(queries));
        g.add(q, d)
    }
}

#[derive(Clone, Debug)]
pub struct DeformVae {
    pub cfg: DeformVaeConfig,
    pub encoder: PairEncoder,
    pub mu: Linear,
    pub logvar: Linear,
    pub decoder: DeformDecoder,
}

impl DeformVae {
    pub fn new<T: Real>(cfg: DeformVaeConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            encoder: PairEncoder::new(store, "enc", c, cfg.heads, rng)?,
            mu: Linear::new(store, "enc.mu", c, c, true, rng),
            logvar: Linear::new(store, "enc.logvar", c, c, true, rng),
            decoder: DeformDecoder::new(store, "dec", &cfg, rng)?,
            cfg,
        })
    }

    pub fn encode_vars<T: Real>(&self, g: &mut Graph<T>, p: &Bound, pair: &DeformPair) -> Result<(Var, Var)> {
        let h = self.encoder.forward(g, p, &pair.src, &pair.tgt, self.cfg.latents)?;
        let mu = self.mu.forward(g, p, h)?;
        let lv = self.logvar.forward(g, p, h)?;
        let lv = g.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        Ok((mu, lv))
    }

    /// Mean squared correspondence error of decoded `queries` against
    /// `targets`, plus the weighted KL of the pair's posterior.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        pair: &DeformPair,
        queries: &[Vec3],
        targets: &[Vec3],
        seed: u64,
    ) -> Result<VaeLoss> {
        let (mu, lv) = self.encode_vars(g, p, pair)?;
        let d = reparameterize_var(g, mu, lv, seed)?;
        let ctx = self.decoder.context(g, p, d)?;
        let pred = self.decoder.positions(g, p, ctx, queries)?;
        let recon = mse_var(g, pred, targets)?;
        let kl = kl_var(g, mu, lv)?;
        let weighted = g.scale(kl, self.cfg.kl_weight)?;
        let total = g.add(recon, weighted)?;
        Ok(VaeLoss { total, recon, kl })
    }
}

/// `(1/Q) Σ_i ‖pred_i − target_i‖²`.
pub fn mse_var<T: Real>(g: &mut Graph<T>, pred: Var, targets: &[Vec3]) -> Result<Var> {
    if g.shape(pred) != [targets.len(), 3] {
        return Err(Error::ShapeMismatch { op: "mse", lhs: g.shape(pred).to_vec(), rhs: vec![targets.len(), 3] });
    }
    let t = g.constant(Tensor::<T>::from_points(targets));
    let d = g.sub(pred, t)?;
    let d = g.square(d)?;
    let s = g.sum(d)?;
    g.scale(s, 1.0 / targets.len() as f64)
}

pub fn encode_deformation<T: Real>(vae: &DeformVae, store: &ParamStore<T>, pair: &DeformPair) -> Result<ShapeEncoderOutput> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let (mu, lv) = vae.encode_vars(&mut g, &p, pair)?;
    Ok(ShapeEncoderOutput { mu: g.value(mu).cast(), logvar: g.value(lv).cast() })
}

/// Moves `queries` by the field encoded in `d`, in chunks of `chunk`.
pub fn decode_deformation<T: Real>(
    vae: &DeformVae,
    store: &ParamStore<T>,
    d: &LatentSet,
    queries: &[Vec3],
    chunk: usize,
) -> Result<Vec<Vec3>> {
    let mut g = Graph::no_grad();
    let p = g.bind(store);
    let z = g.constant(d.tensor());
    let ctx = vae.decoder.context(&mut g, &p, z)?;
    let mark = g.len();
    let mut out = Vec::with_capacity(queries.len());
    for part in queries.chunks(chunk.max(1)) {
        g.truncate(mark);
        let y = vae.decoder.positions(&mut g, &p, ctx, part)?;
        out.extend(g.value(y).to_points());
    }
    Ok(out)
}
