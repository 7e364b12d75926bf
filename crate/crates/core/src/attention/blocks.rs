use super::layers::{FeedForward, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Graph, ParamStore, Real, Var};

/// Pre-norm multi-head attention with residual, optionally followed by a
/// pre-norm GELU feed-forward with residual.
///
/// Self-attention blocks normalise one input; cross-attention blocks carry
/// a second layer norm for the key/value source.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub channels: usize,
    pub heads: usize,
    pub norm_q: LayerNorm,
    pub norm_kv: Option<LayerNorm>,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ff: Option<(LayerNorm, FeedForward)>,
}

impl AttentionBlock {
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        cross: bool,
        ff: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::InvalidArgument(format!("{channels} channels not divisible by {heads} heads")));
        }
        let c = channels;
        Ok(Self {
            channels,
            heads,
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), c, rng),
            norm_kv: cross.then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), c, rng)),
            wq: Linear::new(store, &format!("{name}.q"), c, c, false, rng),
            wk: Linear::new(store, &format!("{name}.k"), c, c, false, rng),
            wv: Linear::new(store, &format!("{name}.v"), c, c, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), c, c, true, rng),
            ff: ff.then(|| {
                (LayerNorm::new(store, &format!("{name}.norm_ff"), c, rng), FeedForward::new(store, &format!("{name}.ff"), c, rng))
            }),
        })
    }

    pub fn self_attention<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::build(store, name, channels, heads, false, true, rng)
    }

    pub fn cross_attention<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        feed_forward: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::build(store, name, channels, heads, true, feed_forward, rng)
    }

    fn check<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.channels {
            return Err(Error::ShapeMismatch { op: "attention block", lhs: s.to_vec(), rhs: vec![self.channels] });
        }
        Ok(())
    }

    fn finish<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, attended: Var) -> Result<Var> {
        let o = self.wo.forward(g, p, attended)?;
        let mut x = g.add(x, o)?;
        if let Some((norm, ff)) = &self.ff {
            let h = norm.forward(g, p, x)?;
            let h = ff.forward(g, p, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    /// Self-attention within each of `groups` equal blocks of rows of `x`.
    pub fn forward_self<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, groups: usize) -> Result<Var> {
        self.check(g, x)?;
        let h = self.norm_q.forward(g, p, x)?;
        let q = self.wq.forward(g, p, h)?;
        let k = self.wk.forward(g, p, h)?;
        let v = self.wv.forward(g, p, h)?;
        let a = g.attention(q, k, v, self.heads, groups)?;
        self.finish(g, p, x, a)
    }

    /// Rows of `x` attend to rows of `kv`, group by group.
    pub fn forward_cross<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, kv: Var, groups: usize) -> Result<Var> {
        self.check(g, x)?;
        self.check(g, kv)?;
        let norm_kv = self.norm_kv.as_ref().unwrap_or(&self.norm_q);
        let hq = self.norm_q.forward(g, p, x)?;
        let hkv = norm_kv.forward(g, p, kv)?;
        let q = self.wq.forward(g, p, hq)?;
        let k = self.wk.forward(g, p, hkv)?;
        let v = self.wv.forward(g, p, hkv)?;
        let a = g.attention(q, k, v, self.heads, groups)?;
        self.finish(g, p, x, a)
    }
}

/// Row order for switching a frame-major `[F·M, C]` sequence to code-major
/// `[M·F, C]`: output row `i·F + t` reads input row `t·M + i`.
pub fn code_major_order(frames: usize, codes: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(frames * codes);
    for i in 0..codes {
        for t in 0..frames {
            idx.push(t * codes + i);
        }
    }
    idx
}

/// Inverse of [`code_major_order`].
pub fn frame_major_order(frames: usize, codes: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(frames * codes);
    for t in 0..frames {
        for i in 0..codes {
            idx.push(i * frames + t);
        }
    }
    idx
}

/// Interleaved spatio-temporal attention: per-frame self-attention over the
/// codes, per-frame cross-attention to that frame's condition codes, then
/// self-attention across frames at each code index.
#[derive(Clone, Debug)]
pub struct IstaBlock {
    pub space: AttentionBlock,
    pub cond: AttentionBlock,
    pub time: AttentionBlock,
}

/// Multiply-add counts of the three attention stages of one [`IstaBlock`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageMacs {
    pub space: u64,
    pub cond: u64,
    pub time: u64,
}

impl IstaBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            space: AttentionBlock::self_attention(store, &format!("{name}.space"), channels, heads, rng)?,
            cond: AttentionBlock::cross_attention(store, &format!("{name}.cond"), channels, heads, true, rng)?,
            time: AttentionBlock::self_attention(store, &format!("{name}.time"), channels, heads, rng)?,
        })
    }

    /// `d: [F·M, C]` frame-major, `cond: [F·K, C]` frame-major.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, d: Var, cond: Var, frames: usize) -> Result<Var> {
        self.forward_counted(g, p, d, cond, frames).map(|(v, _)| v)
    }

    pub fn forward_counted<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        d: Var,
        cond: Var,
        frames: usize,
    ) -> Result<(Var, StageMacs)> {
        let (rows, crow) = (g.shape(d)[0], g.shape(cond)[0]);
        if frames == 0 || rows % frames != 0 || crow % frames != 0 {
            return Err(Error::ShapeMismatch { op: "ista_block", lhs: g.shape(d).to_vec(), rhs: g.shape(cond).to_vec() });
        }
        let codes = rows / frames;
        let mut macs = StageMacs::default();
        let mut mark = g.attention_macs();
        let mut lap = |g: &Graph<T>| {
            let now = g.attention_macs();
            let d = now - mark;
            mark = now;
            d
        };
        let x = self.space.forward_self(g, p, d, frames)?;
        macs.space = lap(g);
        let x = self.cond.forward_cross(g, p, x, cond, frames)?;
        macs.cond = lap(g);
        let x = g.gather_rows(x, &code_major_order(frames, codes))?;
        let x = self.time.forward_self(g, p, x, codes)?;
        let x = g.gather_rows(x, &frame_major_order(frames, codes))?;
        macs.time = lap(g);
        Ok((x, macs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// Spatial attention within frames plus temporal attention across frames.
    Ista,
    /// One self-attention over all `frames · codes` tokens.
    Full,
}

/// Attention-score plus value-mix multiply-adds for self-attention over a
/// `frames × codes` token grid with `channels` channels.
pub fn flops_count(frames: usize, codes: usize, channels: usize, mode: AttentionMode) -> u64 {
    let (f, m, c) = (frames as u64, codes as u64, channels as u64);
    match mode {
        AttentionMode::Ista => 2 * c * (f * m * m + m * f * f),
        AttentionMode::Full => 2 * c * (f * m) * (f * m),
    }
}

/// Multiply-adds of the per-frame cross-attention to `cond_codes` condition
/// codes (not part of [`flops_count`]).
pub fn cond_attention_flops(frames: usize, codes: usize, cond_codes: usize, channels: usize) -> u64 {
    2 * (channels * frames * codes * cond_codes) as u64
}
