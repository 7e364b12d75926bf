use crate::error::Result;
use crate::geometry::Vec3;
use crate::rng::Rng;
use crate::tensor::{Bound, Graph, Init, ParamId, ParamStore, Real, Tensor, Var};

/// Frequencies `2^k·π` for `k < OCTAVES`.
pub const OCTAVES: usize = 8;
/// Raw coordinates plus a sine and cosine per axis and octave.
pub const FOURIER_DIM: usize = 3 + 3 * 2 * OCTAVES;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), vec![fan_in, fan_out], Init::FanIn(fan_in), rng);
        let b = bias.then(|| store.add(format!("{name}.b"), vec![fan_out], Init::Zeros, rng));
        Self { w, b, fan_in, fan_out }
    }

    /// Weights and bias start at zero.
    pub fn zeroed<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = store.add(format!("{name}.w"), vec![fan_in, fan_out], Init::Zeros, rng);
        let b = Some(store.add(format!("{name}.b"), vec![fan_out], Init::Zeros, rng));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), self.b.map(|b| p.var(b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), vec![channels], Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), vec![channels], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), Self::EPS)
    }
}

/// `[x, y, z, sin(2^k π x_a), cos(2^k π x_a) …]` per point, row-major `[n, FOURIER_DIM]`.
pub fn fourier_features<T: Real>(points: &[Vec3]) -> Tensor<T> {
    let mut out = Vec::with_capacity(points.len() * FOURIER_DIM);
    for p in points {
        out.extend(p.iter().map(|&x| T::of(x)));
        for a in 0..3 {
            for k in 0..OCTAVES {
                let w = (1u32 << k) as f64 * std::f64::consts::PI * p[a];
                out.push(T::of(w.sin()));
                out.push(T::of(w.cos()));
            }
        }
    }
    Tensor::new(vec![points.len().max(1), FOURIER_DIM], out).expect("fourier feature shape")
}

/// Learned projection of [`fourier_features`] to `channels`.
#[derive(Clone, Debug)]
pub struct PosEmb {
    pub proj: Linear,
}

impl PosEmb {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        Self { proj: Linear::new(store, &format!("{name}.proj"), FOURIER_DIM, channels, true, rng) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, points: &[Vec3]) -> Result<Var> {
        let f = g.constant(fourier_features(points));
        self.proj.forward(g, p, f)
    }
}

/// Two-layer GELU feed-forward `C → 4C → C`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), channels, 4 * channels, true, rng),
            down: Linear::new(store, &format!("{name}.down"), 4 * channels, channels, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}
