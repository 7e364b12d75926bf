use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdmConfig {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub steps: usize,
    /// Reuse one ε across all frames of a sequence instead of drawing every
    /// element independently (the noise level is shared either way).
    pub shared_sequence_eps: bool,
}

impl Default for EdmConfig {
    fn default() -> Self {
        Self {
            sigma_data: 1.0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            p_mean: -1.2,
            p_std: 1.2,
            steps: 18,
            shared_sequence_eps: false,
        }
    }
}

impl EdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.sigma_data > 0.0) || self.steps == 0 || !(self.rho > 0.0) || !(self.p_std >= 0.0) {
            return Err(Error::InvalidArgument("sigma_data, rho and steps must be positive".into()));
        }
        Ok(())
    }

    /// `λ(σ) = (σ² + σ_d²) / (σ·σ_d)²`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let sd = self.sigma_data;
        (sigma * sigma + sd * sd) / (sigma * sd).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub fn edm_precondition(sigma: f64, cfg: &EdmConfig) -> Precond {
    let sd = cfg.sigma_data;
    let total = sigma * sigma + sd * sd;
    Precond {
        c_skip: sd * sd / total,
        c_out: sigma * sd / total.sqrt(),
        c_in: 1.0 / total.sqrt(),
        c_noise: sigma.ln() / 4.0,
    }
}

/// Training noise levels with `ln σ ~ N(p_mean, p_std²)`.
pub fn sample_sigma(batch: usize, cfg: &EdmConfig, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..batch).map(|_| (cfg.p_mean + cfg.p_std * rng::normal(&mut r)).exp()).collect()
}

/// `steps` levels from σ_max to σ_min, ρ-warped, followed by 0.
pub fn karras_schedule(cfg: &EdmConfig) -> Vec<f64> {
    let n = cfg.steps.max(1);
    let (a, b) = (cfg.sigma_max.powf(1.0 / cfg.rho), cfg.sigma_min.powf(1.0 / cfg.rho));
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                cfg.sigma_max
            } else {
                (a + i as f64 / (n - 1) as f64 * (b - a)).powf(cfg.rho)
            }
        })
        .collect();
    s.push(0.0);
    s
}

/// Deterministic second-order sampler. `denoiser(x, σ)` returns D(x; σ).
pub fn heun_sample<F>(mut denoiser: F, dims: usize, cfg: &EdmConfig, seed: u64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let sigmas = karras_schedule(cfg);
    let mut r = rng::rng(seed);
    let mut x: Vec<f64> = rng::normals(&mut r, dims).into_iter().map(|e| e * sigmas[0]).collect();
    for (i, w) in sigmas.windows(2).enumerate() {
        let (s, s_next) = (w[0], w[1]);
        let den = denoiser(&x, s)?;
        let d: Vec<f64> = x.iter().zip(&den).map(|(xi, di)| (xi - di) / s).collect();
        let mut x_next: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + (s_next - s) * di).collect();
        if s_next > 0.0 {
            let den2 = denoiser(&x_next, s_next)?;
            x_next = x
                .iter()
                .zip(&d)
                .zip(x_next.iter().zip(&den2))
                .map(|((xi, di), (xn, dn))| xi + (s_next - s) * 0.5 * (di + (xn - dn) / s_next))
                .collect();
        }
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: if i == 0 { "heun_sample (first step)" } else { "heun_sample" } });
        }
        x = x_next;
    }
    Ok(x)
}

/// A noised training input and the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub sigma: f64,
    /// Unit-variance noise, one value per element of the clean input.
    pub eps: Vec<f64>,
}

impl NoiseDraw {
    /// One σ for the whole input; ε is drawn per element, or once per frame
    /// slice and repeated when `shared_sequence_eps` is set and `frames > 1`.
    pub fn draw(numel: usize, frames: usize, cfg: &EdmConfig, seed: u64) -> Self {
        let sigma = sample_sigma(1, cfg, rng::derive_seed(seed, 1))[0];
        let mut r = rng::rng(rng::derive_seed(seed, 2));
        let eps = if cfg.shared_sequence_eps && frames > 1 {
            let per = numel / frames;
            let one = rng::normals(&mut r, per);
            (0..frames).flat_map(|_| one.iter().copied()).collect()
        } else {
            rng::normals(&mut r, numel)
        };
        Self { sigma, eps }
    }

    pub fn apply(&self, clean: &[f64]) -> Vec<f64> {
        clean.iter().zip(&self.eps).map(|(c, e)| c + self.sigma * e).collect()
    }
}
