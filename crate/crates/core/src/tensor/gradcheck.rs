//! Central finite-difference oracle for the reverse pass.
//!
//! Only forward evaluations are used to form the numeric gradient, so the
//! check stays independent of the backward implementation it verifies.

use rand::seq::index::sample;

use super::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::rng;

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, with a tiny floor on the denominator.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Reduces a tensor to a scalar through fixed pseudo-random weights, so a
/// gradient check on a non-scalar op exercises every output element.
pub fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut r = rng::rng(seed);
    let w = Tensor::new(shape.clone(), rng::normals(&mut r, shape.iter().product()))?;
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    g.sum(p)
}

/// Checks d f / d inputs. Returns the largest per-input relative error.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut numeric = vec![0.0; t.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut gg = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, u)| {
                        let mut u = u.clone();
                        if j == k {
                            u.data_mut()[i] += delta;
                        }
                        gg.constant(u)
                    })
                    .collect();
                let o = f(&mut gg, &vs)?;
                Ok(gg.value(o).item())
            };
            *slot = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Checks d f / d params on at most `max_coords` randomly chosen coordinates
/// (all coordinates when `None`). Returns the relative error over the chosen
/// coordinates.
pub fn check_params<F>(store: &ParamStore<f64>, h: f64, max_coords: Option<usize>, seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = g.bind(store);
    let out = f(&mut g, &bound)?;
    g.backward(out)?;
    let grads = g.param_grads(&bound);

    let coords: Vec<(usize, usize)> = store
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = match max_coords {
        Some(n) if n < coords.len() => {
            let mut r = rng::rng(seed);
            let mut idx = sample(&mut r, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };
    let mut analytic = Vec::with_capacity(chosen.len());
    let mut numeric = Vec::with_capacity(chosen.len());
    let mut work = store.clone();
    for &(p, i) in &chosen {
        analytic.push(grads[p][i]);
        let id = work.ids().nth(p).expect("param index");
        let orig = work.get(id).data()[i];
        let mut eval = |x: f64| -> Result<f64> {
            work.get_mut(id).data_mut()[i] = x;
            let mut gg = Graph::new();
            let b = gg.bind(&work);
            let o = f(&mut gg, &b)?;
            Ok(gg.value(o).item())
        };
        let fp = eval(orig + h)?;
        let fm = eval(orig - h)?;
        work.get_mut(id).data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * h));
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Step and tolerance used by the op suite.
pub const FD_H: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

/// Standard normal entries from a seeded stream.
pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng::normals(&mut rng::rng(seed), n)).expect("shape matches data")
}

/// Values bounded away from the kinks of relu/clamp.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut x = random(shape, seed);
    for v in x.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.3f64.copysign(*v);
        }
    }
    x
}

/// Name, inputs and op under test.
pub type OpCase = (&'static str, Vec<Tensor<f64>>, fn(&mut Graph<f64>, &[Var]) -> Result<Var>);

/// One small instance of every differentiable op, with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let s = seed * 100;
    vec![
        ("matmul", vec![random(&[3, 4], s), random(&[4, 2], s + 1)], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![random(&[2, 3], s), random(&[2, 3], s + 1)], |g, v| g.add(v[0], v[1])),
        ("add_scalar_broadcast", vec![random(&[2, 3], s), random(&[1], s + 1)], |g, v| g.add(v[0], v[1])),
        ("sub", vec![random(&[4], s), random(&[4], s + 1)], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![random(&[2, 2], s), random(&[2, 2], s + 1)], |g, v| g.mul(v[0], v[1])),
        ("mul_scalar_broadcast", vec![random(&[1], s), random(&[3, 2], s + 1)], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![random(&[5], s)], |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", vec![random(&[5], s)], |g, v| g.add_scalar(v[0], 0.3)),
        ("relu", vec![away_from_zero(&[6], s)], |g, v| g.relu(v[0])),
        ("gelu", vec![random(&[6], s)], |g, v| g.gelu(v[0])),
        ("exp", vec![random(&[4], s)], |g, v| g.exp(v[0])),
        ("log", vec![{
            let mut x = random(&[4], s);
            x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
            x
        }], |g, v| g.log(v[0])),
        ("sigmoid", vec![random(&[4], s)], |g, v| g.sigmoid(v[0])),
        ("tanh", vec![random(&[4], s)], |g, v| g.tanh(v[0])),
        ("clamp", vec![away_from_zero(&[6], s)], |g, v| g.clamp(v[0], -0.05, 0.05)),
        ("clamp_interior", vec![random(&[6], s)], |g, v| g.clamp(v[0], -50.0, 50.0)),
        ("sum", vec![random(&[3, 2], s)], |g, v| g.sum(v[0])),
        ("mean", vec![random(&[3, 2], s)], |g, v| g.mean(v[0])),
        ("softmax", vec![random(&[3, 4], s)], |g, v| g.softmax(v[0])),
        ("layer_norm", vec![random(&[3, 5], s), random(&[5], s + 1), random(&[5], s + 2)], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        }),
        ("add_row", vec![random(&[4, 3], s), random(&[3], s + 1)], |g, v| g.add_row(v[0], v[1])),
        ("linear", vec![random(&[4, 3], s), random(&[3, 2], s + 1), random(&[2], s + 2)], |g, v| {
            g.linear(v[0], v[1], Some(v[2]))
        }),
        ("gather_rows", vec![random(&[4, 3], s)], |g, v| g.gather_rows(v[0], &[2, 0, 2, 3])),
        ("concat_cols", vec![random(&[3, 2], s), random(&[3, 4], s + 1)], |g, v| g.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![random(&[2, 3], s), random(&[1, 3], s + 1)], |g, v| g.concat_rows(&[v[0], v[1], v[0]])),
        ("reshape", vec![random(&[2, 6], s)], |g, v| g.reshape(v[0], vec![3, 4])),
        ("transpose", vec![random(&[2, 5], s)], |g, v| g.transpose(v[0])),
        ("attention_self", vec![random(&[6, 4], s)], |g, v| g.attention(v[0], v[0], v[0], 2, 2)),
        ("attention_cross", vec![random(&[3, 4], s), random(&[5, 4], s + 1), random(&[5, 4], s + 2)], |g, v| {
            g.attention(v[0], v[1], v[2], 2, 1)
        }),
        ("bce_with_logits", vec![random(&[6], s)], |g, v| {
            g.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        }),
    ]
}
