use rand::Rng as _;
use vecset4d::geometry::{farthest_point_sample, Vec3};
use vecset4d::metrics::chamfer_distance;
use vecset4d::rng;
use vecset4d::shape_vae::{kl_divergence, ShapeEncoderOutput};
use vecset4d::tensor::{Graph, Tensor};

use crate::common::{Checks, Outcome};

fn d2(a: Vec3, b: Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Greedy max-min selection recomputed from scratch at every step.
fn exhaustive_greedy(points: &[Vec3], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..points.len() {
            let gap = chosen.iter().map(|&c| d2(points[i], points[c])).fold(f64::INFINITY, f64::min);
            if gap > best.0 {
                best = (gap, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn fps_trials(checks: &mut Checks) {
    let mut r = rng::rng(1);
    let mut mismatches = 0;
    let mut cases = 0;
    for trial in 0..500 {
        let n = r.gen_range(1..=8);
        // Every fourth trial uses a coarse lattice so distance ties occur.
        let points: Vec<Vec3> = (0..n)
            .map(|_| {
                if trial % 4 == 0 {
                    [r.gen_range(0..3) as f64, r.gen_range(0..3) as f64, 0.0]
                } else {
                    [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]
                }
            })
            .collect();
        let start = r.gen_range(0..n);
        for m in 1..=n {
            cases += 1;
            match farthest_point_sample(&points, m, start) {
                Ok(got) if got == exhaustive_greedy(&points, m, start) => {}
                _ => mismatches += 1,
            }
        }
    }
    checks.check("fps", mismatches == 0, format!("{cases} subsets from 500 trials, {mismatches} mismatches"));
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|&p| y.iter().map(|&q| d2(p, q)).fold(f64::INFINITY, f64::min).sqrt()).sum::<f64>() / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

fn chamfer_instances(checks: &mut Checks) {
    let mut r = rng::rng(2);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let scale = [1e-3, 0.5, 1.0, 40.0][i % 4];
        let (na, nb) = (r.gen_range(1..300), r.gen_range(1..300));
        let pts = |n: usize, r: &mut rng::Rng| -> Vec<Vec3> {
            (0..n).map(|_| [0; 3].map(|_| scale * r.gen_range(-1.0..1.0))).collect()
        };
        let a = pts(na, &mut r);
        let mut b = pts(nb, &mut r);
        if i % 5 == 0 {
            // Shared points give exact zero distances.
            b.extend_from_slice(&a[..na.min(10)]);
        }
        let got = chamfer_distance(&a, &b).unwrap_or(f64::NAN);
        worst = worst.max((got - brute_chamfer(&a, &b)).abs());
        if got.is_nan() {
            worst = f64::INFINITY;
        }
    }
    checks.check("chamfer", worst <= 1e-9, format!("200 instances max |diff| {worst:.1e}"));
}

fn kl_closed_form(checks: &mut Checks) {
    let mut r = rng::rng(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (codes, c) = (r.gen_range(1..8), r.gen_range(1..16));
        let mu: Vec<f64> = (0..codes * c).map(|_| r.gen_range(-3.0..3.0)).collect();
        let sd: Vec<f64> = (0..codes * c).map(|_| r.gen_range(0.05..3.0)).collect();
        // KL(N(mu, sd^2) || N(0, 1)) per dimension, averaged over codes.
        let oracle: f64 =
            mu.iter().zip(&sd).map(|(&m, &s)| -s.ln() + 0.5 * (s * s + m * m) - 0.5).sum::<f64>() / codes as f64;
        let enc = ShapeEncoderOutput {
            mu: Tensor::new(vec![codes, c], mu).unwrap(),
            logvar: Tensor::new(vec![codes, c], sd.iter().map(|s| 2.0 * s.ln()).collect()).unwrap(),
        };
        worst = worst.max((kl_divergence(&enc).unwrap_or(f64::NAN) - oracle).abs());
    }
    checks.check("kl", worst <= 1e-6, format!("100 posteriors max |diff| {worst:.1e}"));
}

fn softmax_rows(checks: &mut Checks) {
    let mut r = rng::rng(4);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (rows, cols) = (r.gen_range(1..10), r.gen_range(1..64));
        let spread = [1.0, 10.0, 300.0][i % 3];
        let data: Vec<f64> = (0..rows * cols).map(|_| spread * r.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let y = g.softmax(x).unwrap();
        let v = g.value(y);
        for row in 0..rows {
            let s: f64 = v.row(row).iter().sum();
            worst = worst.max((s - 1.0).abs());
            if v.row(row).iter().any(|p| !(0.0..=1.0).contains(p)) {
                worst = f64::INFINITY;
            }
        }
    }
    checks.check("softmax", worst <= 1e-6, format!("100 matrices max |row sum - 1| {worst:.1e}"));
}

pub fn run() -> Outcome {
    let mut checks = Checks::new();
    fps_trials(&mut checks);
    chamfer_instances(&mut checks);
    kl_closed_form(&mut checks);
    softmax_rows(&mut checks);
    checks.finish()
}
