use std::time::Instant;

use vecset4d::attention::{code_major_order, cond_attention_flops, flops_count, AttentionMode, IstaBlock};
use vecset4d::rng;
use vecset4d::tensor::gradcheck::random;
use vecset4d::tensor::{Graph, ParamStore, Tensor};

use crate::common::{Checks, Outcome};

const CHANNELS: usize = 32;
const HEADS: usize = 4;

/// Counted ISTA (space + time) and full self-attention multiply-adds.
fn counted(frames: usize, codes: usize) -> vecset4d::Result<(u64, u64, u64)> {
    let mut store = ParamStore::<f64>::new();
    let block = IstaBlock::new(&mut store, "ista", CHANNELS, HEADS, &mut rng::rng(1))?;
    let mut g = Graph::no_grad();
    let p = g.bind(&store);
    let d = g.constant(random(&[frames * codes, CHANNELS], 2));
    let c = g.constant(random(&[frames * 4, CHANNELS], 3));
    let (_, macs) = block.forward_counted(&mut g, &p, d, c, frames)?;
    if macs.cond != cond_attention_flops(frames, codes, 4, CHANNELS) {
        return Err(vecset4d::Error::InvalidArgument(format!("cond counter {}", macs.cond)));
    }
    g.reset_attention_macs();
    block.space.forward_self(&mut g, &p, d, 1)?;
    Ok((macs.space, macs.time, g.attention_macs()))
}

fn best_of<F: FnMut()>(runs: usize, mut f: F) -> f64 {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Seconds for the two factorized attentions versus one joint attention over
/// the same `frames · codes` tokens.
fn wall_clock(frames: usize, codes: usize) -> vecset4d::Result<(f64, f64)> {
    let x: Tensor<f32> = random(&[frames * codes, CHANNELS], 4).cast();
    let order = code_major_order(frames, codes);
    let ista = best_of(5, || {
        let mut g = Graph::<f32>::no_grad();
        let v = g.constant(x.clone());
        let s = g.attention(v, v, v, HEADS, frames).unwrap();
        let t = g.gather_rows(s, &order).unwrap();
        g.attention(t, t, t, HEADS, codes).unwrap();
    });
    let full = best_of(5, || {
        let mut g = Graph::<f32>::no_grad();
        let v = g.constant(x.clone());
        g.attention(v, v, v, HEADS, 1).unwrap();
    });
    Ok((ista, full))
}

pub fn run() -> Outcome {
    let mut checks = Checks::new();
    let mut worst = 0.0f64;
    for &(frames, codes) in &[(1, 8), (3, 5), (8, 16), (16, 16), (32, 32)] {
        match counted(frames, codes) {
            Ok((space, time, full)) => {
                let ista_expect = flops_count(frames, codes, CHANNELS, AttentionMode::Ista) as f64;
                let full_expect = flops_count(frames, codes, CHANNELS, AttentionMode::Full) as f64;
                worst = worst.max(((space + time) as f64 / ista_expect - 1.0).abs());
                worst = worst.max((full as f64 / full_expect - 1.0).abs());
                if (frames, codes) == (16, 16) {
                    let ratio = (space + time) as f64 / full as f64;
                    checks.check("ratio(16,16)", (ratio - 0.125).abs() <= 0.01, format!("{ratio:.4}"));
                }
            }
            Err(e) => checks.error("counters", e),
        }
    }
    checks.check("counters", worst <= 0.05, format!("max relative deviation {worst:.1e}"));
    match wall_clock(32, 32) {
        Ok((ista, full)) => {
            checks.check("wall(32,32)", ista < full, format!("ista {:.2} ms vs full {:.2} ms", 1e3 * ista, 1e3 * full))
        }
        Err(e) => checks.error("wall(32,32)", e),
    }
    checks.finish()
}
