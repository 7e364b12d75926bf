use super::kernels::{axpy, dot, gemm_acc, gemm_tn_acc, transpose};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    AddRow(Var, Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: usize,
        probs: Vec<T>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Dynamic tape for one forward pass.
///
/// Nodes are appended in evaluation order, so the arena order is a valid
/// topological order and the graph is acyclic by construction.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    check_finite: bool,
    attention_macs: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            check_finite: cfg!(debug_assertions),
            attention_macs: 0,
        }
    }

    /// A graph that records values only; nothing requires a gradient.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// Enables or disables the per-op non-finite output check.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid; earlier nodes never reference later ones.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Multiply-adds spent in attention scores and value mixing so far.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs
    }

    pub fn reset_attention_macs(&mut self) {
        self.attention_macs = 0;
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("{op}: expected a 2-D operand, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        };
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.val(a), self.val(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let out = transpose(self.val(a), r, c);
        let rg = self.rg(a);
        self.push("transpose", Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg)
    }

    /// `x·w + b` with `w: [in,out]` and an optional bias row `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        let (va, vb) = (self.val(a), self.val(b));
        let (shape, data): (Vec<usize>, Vec<T>) = if self.shape(a) == self.shape(b) {
            (self.shape(a).to_vec(), va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect())
        } else if nb == 1 {
            (self.shape(a).to_vec(), va.iter().map(|&x| f(x, vb[0])).collect())
        } else if na == 1 {
            (self.shape(b).to_vec(), vb.iter().map(|&y| f(va[0], y)).collect())
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        };
        Ok((Tensor::new(shape, data)?, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T) -> (Tensor<T>, bool) {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        (Tensor::new(v.shape().to_vec(), data).expect("same shape"), self.rg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let (t, rg) = self.unary(a, |x| x * s);
        self.push("scale", t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let (t, rg) = self.unary(a, |x| x + s);
        self.push("add_scalar", t, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| x.max(T::zero()));
        self.push("relu", t, Op::Relu(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| T::of(gelu(x.f64())));
        self.push("gelu", t, Op::Gelu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| x.exp());
        self.push("exp", t, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| x.ln());
        self.push("log", t, Op::Log(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| T::one() / (T::one() + (-x).exp()));
        self.push("sigmoid", t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (t, rg) = self.unary(a, |x| x.tanh());
        self.push("tanh", t, Op::Tanh(a), rg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let (t, rg) = self.unary(a, |x| x.max(lo).min(hi));
        self.push("clamp", t, Op::Clamp(a, lo, hi), rg)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.val(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a);
        let s: T = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let rg = self.rg(a);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    // ---- normalization --------------------------------------------------

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push("softmax", t, Op::Softmax(a), rg)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = self.value(x).rows();
        let (xv, gv, bv) = (self.val(x), self.val(gamma), self.val(beta));
        let mut xhat = vec![T::zero(); rows * c];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * c];
        let inv_c = T::of(1.0 / c as f64);
        for r in 0..rows {
            let xr = &xv[r * c..(r + 1) * c];
            let mean = xr.iter().copied().sum::<T>() * inv_c;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (xr[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv[j] + bv[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push("layer_norm", t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg)
    }

    // ---- structure ------------------------------------------------------

    /// Adds the row vector `b: [C]` to every row of `x: [..., C]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).numel() != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bv = self.val(b).to_vec();
        let mut out = self.val(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &bb) in row.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(b);
        self.push("add_row", t, Op::AddRow(x, b), rg)
    }

    /// Selects rows of a `[R, C]` view; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (rows, c) = (v.rows(), v.cols());
        if idx.is_empty() {
            return Err(Error::InvalidArgument("gather_rows: empty index list".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!("gather_rows: index {bad} out of range for {rows} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(v.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], out)?;
        let rg = self.rg(x);
        self.push("gather_rows", t, Op::Gather(x, idx.to_vec()), rg)
    }

    /// Concatenates 2-D operands with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Stacks operands with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.val(p));
        }
        let rows = out.len() / c;
        let t = Tensor::new(vec![rows, c], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push("reshape", t, Op::Reshape(x), rg)
    }

    // ---- attention ------------------------------------------------------

    /// Multi-head scaled dot-product attention, evaluated independently per
    /// group of consecutive rows.
    ///
    /// `q: [G·n, C]`, `k, v: [G·m, C]` → `[G·n, C]`. Heads split the channel
    /// axis into `heads` contiguous slices of width `C / heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: usize) -> Result<Var> {
        let (qr, c) = self.dims2(q, "attention")?;
        let (kr, kc) = self.dims2(k, "attention")?;
        let (vr, vc) = self.dims2(v, "attention")?;
        if kc != c || vc != c || kr != vr {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: self.shape(q).to_vec(),
                rhs: self.shape(k).to_vec(),
            });
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::InvalidArgument(format!("attention: {c} channels not divisible by {heads} heads")));
        }
        if groups == 0 || qr % groups != 0 || kr % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention: rows {qr}/{kr} not divisible into {groups} groups"
            )));
        }
        let (n, m, d) = (qr / groups, kr / groups, c / heads);
        let scale = T::of(1.0 / (d as f64).sqrt());
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let mut probs = vec![T::zero(); groups * heads * n * m];
        let mut out = vec![T::zero(); qr * c];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * d;
                for i in 0..n {
                    let qi = &qv[(g * n + i) * c + off..(g * n + i) * c + off + d];
                    let base = ((g * heads + h) * n + i) * m;
                    let row = &mut probs[base..base + m];
                    for (j, p) in row.iter_mut().enumerate() {
                        let kj = &kv[(g * m + j) * c + off..(g * m + j) * c + off + d];
                        *p = dot(qi, kj) * scale;
                    }
                    softmax_in_place(row);
                    let oi = &mut out[(g * n + i) * c + off..(g * n + i) * c + off + d];
                    for (j, &p) in row.iter().enumerate() {
                        axpy(p, &vv[(g * m + j) * c + off..(g * m + j) * c + off + d], oi);
                    }
                }
            }
        }
        self.attention_macs += 2 * (groups * n * m * c) as u64;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        if !rg {
            probs = Vec::new();
        }
        let t = Tensor::new(vec![qr, c], out)?;
        self.push("attention", t, Op::Attention { q, k, v, heads, groups, probs }, rg)
    }

    // ---- losses ---------------------------------------------------------

    /// Mean binary cross-entropy of logits against constant targets in
    /// `[0, 1]`, using `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let z = self.val(logits);
        if z.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| {
                let (z, y) = (z.f64(), y.f64());
                z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let loss = T::of(total / z.len() as f64);
        let rg = self.rg(logits);
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceLogits { logits, targets: targets.to_vec() },
            rg,
        )
    }

    // ---- reverse pass ---------------------------------------------------

    /// Accumulates d`loss`/d(node) into every node that requires a gradient.
    /// Calling it again without [`Graph::zero_grad`] adds a second copy.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// Like [`Graph::backward`] but seeds the output gradient with `seed`.
    pub fn backward_scaled(&mut self, loss: Var, seed: f64) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        local[loss.0] = Some(vec![T::of(seed)]);
        for id in (0..=loss.0).rev() {
            let Some(g) = local[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut local);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, &x) in acc.iter_mut().zip(&g) {
                        *a += x;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], local: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        macro_rules! with_slot {
            ($v:expr, |$b:ident| $body:expr) => {
                if let Some($b) = slot(local, nodes, $v) {
                    $body;
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                with_slot!(*a, |da| {
                    let bt = transpose(val(*b), k, n);
                    gemm_acc(g, &bt, da, m, n, k);
                });
                with_slot!(*b, |db| gemm_tn_acc(val(*a), g, db, m, k, n));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                with_slot!(*a, |da| accumulate_broadcast(da, g, T::one()));
                with_slot!(*b, |db| accumulate_broadcast(db, g, sign));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                with_slot!(*a, |da| {
                    let prod: Vec<T> = (0..g.len()).map(|i| g[i] * bcast(vb, i)).collect();
                    accumulate_broadcast(da, &prod, T::one());
                });
                with_slot!(*b, |db| {
                    let prod: Vec<T> = (0..g.len()).map(|i| g[i] * bcast(va, i)).collect();
                    accumulate_broadcast(db, &prod, T::one());
                });
            }
            Op::Scale(a, s) => with_slot!(*a, |da| axpy(*s, g, da)),
            Op::AddScalar(a) => with_slot!(*a, |da| axpy(T::one(), g, da)),
            Op::Relu(a) => with_slot!(*a, |da| {
                for ((d, &x), &gi) in da.iter_mut().zip(val(*a)).zip(g) {
                    if x > T::zero() {
                        *d += gi;
                    }
                }
            }),
            Op::Gelu(a) => with_slot!(*a, |da| {
                for ((d, &x), &gi) in da.iter_mut().zip(val(*a)).zip(g) {
                    *d += gi * T::of(gelu_grad(x.f64()));
                }
            }),
            Op::Exp(a) => with_slot!(*a, |da| {
                for ((d, &y), &gi) in da.iter_mut().zip(node.value.data()).zip(g) {
                    *d += gi * y;
                }
            }),
            Op::Log(a) => with_slot!(*a, |da| {
                for ((d, &x), &gi) in da.iter_mut().zip(val(*a)).zip(g) {
                    *d += gi / x;
                }
            }),
            Op::Sigmoid(a) => with_slot!(*a, |da| {
                for ((d, &y), &gi) in da.iter_mut().zip(node.value.data()).zip(g) {
                    *d += gi * y * (T::one() - y);
                }
            }),
            Op::Tanh(a) => with_slot!(*a, |da| {
                for ((d, &y), &gi) in da.iter_mut().zip(node.value.data()).zip(g) {
                    *d += gi * (T::one() - y * y);
                }
            }),
            Op::Clamp(a, lo, hi) => with_slot!(*a, |da| {
                for ((d, &x), &gi) in da.iter_mut().zip(val(*a)).zip(g) {
                    if x >= *lo && x <= *hi {
                        *d += gi;
                    }
                }
            }),
            Op::Sum(a) => with_slot!(*a, |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => with_slot!(*a, |da| {
                let s = g[0] / T::of(da.len() as f64);
                da.iter_mut().for_each(|d| *d += s);
            }),
            Op::Softmax(a) => with_slot!(*a, |da| {
                let n = node.value.cols();
                let y = node.value.data();
                for ((dr, yr), gr) in da.chunks_exact_mut(n).zip(y.chunks_exact(n)).zip(g.chunks_exact(n)) {
                    let s = dot(yr, gr);
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - s);
                    }
                }
            }),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = node.value.cols();
                let gv = val(*gamma);
                with_slot!(*gamma, |dg| {
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                with_slot!(*beta, |db| {
                    for gr in g.chunks_exact(c) {
                        axpy(T::one(), gr, db);
                    }
                });
                with_slot!(*x, |dx| {
                    let inv_c = T::of(1.0 / c as f64);
                    let mut dh = vec![T::zero(); c];
                    for (r, ((dxr, gr), hr)) in dx
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                        .enumerate()
                    {
                        for j in 0..c {
                            dh[j] = gr[j] * gv[j];
                        }
                        let m1 = dh.iter().copied().sum::<T>() * inv_c;
                        let m2 = dot(&dh, hr) * inv_c;
                        for j in 0..c {
                            dxr[j] += rstd[r] * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::AddRow(x, b) => {
                let c = node.value.cols();
                with_slot!(*x, |dx| axpy(T::one(), g, dx));
                with_slot!(*b, |db| {
                    for gr in g.chunks_exact(c) {
                        axpy(T::one(), gr, db);
                    }
                });
            }
            Op::Gather(x, idx) => with_slot!(*x, |dx| {
                let c = node.value.cols();
                for (r, &i) in idx.iter().enumerate() {
                    axpy(T::one(), &g[r * c..(r + 1) * c], &mut dx[i * c..(i + 1) * c]);
                }
            }),
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.cols();
                    with_slot!(p, |dp| {
                        for r in 0..rows {
                            axpy(T::one(), &g[r * total + off..r * total + off + pc], &mut dp[r * pc..(r + 1) * pc]);
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    with_slot!(p, |dp| axpy(T::one(), &g[off..off + len], dp));
                    off += len;
                }
            }
            Op::Reshape(x) => with_slot!(*x, |dx| axpy(T::one(), g, dx)),
            Op::Transpose(x) => with_slot!(*x, |dx| {
                let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let gt = transpose(g, c, r);
                axpy(T::one(), &gt, dx);
            }),
            Op::Attention { q, k, v, heads, groups, probs } => {
                self.attention_backward(g, *q, *k, *v, *heads, *groups, probs, local);
            }
            Op::BceLogits { logits, targets } => with_slot!(*logits, |dz| {
                let s = g[0] / T::of(targets.len() as f64);
                for ((d, &z), &y) in dz.iter_mut().zip(val(*logits)).zip(targets) {
                    let p = T::one() / (T::one() + (-z).exp());
                    *d += s * (p - y);
                }
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: usize,
        probs: &[T],
        local: &mut [Option<Vec<T>>],
    ) {
        let nodes = &self.nodes;
        let (qr, c) = (nodes[q.0].value.rows(), nodes[q.0].value.cols());
        let kr = nodes[k.0].value.rows();
        let (n, m, d) = (qr / groups, kr / groups, c / heads);
        let scale = T::of(1.0 / (d as f64).sqrt());
        let (qv, kv, vv) = (nodes[q.0].value.data(), nodes[k.0].value.data(), nodes[v.0].value.data());
        let mut dq = vec![T::zero(); qr * c];
        let mut dk = vec![T::zero(); kr * c];
        let mut dv = vec![T::zero(); kr * c];
        let mut ds = vec![T::zero(); m];
        for gi in 0..groups {
            for h in 0..heads {
                let off = h * d;
                for i in 0..n {
                    let qrow = (gi * n + i) * c + off;
                    let go = &g[qrow..qrow + d];
                    let base = ((gi * heads + h) * n + i) * m;
                    let p = &probs[base..base + m];
                    let mut s = T::zero();
                    for j in 0..m {
                        let vrow = (gi * m + j) * c + off;
                        let dp = dot(go, &vv[vrow..vrow + d]);
                        ds[j] = dp;
                        s += dp * p[j];
                    }
                    for j in 0..m {
                        ds[j] = p[j] * (ds[j] - s) * scale;
                    }
                    for j in 0..m {
                        let krow = (gi * m + j) * c + off;
                        axpy(ds[j], &kv[krow..krow + d], &mut dq[qrow..qrow + d]);
                        axpy(ds[j], &qv[qrow..qrow + d], &mut dk[krow..krow + d]);
                        axpy(p[j], go, &mut dv[krow..krow + d]);
                    }
                }
            }
        }
        for (var, grad) in [(q, dq), (k, dk), (v, dv)] {
            if !nodes[var.0].requires_grad {
                continue;
            }
            match &mut local[var.0] {
                Some(buf) => axpy(T::one(), &grad, buf),
                slot @ None => *slot = Some(grad),
            }
        }
    }
}

fn slot<'a, T: Real>(local: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(local[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

#[inline]
fn bcast<T: Real>(v: &[T], i: usize) -> T {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn accumulate_broadcast<T: Real>(dst: &mut [T], g: &[T], sign: T) {
    if dst.len() == g.len() {
        axpy(sign, g, dst);
    } else {
        dst[0] += sign * g.iter().copied().sum::<T>();
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    let inv = T::one() / s;
    for x in row.iter_mut() {
        *x *= inv;
    }
}
