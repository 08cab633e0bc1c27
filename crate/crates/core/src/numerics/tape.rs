//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every forward operation as a node holding its value and
//! the inputs it was computed from. Nodes are appended in topological order,
//! so [`Tape::backward`] is a single reverse sweep. Build a fresh tape per
//! step; tapes are cheap and never shared across threads.

use super::tensor::Tensor;
use crate::error::{Result, XcbError};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One output token of an integrate-and-fire pass: the half-open interval of
/// cumulative weight it integrates. `hi == f64::INFINITY` takes all
/// remaining weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    Sum(Var),
    Abs(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ShiftRows(Var, isize),
    MeanRows(Var),
    MulScalarVar(Var, Var),
    Reciprocal(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    IntegrateFire {
        emb: Var,
        weights: Var,
        coef: Vec<f64>,
        cumsum: Vec<f64>,
        intervals: Vec<FireInterval>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g[m,n] · bᵀ` where `b` is `[k,n]`, accumulated into `out[m,k]`.
fn acc_matmul_bt(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `aᵀ · g` where `a` is `[m,k]` and `g` is `[m,n]`, accumulated into `out[k,n]`.
fn acc_matmul_at(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(data: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, orow) in data.chunks(d).zip(out.chunks_mut(d)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            *o = (x - max).exp();
            z += *o;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    out
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn cumsum(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(XcbError::Numerical(format!("non-finite value {bad} in {op:?}").chars().take(200).collect()));
        }
        let value = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor invariants already hold")
            .with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(XcbError::dim(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.req(a) || self.req(b);
        self.push(vec![m, n], data, Op::MatMul(a, b), rg)
    }

    /// `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(XcbError::dim(format!("add {sa:?} + {sb:?}")));
        }
        let bd = self.value(b).data();
        let n = bd.len();
        let data = self.value(a).data().iter().enumerate().map(|(i, x)| x + bd[i % n]).collect();
        let shape = sa.to_vec();
        let rg = self.req(a) || self.req(b);
        self.push(shape, data, Op::Add(a, b), rg)
    }

    /// Elementwise `a * b`, with `b` broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(XcbError::dim(format!("mul {sa:?} * {sb:?}")));
        }
        let bd = self.value(b).data();
        let n = bd.len();
        let data = self.value(a).data().iter().enumerate().map(|(i, x)| x * bd[i % n]).collect();
        let shape = sa.to_vec();
        let rg = self.req(a) || self.req(b);
        self.push(shape, data, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Sigmoid(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = softmax_rows(t.data(), t.last_dim());
        let shape = t.shape().to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Softmax(a), rg)
    }

    /// Per-row normalisation over the last axis followed by `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(XcbError::dim(format!(
                "layernorm width {d} vs gain {:?} bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.req(x) || self.req(gain) || self.req(bias);
        self.push(shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(XcbError::dim(format!("transpose of {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.req(a);
        self.push(vec![n, m], data, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.req(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Abs(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(XcbError::dim(format!("reshape {:?} -> {shape:?}", self.shape(a))));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Reshape(a), rg)
    }

    /// Stacks 2-D tensors with equal widths along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| XcbError::dim("concat of nothing"))?;
        let d = self.value(first).last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != d {
                return Err(XcbError::dim(format!("concat row width {s:?} vs {d}")));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.req(p));
        self.push(vec![rows, d], data, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Selects rows of a 2-D tensor (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 || idx.is_empty() {
            return Err(XcbError::dim(format!("gather from {s:?} with {} indices", idx.len())));
        }
        let (n, d) = (s[0], s[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(XcbError::dim(format!("row index {bad} out of range {n}")));
        }
        let sd = self.value(src).data();
        let data = idx.iter().flat_map(|&i| sd[i * d..(i + 1) * d].iter().copied()).collect();
        let rg = self.req(src);
        self.push(vec![idx.len(), d], data, Op::GatherRows(src, idx.to_vec()), rg)
    }

    /// `out[t] = x[clamp(t + offset)]` for a `[T, d]` tensor (edge padding).
    pub fn shift_rows(&mut self, src: Var, offset: isize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(XcbError::dim(format!("shift of {s:?}")));
        }
        let (t, d) = (s[0], s[1]);
        let sd = self.value(src).data();
        let mut data = Vec::with_capacity(t * d);
        for i in 0..t {
            let j = (i as isize + offset).clamp(0, t as isize - 1) as usize;
            data.extend_from_slice(&sd[j * d..(j + 1) * d]);
        }
        let rg = self.req(src);
        self.push(vec![t, d], data, Op::ShiftRows(src, offset), rg)
    }

    /// Mean over the first axis of a 2-D tensor, keeping a `[1, d]` shape.
    pub fn mean_rows(&mut self, src: Var) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(XcbError::dim(format!("mean_rows of {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let sd = self.value(src).data();
        let mut data = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                data[j] += sd[r * d + j];
            }
        }
        data.iter_mut().for_each(|v| *v /= n as f64);
        let rg = self.req(src);
        self.push(vec![1, d], data, Op::MeanRows(src), rg)
    }

    /// `x * s` for a scalar node `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(XcbError::dim("mul_scalar_var needs a scalar"));
        }
        let sv = self.value(s).item();
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.req(x) || self.req(s);
        self.push(shape, data, Op::MulScalarVar(x, s), rg)
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|v| 1.0 / v).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.req(a);
        self.push(shape, data, Op::Reciprocal(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    /// Positions whose target equals `ignore_index` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: Option<usize>) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(XcbError::dim(format!("cross_entropy logits {s:?} vs {} targets", targets.len())));
        }
        let v = s[1];
        let masked: Vec<Option<usize>> = targets.iter().map(|&t| (Some(t) != ignore_index).then_some(t)).collect();
        if let Some(bad) = masked.iter().flatten().find(|&&t| t >= v) {
            return Err(XcbError::dim(format!("target {bad} outside vocabulary of {v}")));
        }
        let count = masked.iter().flatten().count();
        if count == 0 {
            return Err(XcbError::DegenerateLoss);
        }
        let probs = softmax_rows(self.value(logits).data(), v);
        let lv = self.value(logits).data();
        let mut loss = 0.0;
        for (r, t) in masked.iter().enumerate() {
            if let Some(t) = *t {
                let row = &lv[r * v..(r + 1) * v];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
            }
        }
        loss /= count as f64;
        let rg = self.req(logits);
        self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                probs,
                targets: masked,
                count,
            },
            rg,
        )
    }

    /// Integrate-and-fire: each output row `l` is `Σ_t c[l,t] · emb[t]`, where
    /// `c[l,t]` is the overlap between frame `t`'s slice of cumulative weight
    /// `[S_{t-1}, S_t)` and `intervals[l]`.
    pub fn integrate_fire(&mut self, emb: Var, weights: Var, intervals: &[FireInterval]) -> Result<Var> {
        let s = self.shape(emb);
        if s.len() != 2 {
            return Err(XcbError::dim(format!("integrate_fire embeddings {s:?}")));
        }
        let (t, d) = (s[0], s[1]);
        if self.value(weights).len() != t {
            return Err(XcbError::dim(format!(
                "integrate_fire has {t} frames but {} weights",
                self.value(weights).len()
            )));
        }
        if intervals.is_empty() {
            return Err(XcbError::dim("integrate_fire with no output tokens"));
        }
        let cs = cumsum(self.value(weights).data());
        let l = intervals.len();
        let mut coef = vec![0.0; l * t];
        for (li, iv) in intervals.iter().enumerate() {
            let mut prev = 0.0f64;
            for (ti, &st) in cs.iter().enumerate() {
                let c = st.min(iv.hi) - prev.max(iv.lo);
                if c > 0.0 {
                    coef[li * t + ti] = c;
                }
                prev = st;
            }
        }
        let data = matmul_raw(&coef, self.value(emb).data(), l, t, d);
        let rg = self.req(emb) || self.req(weights);
        self.push(
            vec![l, d],
            data,
            Op::IntegrateFire {
                emb,
                weights,
                coef,
                cumsum: cs,
                intervals: intervals.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar root. Every node that requires a gradient
    /// and is an ancestor of `loss` gets its `grad` populated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(XcbError::Contract(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].value.requires_grad() {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                acc(*a, &mut |ga| acc_matmul_bt(ga, g, val(*b).data(), m, k, n));
                acc(*b, &mut |gb| acc_matmul_at(gb, val(*a).data(), g, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let n = val(*b).len();
                acc(*b, &mut |gb| {
                    for (j, gv) in g.iter().enumerate() {
                        gb[j % n] += gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let n = bd.len();
                acc(*a, &mut |ga| {
                    for (j, gv) in g.iter().enumerate() {
                        ga[j] += gv * bd[j % n];
                    }
                });
                acc(*b, &mut |gb| {
                    for (j, gv) in g.iter().enumerate() {
                        gb[j % n] += gv * ad[j];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Relu(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        if ad[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = nodes[i].value.data();
                let d = nodes[i].value.last_dim();
                acc(*a, &mut |ga| {
                    for r in 0..y.len() / d {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            ga[r * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = val(*gain).len();
                let gv = val(*gain).data();
                let rows = xhat.len() / d;
                acc(*bias, &mut |gb| {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let gh: Vec<f64> = (0..d).map(|j| g[r * d + j] * gv[j]).collect();
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghx: f64 = gh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += k * (d as f64 * gh[j] - sum_gh - xh[j] * sum_ghx);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let s = val(*a).shape();
                let (m, n) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Abs(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * ad[j].signum() * f64::from(ad[j] != 0.0);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |gp| gp.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y));
                    off += n;
                }
            }
            Op::GatherRows(src, idx) => {
                let d = val(*src).last_dim();
                acc(*src, &mut |gs| {
                    for (r, &k) in idx.iter().enumerate() {
                        for j in 0..d {
                            gs[k * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::ShiftRows(src, offset) => {
                let s = val(*src).shape();
                let (t, d) = (s[0], s[1]);
                acc(*src, &mut |gs| {
                    for r in 0..t {
                        let k = (r as isize + offset).clamp(0, t as isize - 1) as usize;
                        for j in 0..d {
                            gs[k * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::MeanRows(src) => {
                let s = val(*src).shape();
                let (n, d) = (s[0], s[1]);
                acc(*src, &mut |gs| {
                    for r in 0..n {
                        for j in 0..d {
                            gs[r * d + j] += g[j] / n as f64;
                        }
                    }
                });
            }
            Op::MulScalarVar(x, s) => {
                let sv = val(*s).item();
                let xd = val(*x).data();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * sv));
                acc(*s, &mut |gs| gs[0] += g.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>());
            }
            Op::Reciprocal(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] -= g[j] / (ad[j] * ad[j]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                let v = val(*logits).last_dim();
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |gl| {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..v {
                                gl[r * v + j] += scale * probs[r * v + j];
                            }
                            gl[r * v + t] -= scale;
                        }
                    }
                });
            }
            Op::IntegrateFire {
                emb,
                weights,
                coef,
                cumsum,
                intervals,
            } => {
                let s = val(*emb).shape();
                let (t, d) = (s[0], s[1]);
                let l = intervals.len();
                acc(*emb, &mut |ge| acc_matmul_at(ge, coef, g, l, t, d));
                if val(*weights).requires_grad() {
                    // dL/dc[l,t] = g[l] · emb[t]; c depends on S_t and S_{t-1}.
                    let ed = val(*emb).data();
                    let mut g_cum = vec![0.0; t];
                    for (li, iv) in intervals.iter().enumerate() {
                        for ti in 0..t {
                            if coef[li * t + ti] <= 0.0 {
                                continue;
                            }
                            let gc: f64 = g[li * d..(li + 1) * d]
                                .iter()
                                .zip(&ed[ti * d..(ti + 1) * d])
                                .map(|(a, b)| a * b)
                                .sum();
                            if cumsum[ti] < iv.hi {
                                g_cum[ti] += gc;
                            }
                            if ti > 0 && cumsum[ti - 1] > iv.lo {
                                g_cum[ti - 1] -= gc;
                            }
                        }
                    }
                    acc(*weights, &mut |gw| {
                        let mut run = 0.0;
                        for ti in (0..t).rev() {
                            run += g_cum[ti];
                            gw[ti] += run;
                        }
                    });
                }
            }
        }
    }
}
