//! Reverse-mode differentiation tape.
//!
//! Operations append nodes in evaluation order, so node inputs always precede the
//! node itself and a single reverse sweep visits every node once.

use crate::attend::{attend, attend_backward, AttnWeights, Prefix, Window};
use crate::error::{Error, Result};
use crate::memory::{retrieve_backward, retrieve_rows, KeyTable, Selection};

use super::{Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which stage produced a block of attention scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    /// Token-to-token scores of standard or windowed attention.
    Token,
    /// Mixer-to-token scores while building search patterns.
    SearchPattern,
    /// Retrieved-concept scores over the self slot and all tokens (ACR construction).
    Integration,
    /// Token scores over ACR slots and the local window.
    Broadcasting,
    /// Search-pattern scores against memory keys.
    Retrieval,
}

/// Instrumented score-entry and buffer counters, accumulated per tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoreCounters {
    pub token: u64,
    pub search_pattern: u64,
    pub integration: u64,
    pub broadcasting: u64,
    pub retrieval: u64,
    /// Elements of transient buffers: score matrices, ACR rows and retrieval buffers.
    pub transient_elements: u64,
}

impl ScoreCounters {
    /// Entries of the contextualization softmaxes: token attention for standard
    /// attention, integration plus broadcasting for the memory layer.
    pub fn contextualization_entries(&self) -> u64 {
        self.token + self.integration + self.broadcasting
    }

    fn add(&mut self, kind: ScoreKind, entries: u64) {
        match kind {
            ScoreKind::Token => self.token += entries,
            ScoreKind::SearchPattern => self.search_pattern += entries,
            ScoreKind::Integration => self.integration += entries,
            ScoreKind::Broadcasting => self.broadcasting += entries,
            ScoreKind::Retrieval => self.retrieval += entries,
        }
        self.transient_elements += entries;
    }
}

/// Prefix slots for [`Tape::attend`], expressed as tape variables.
#[derive(Clone, Copy, Debug)]
pub enum TapePrefix {
    None,
    Shared(Var, Var),
    PerRow(Var, Var),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        rstd: Vec<T>,
    },
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    Attend {
        q: Var,
        keys: Var,
        values: Var,
        prefix: TapePrefix,
        scale: T,
        weights: AttnWeights<T>,
    },
    Retrieve {
        sigma: Var,
        keys: KeyTable<Var>,
        cells: Var,
        selections: Vec<Selection<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of tensor operations supporting one reverse sweep.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    counters: ScoreCounters,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            counters: ScoreCounters::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn counters(&self) -> &ScoreCounters {
        &self.counters
    }

    pub fn attention_weights(&self, v: Var) -> Option<&AttnWeights<T>> {
        match &self.nodes[v.0].op {
            Op::Attend { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn selections(&self, v: Var) -> Option<&[Selection<T>]> {
        match &self.nodes[v.0].op {
            Op::Retrieve { selections, .. } => Some(selections),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(
            !value.data().iter().any(|x| x.is_nan()),
            "NaN produced by tape operation"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- recorded operations -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds the `1×q` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        let c = out.cols();
        for i in 0..out.rows() {
            for (x, &y) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        debug_assert_eq!(c, bv.cols());
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_rows(&vals)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_cols(&vals)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, width)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).gather_rows(indices)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::lit(GELU_C);
        let k = T::lit(0.044715);
        let half = T::lit(0.5);
        let out = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with a `1×q` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let q = xv.cols();
        if g.shape() != [1, q] || b.shape() != [1, q] {
            return Err(Error::dim("layer_norm", xv.shape(), g.shape()));
        }
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(xv.rows());
        let qn = T::lit(q as f64);
        for i in 0..xv.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().copied().sum::<T>() / qn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / qn;
            let r = T::one() / (var + T::lit(LN_EPS)).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * r * g.data()[j] + b.data()[j];
            }
            rstd.push(r);
        }
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, rstd }, rg))
    }

    /// Column means, `p×q → 1×q`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (p, q) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[1, q]);
        for i in 0..p {
            for (o, &x) in out.data_mut().iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let inv = T::one() / T::lit(p.max(1) as f64);
        let out = out.scale(inv);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean cross-entropy of row-wise logits against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::arg(format!("cross_entropy: target {t} out of range")));
        }
        let probs = lv.softmax_rows()?;
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            loss += lse - row[t];
        }
        let loss = loss / T::lit(targets.len().max(1) as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Fused softmax attention; see [`crate::attend::attend`].
    #[allow(clippy::too_many_arguments)]
    pub fn attend(
        &mut self,
        q: Var,
        keys: Var,
        values: Var,
        prefix: TapePrefix,
        window: Window,
        scale: T,
        kind: ScoreKind,
    ) -> Result<Var> {
        let (out, weights) = {
            let p = self.prefix_view(prefix);
            attend(self.value(q), self.value(keys), self.value(values), p, window, scale)?
        };
        self.counters.add(kind, weights.num_entries() as u64);
        if kind == ScoreKind::Integration {
            // the ACR rows themselves
            self.counters.transient_elements += out.numel() as u64;
        }
        let mut deps = vec![q, keys, values];
        match prefix {
            TapePrefix::None => {}
            TapePrefix::Shared(a, b) | TapePrefix::PerRow(a, b) => deps.extend([a, b]),
        }
        let rg = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::Attend {
                q,
                keys,
                values,
                prefix,
                scale,
                weights,
            },
            rg,
        ))
    }

    /// Top-k memory retrieval for every row of `sigma`; see [`crate::memory`].
    pub fn retrieve(&mut self, sigma: Var, keys: KeyTable<Var>, cells: Var, k_top: usize) -> Result<Var> {
        let (out, selections) = {
            let kt = keys.as_ref().map(|v| self.value(*v));
            retrieve_rows(self.value(sigma), kt, self.value(cells), k_top)?
        };
        let m = self.value(sigma).rows() as u64;
        let per_pattern = match keys {
            KeyTable::Flat(k) => self.value(k).rows() as u64,
            KeyTable::Product(a, b) => {
                (self.value(a).rows() + self.value(b).rows() + k_top * k_top) as u64
            }
        };
        self.counters.add(ScoreKind::Retrieval, m * per_pattern);
        self.counters.transient_elements += out.numel() as u64;
        let mut deps = vec![sigma, cells];
        match keys {
            KeyTable::Flat(k) => deps.push(k),
            KeyTable::Product(a, b) => deps.extend([a, b]),
        }
        let rg = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::Retrieve {
                sigma,
                keys,
                cells,
                selections,
            },
            rg,
        ))
    }

    fn prefix_view(&self, p: TapePrefix) -> Prefix<'_, T> {
        match p {
            TapePrefix::None => Prefix::None,
            TapePrefix::Shared(k, v) => Prefix::Shared {
                keys: self.value(k),
                values: self.value(v),
            },
            TapePrefix::PerRow(k, v) => Prefix::PerRow {
                keys: self.value(k),
                values: self.value(v),
            },
        }
    }

    // ----- reverse sweep -----

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Populates gradients of the scalar `root` for every node that requires them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::arg(
                "backward already ran on this tape; call reset_grads first",
            ));
        }
        let shape = self.value(root).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::arg(format!(
                "backward root must be a scalar, got shape {shape:?}"
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::full(&shape, T::one()));
        self.backward_done = true;

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.node_backward(idx, &g);
            self.grads[idx] = Some(g);
            for (v, dv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&dv),
                    slot @ None => *slot = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(*a) {
                    out.push((*a, g.matmul_nt(val(*b)).expect("matmul grad")));
                }
                if need(*b) {
                    out.push((*b, val(*a).matmul_tn(g).expect("matmul grad")));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::AddRow(a, b) => {
                out.push((*a, g.clone()));
                if need(*b) {
                    let mut db = Tensor::zeros(val(*b).shape());
                    for i in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    out.push((*a, g.mul(val(*b)).expect("mul grad")));
                }
                if need(*b) {
                    out.push((*b, g.mul(val(*a)).expect("mul grad")));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.scale(*c))),
            Op::Transpose(a) => out.push((*a, g.transpose().expect("transpose grad"))),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let r = val(p).rows();
                    if need(p) {
                        out.push((p, g.slice_rows(start, r).expect("concat grad")));
                    }
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if need(p) {
                        out.push((p, g.slice_cols(start, c).expect("concat grad")));
                    }
                    start += c;
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let mut da = Tensor::zeros(av.shape());
                let w = g.cols();
                for i in 0..g.rows() {
                    da.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                out.push((*a, da));
            }
            Op::GatherRows(a, indices) => {
                let mut da = Tensor::zeros(val(*a).shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &x) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                out.push((*a, da));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner = super::dot(yr, gr);
                    for ((d, &yy), &gg) in da.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = yy * (gg - inner);
                    }
                }
                out.push((*a, da));
            }
            Op::Gelu(a) => {
                let c = T::lit(GELU_C);
                let k = T::lit(0.044715);
                let half = T::lit(0.5);
                let three_k = T::lit(3.0 * 0.044715);
                let xv = val(*a);
                let mut da = xv.clone();
                for (d, (&x, &gg)) in da.data_mut().iter_mut().zip(xv.data().iter().zip(g.data())) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three_k * x * x);
                    *d = gg * (half * (T::one() + t) + half * x * dt);
                }
                out.push((*a, da));
            }
            Op::LayerNorm { x, gain, bias, rstd } => {
                let xv = val(*x);
                let gv = val(*gain);
                let q = xv.cols();
                let qn = T::lit(q as f64);
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = Tensor::zeros(gv.shape());
                let mut db = Tensor::zeros(gv.shape());
                let mut xhat = vec![T::zero(); q];
                for i in 0..xv.rows() {
                    let row = xv.row(i);
                    let mean = row.iter().copied().sum::<T>() / qn;
                    for j in 0..q {
                        xhat[j] = (row[j] - mean) * rstd[i];
                    }
                    let gr = g.row(i);
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..q {
                        let dxh = gr[j] * gv.data()[j];
                        m1 += dxh;
                        m2 += dxh * xhat[j];
                        dg.data_mut()[j] += gr[j] * xhat[j];
                        db.data_mut()[j] += gr[j];
                    }
                    m1 /= qn;
                    m2 /= qn;
                    let dxr = dx.row_mut(i);
                    for j in 0..q {
                        let dxh = gr[j] * gv.data()[j];
                        dxr[j] = rstd[i] * (dxh - m1 - xhat[j] * m2);
                    }
                }
                out.push((*x, dx));
                out.push((*gain, dg));
                out.push((*bias, db));
            }
            Op::MeanRows(a) => {
                let av = val(*a);
                let inv = T::one() / T::lit(av.rows().max(1) as f64);
                let mut da = Tensor::zeros(av.shape());
                for i in 0..av.rows() {
                    for (d, &x) in da.row_mut(i).iter_mut().zip(g.data()) {
                        *d = x * inv;
                    }
                }
                out.push((*a, da));
            }
            Op::Sum(a) => out.push((*a, Tensor::full(val(*a).shape(), g.data()[0]))),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.data()[0] / T::lit(targets.len().max(1) as f64);
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    let r = d.row_mut(i);
                    r[t] -= T::one();
                    for x in r.iter_mut() {
                        *x *= scale;
                    }
                }
                out.push((*logits, d));
            }
            Op::Attend {
                q,
                keys,
                values,
                prefix,
                scale,
                weights,
            } => {
                let grads = attend_backward(
                    val(*q),
                    val(*keys),
                    val(*values),
                    self.prefix_view(*prefix),
                    weights,
                    *scale,
                    g,
                );
                out.push((*q, grads.q));
                out.push((*keys, grads.keys));
                out.push((*values, grads.values));
                if let TapePrefix::Shared(k, v) | TapePrefix::PerRow(k, v) = prefix {
                    out.push((*k, grads.prefix_keys.expect("prefix grads")));
                    out.push((*v, grads.prefix_values.expect("prefix grads")));
                }
            }
            Op::Retrieve {
                sigma,
                keys,
                cells,
                selections,
            } => {
                let kt = keys.as_ref().map(|v| val(*v));
                let (dsigma, dkeys, dcells) =
                    retrieve_backward(val(*sigma), kt, val(*cells), selections, g);
                out.push((*sigma, dsigma));
                out.push((*cells, dcells));
                match (keys, dkeys) {
                    (KeyTable::Flat(k), KeyTable::Flat(dk)) => out.push((*k, dk)),
                    (KeyTable::Product(a, b), KeyTable::Product(da, db)) => {
                        out.push((*a, da));
                        out.push((*b, db));
                    }
                    _ => unreachable!("key table layout is preserved"),
                }
            }
        }
        out
    }
}
