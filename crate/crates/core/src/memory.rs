//! The trainable memory unit: search patterns, flat top-k retrieval and exact
//! product-key retrieval.
//!
//! Cells `μ` hold concepts as `[μ^q | μ^k | μ^v]` rows of width `3d`. Keys are
//! either a flat `M×d` table or two `√M × d/2` half tables whose Cartesian product
//! spans the `M` composite keys; composite key `j` pairs half rows
//! `j₁ = j / √M` and `j₂ = j % √M`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attend::{attend, Prefix, Window};
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, softmax_in_place, topk, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    Flat,
    Product,
}

/// Memory key storage, generic over the parameter representation.
#[derive(Clone, Debug, PartialEq)]
pub enum KeyTable<P> {
    Flat(P),
    Product(P, P),
}

impl<P> KeyTable<P> {
    pub fn as_ref(&self) -> KeyTable<&P> {
        match self {
            KeyTable::Flat(k) => KeyTable::Flat(k),
            KeyTable::Product(a, b) => KeyTable::Product(a, b),
        }
    }

    pub fn map<Q>(self, mut f: impl FnMut(P) -> Q) -> KeyTable<Q> {
        match self {
            KeyTable::Flat(k) => KeyTable::Flat(f(k)),
            KeyTable::Product(a, b) => {
                let a = f(a);
                KeyTable::Product(a, f(b))
            }
        }
    }

    pub fn mode(&self) -> KeyMode {
        match self {
            KeyTable::Flat(_) => KeyMode::Flat,
            KeyTable::Product(..) => KeyMode::Product,
        }
    }
}

/// `M` memory cells with their addressing keys.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryUnit<P> {
    pub cells: P,
    pub keys: KeyTable<P>,
}

pub type MemoryWeights<T = f32> = MemoryUnit<Tensor<T>>;

/// Integer square root when `m` is a perfect square.
pub fn exact_sqrt(m: usize) -> Option<usize> {
    let r = (m as f64).sqrt().round() as usize;
    (r * r == m).then_some(r)
}

impl<T: Scalar> MemoryUnit<Tensor<T>> {
    /// Random memory with cells and keys drawn from `N(0, 1/d)`.
    pub fn init(mode: KeyMode, size: usize, head_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let std = 1.0 / (head_dim as f64).sqrt();
        let keys = match mode {
            KeyMode::Flat => KeyTable::Flat(Tensor::randn(size, head_dim, std, rng)),
            KeyMode::Product => {
                let side = exact_sqrt(size).ok_or_else(|| {
                    Error::config(format!("product keys need a square memory size, got {size}"))
                })?;
                if head_dim % 2 != 0 {
                    return Err(Error::config(format!(
                        "product keys need an even head width, got {head_dim}"
                    )));
                }
                KeyTable::Product(
                    Tensor::randn(side, head_dim / 2, std, rng),
                    Tensor::randn(side, head_dim / 2, std, rng),
                )
            }
        };
        let cells = Tensor::randn(size, 3 * head_dim, std, rng);
        Ok(MemoryUnit { cells, keys })
    }

    pub fn size(&self) -> usize {
        self.cells.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.cells.cols() / 3
    }

    /// Checks the layout invariants against an expected `(M, d)`.
    pub fn validate(&self, size: usize, head_dim: usize) -> Result<()> {
        if self.cells.shape() != [size, 3 * head_dim] {
            return Err(Error::dim("memory cells", self.cells.shape(), &[size, 3 * head_dim]));
        }
        match &self.keys {
            KeyTable::Flat(k) => {
                if k.shape() != [size, head_dim] {
                    return Err(Error::dim("memory keys", k.shape(), &[size, head_dim]));
                }
            }
            KeyTable::Product(a, b) => {
                let side = exact_sqrt(size)
                    .ok_or_else(|| Error::config(format!("product keys need a square memory size, got {size}")))?;
                if head_dim % 2 != 0 {
                    return Err(Error::config("product keys need an even head width"));
                }
                for k in [a, b] {
                    if k.shape() != [side, head_dim / 2] {
                        return Err(Error::dim("memory half keys", k.shape(), &[side, head_dim / 2]));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-head search-pattern builder: `m` mixer vectors and two `D×d` projections.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchPatterns<P> {
    pub mixers: P,
    pub w_k: P,
    pub w_v: P,
}

pub type SearchPatternWeights<T = f32> = SearchPatterns<Tensor<T>>;

impl<T: Scalar> SearchPatterns<Tensor<T>> {
    pub fn init(patterns: usize, model_dim: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        SearchPatterns {
            mixers: Tensor::randn(patterns, head_dim, 1.0 / (head_dim as f64).sqrt(), rng),
            w_k: Tensor::glorot(model_dim, head_dim, rng),
            w_v: Tensor::glorot(model_dim, head_dim, rng),
        }
    }
}

/// Builds the `m×d` search patterns: each mixer cross-attends over the projected
/// tokens with `1/√d` logit scaling.
pub fn build_search_patterns<T: Scalar>(x: &Tensor<T>, w: &SearchPatternWeights<T>) -> Result<Tensor<T>> {
    if x.rows() == 0 {
        return Err(Error::arg("search patterns need at least one token"));
    }
    let xk = x.matmul(&w.w_k)?;
    let xv = x.matmul(&w.w_v)?;
    let d = w.mixers.cols();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let (sigma, _) = attend(&w.mixers, &xk, &xv, Prefix::None, Window::Full, scale)?;
    Ok(sigma)
}

/// Cells chosen for one search pattern: composite indices, their raw scores and
/// the softmax weights over those scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    pub indices: Vec<usize>,
    pub scores: Vec<T>,
    pub weights: Vec<T>,
}

/// Outcome of one memory lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult<T = f32> {
    pub indices: Vec<usize>,
    pub weights: Vec<T>,
    /// `Σ_t weights[t] · μ[indices[t]]`, width `3d`.
    pub concept: Vec<T>,
}

/// A retrieved concept split into its query, key and value parts.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedConcept<T = f32> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

pub fn split_concept<T: Scalar>(concept: &[T], head_dim: usize) -> Result<RetrievedConcept<T>> {
    if concept.len() != 3 * head_dim {
        return Err(Error::arg(format!(
            "concept has length {}, expected 3·{head_dim}",
            concept.len()
        )));
    }
    Ok(RetrievedConcept {
        query: concept[..head_dim].to_vec(),
        key: concept[head_dim..2 * head_dim].to_vec(),
        value: concept[2 * head_dim..].to_vec(),
    })
}

impl<T: Scalar> RetrievedConcept<T> {
    pub fn concat(&self) -> Vec<T> {
        let mut v = self.query.clone();
        v.extend_from_slice(&self.key);
        v.extend_from_slice(&self.value);
        v
    }
}

fn select_flat<T: Scalar>(sigma: &[T], keys: &Tensor<T>, k_top: usize) -> Result<Selection<T>> {
    let m = keys.rows();
    if k_top > m {
        return Err(Error::arg(format!("k_top = {k_top} exceeds memory size {m}")));
    }
    let scores: Vec<T> = (0..m).map(|j| dot(sigma, keys.row(j))).collect();
    let (indices, scores) = topk(&scores, k_top)?;
    let mut weights = scores.clone();
    softmax_in_place(&mut weights);
    Ok(Selection {
        indices,
        scores,
        weights,
    })
}

fn select_product<T: Scalar>(sigma: &[T], k1: &Tensor<T>, k2: &Tensor<T>, k_top: usize) -> Result<Selection<T>> {
    let side = k1.rows();
    if k_top > side {
        return Err(Error::arg(format!(
            "k_top = {k_top} exceeds the half-key table size {side}"
        )));
    }
    let half = k1.cols();
    let (s1, s2) = sigma.split_at(half);
    let scores1: Vec<T> = (0..side).map(|j| dot(s1, k1.row(j))).collect();
    let scores2: Vec<T> = (0..side).map(|j| dot(s2, k2.row(j))).collect();
    let (i1, v1) = topk(&scores1, k_top)?;
    let (i2, v2) = topk(&scores2, k_top)?;

    let mut candidates: Vec<(T, usize)> = Vec::with_capacity(k_top * k_top);
    for (a, &j1) in i1.iter().enumerate() {
        for (b, &j2) in i2.iter().enumerate() {
            candidates.push((v1[a] + v2[b], j1 * side + j2));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
    });
    candidates.truncate(k_top);
    let indices: Vec<usize> = candidates.iter().map(|c| c.1).collect();
    let scores: Vec<T> = candidates.iter().map(|c| c.0).collect();
    let mut weights = scores.clone();
    softmax_in_place(&mut weights);
    Ok(Selection {
        indices,
        scores,
        weights,
    })
}

fn select<T: Scalar>(sigma: &[T], keys: &KeyTable<&Tensor<T>>, k_top: usize) -> Result<Selection<T>> {
    match keys {
        KeyTable::Flat(k) => select_flat(sigma, k, k_top),
        KeyTable::Product(a, b) => select_product(sigma, a, b, k_top),
    }
}

fn combine<T: Scalar>(sel: &Selection<T>, cells: &Tensor<T>, out: &mut [T]) {
    for (&j, &w) in sel.indices.iter().zip(&sel.weights) {
        axpy(out, w, cells.row(j));
    }
}

fn retrieve_one<T: Scalar>(
    sigma: &[T],
    keys: KeyTable<&Tensor<T>>,
    cells: &Tensor<T>,
    k_top: usize,
) -> Result<RetrievalResult<T>> {
    let sel = select(sigma, &keys, k_top)?;
    let mut concept = vec![T::zero(); cells.cols()];
    combine(&sel, cells, &mut concept);
    Ok(RetrievalResult {
        indices: sel.indices,
        weights: sel.weights,
        concept,
    })
}

/// Flat-key retrieval: top-`k_top` cells by `σ·ξᵀ`, softmax over the selected
/// raw scores, weighted sum of the selected cells.
pub fn retrieve_flat<T: Scalar>(sigma: &[T], mem: &MemoryWeights<T>, k_top: usize) -> Result<RetrievalResult<T>> {
    match &mem.keys {
        KeyTable::Flat(k) => {
            if sigma.len() != k.cols() {
                return Err(Error::dim("retrieve_flat", &[sigma.len()], k.shape()));
            }
            retrieve_one(sigma, KeyTable::Flat(k), &mem.cells, k_top)
        }
        KeyTable::Product(..) => Err(Error::arg("retrieve_flat called on a product-key memory")),
    }
}

/// Product-key retrieval: per-half top-`k_top`, `k_top²` summed-score candidate
/// pairs, then the `k_top` best pairs (ties to the smaller composite index).
pub fn retrieve_product<T: Scalar>(
    sigma: &[T],
    mem: &MemoryWeights<T>,
    k_top: usize,
) -> Result<RetrievalResult<T>> {
    match &mem.keys {
        KeyTable::Product(a, b) => {
            if sigma.len() != 2 * a.cols() {
                return Err(Error::dim("retrieve_product", &[sigma.len()], a.shape()));
            }
            retrieve_one(sigma, KeyTable::Product(a, b), &mem.cells, k_top)
        }
        KeyTable::Flat(_) => Err(Error::arg("retrieve_product called on a flat-key memory")),
    }
}

/// Brute-force top-`k` over all `√M·√M` composite keys, scoring each composite
/// key as the sum of its two half scores. Used by the retrieval self-check.
pub fn composite_topk_bruteforce<T: Scalar>(
    sigma: &[T],
    k1: &Tensor<T>,
    k2: &Tensor<T>,
    k: usize,
) -> Result<Vec<usize>> {
    let side = k1.rows();
    let half = k1.cols();
    let mut all = Vec::with_capacity(side * side);
    for j1 in 0..side {
        for j2 in 0..side {
            all.push(dot(&sigma[..half], k1.row(j1)) + dot(&sigma[half..], k2.row(j2)));
        }
    }
    Ok(topk(&all, k)?.0)
}

/// Retrieves one concept per row of `sigma`; returns the `rows × 3d` concepts and
/// the selections needed for the backward pass.
pub(crate) fn retrieve_rows<T: Scalar>(
    sigma: &Tensor<T>,
    keys: KeyTable<&Tensor<T>>,
    cells: &Tensor<T>,
    k_top: usize,
) -> Result<(Tensor<T>, Vec<Selection<T>>)> {
    let width = match &keys {
        KeyTable::Flat(k) => k.cols(),
        KeyTable::Product(a, b) => {
            if a.shape() != b.shape() {
                return Err(Error::dim("product keys", a.shape(), b.shape()));
            }
            2 * a.cols()
        }
    };
    if sigma.cols() != width || cells.cols() != 3 * width {
        return Err(Error::dim("retrieve", sigma.shape(), cells.shape()));
    }
    let mut out = Tensor::zeros(&[sigma.rows(), cells.cols()]);
    let mut selections = Vec::with_capacity(sigma.rows());
    for i in 0..sigma.rows() {
        let sel = select(sigma.row(i), &keys, k_top)?;
        combine(&sel, cells, out.row_mut(i));
        selections.push(sel);
    }
    Ok((out, selections))
}

/// Gradients of [`retrieve_rows`]; index selection is treated as constant.
pub(crate) fn retrieve_backward<T: Scalar>(
    sigma: &Tensor<T>,
    keys: KeyTable<&Tensor<T>>,
    cells: &Tensor<T>,
    selections: &[Selection<T>],
    dout: &Tensor<T>,
) -> (Tensor<T>, KeyTable<Tensor<T>>, Tensor<T>) {
    let mut dsigma = Tensor::zeros(sigma.shape());
    let mut dcells = Tensor::zeros(cells.shape());
    let mut dkeys = keys.as_ref().map(|k| Tensor::zeros(k.shape()));
    let mut dscore: Vec<T> = Vec::new();
    for (i, sel) in selections.iter().enumerate() {
        let g = dout.row(i);
        dscore.clear();
        for (&j, &w) in sel.indices.iter().zip(&sel.weights) {
            axpy(dcells.row_mut(j), w, g);
            dscore.push(dot(g, cells.row(j)));
        }
        let mean: T = sel.weights.iter().zip(&dscore).map(|(&w, &d)| w * d).sum();
        let s = sigma.row(i);
        for (t, &j) in sel.indices.iter().enumerate() {
            let dz = sel.weights[t] * (dscore[t] - mean);
            match (&keys, &mut dkeys) {
                (KeyTable::Flat(k), KeyTable::Flat(dk)) => {
                    axpy(dsigma.row_mut(i), dz, k.row(j));
                    axpy(dk.row_mut(j), dz, s);
                }
                (KeyTable::Product(k1, k2), KeyTable::Product(dk1, dk2)) => {
                    let side = k1.rows();
                    let half = k1.cols();
                    let (j1, j2) = (j / side, j % side);
                    let ds = dsigma.row_mut(i);
                    axpy(&mut ds[..half], dz, k1.row(j1));
                    axpy(&mut ds[half..], dz, k2.row(j2));
                    axpy(dk1.row_mut(j1), dz, &s[..half]);
                    axpy(dk2.row_mut(j2), dz, &s[half..]);
                }
                _ => unreachable!("key table layout is preserved"),
            }
        }
    }
    (dsigma, dkeys, dcells)
}
