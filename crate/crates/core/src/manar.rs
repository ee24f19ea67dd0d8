//! The memory-augmented contextualization layer.
//!
//! Per head, a forward pass runs:
//!
//! 1. search patterns: `m` mixers cross-attend over the tokens;
//! 2. retrieval: each pattern pulls a concept `(c^q, c^k, c^v)` out of the shared memory;
//! 3. conceptualization: `k^M, q, k, v = X·W_k^M, X·W_q, X·W_k, X·W_v`;
//! 4. integration: each concept attends over itself and every token, giving the
//!    `m×d` abstract conceptual representation (ACR);
//! 5. broadcasting: each token attends jointly over the ACR slots (keyed by
//!    `r·W_k^r`) and its local ROI window.
//!
//! Head outputs are concatenated and projected by `W_o`. With `m = 0` steps 1, 2
//! and 4 vanish and the layer is windowed multi-head attention.

use std::ops::Range;

use rand::Rng;

use crate::attend::{attend, AttnWeights, Prefix, Window};
use crate::config::ManarConfig;
use crate::error::{Error, Result};
use crate::memory::{split_concept, KeyTable, MemoryUnit, RetrievalResult, RetrievedConcept, SearchPatterns};
use crate::params::{join, Parameters};
use crate::tensor::{Scalar, ScoreCounters, ScoreKind, Tape, TapePrefix, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ManarHead<P> {
    pub w_q: P,
    /// ACR key projection `W_k^M`.
    pub w_k_mem: P,
    /// Contextualization key projection.
    pub w_k: P,
    pub w_v: P,
    pub search: SearchPatterns<P>,
}

/// Weights of one layer. `w_k_r` and the memory are shared by all heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ManarLayer<P> {
    pub heads: Vec<ManarHead<P>>,
    pub w_k_r: P,
    pub w_o: P,
    pub memory: MemoryUnit<P>,
}

pub type ManarLayerWeights<T = f32> = ManarLayer<Tensor<T>>;

/// True for parameters introduced by the memory path (as opposed to the
/// projections shared with standard attention).
pub fn is_memory_param(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(leaf, "mixers" | "w_k_sp" | "w_v_sp" | "w_k_r")
        || name.split('.').any(|s| s == "memory")
}

impl<P> ManarLayer<P> {
    pub fn map_named<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> ManarLayer<Q> {
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(h, hw)| {
                let p = join(prefix, &format!("head{h}"));
                ManarHead {
                    w_q: f(&join(&p, "w_q"), &hw.w_q),
                    w_k_mem: f(&join(&p, "w_k_mem"), &hw.w_k_mem),
                    w_k: f(&join(&p, "w_k"), &hw.w_k),
                    w_v: f(&join(&p, "w_v"), &hw.w_v),
                    search: SearchPatterns {
                        mixers: f(&join(&p, "mixers"), &hw.search.mixers),
                        w_k: f(&join(&p, "w_k_sp"), &hw.search.w_k),
                        w_v: f(&join(&p, "w_v_sp"), &hw.search.w_v),
                    },
                }
            })
            .collect();
        let w_k_r = f(&join(prefix, "w_k_r"), &self.w_k_r);
        let w_o = f(&join(prefix, "w_o"), &self.w_o);
        let mp = join(prefix, "memory");
        let cells = f(&join(&mp, "cells"), &self.memory.cells);
        let keys = match &self.memory.keys {
            KeyTable::Flat(k) => KeyTable::Flat(f(&join(&mp, "keys"), k)),
            KeyTable::Product(a, b) => {
                let a = f(&join(&mp, "keys1"), a);
                KeyTable::Product(a, f(&join(&mp, "keys2"), b))
            }
        };
        ManarLayer {
            heads,
            w_k_r,
            w_o,
            memory: MemoryUnit { cells, keys },
        }
    }
}

impl<P> Parameters<P> for ManarLayer<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (h, hw) in self.heads.iter().enumerate() {
            let p = join(prefix, &format!("head{h}"));
            f(join(&p, "w_q"), &hw.w_q);
            f(join(&p, "w_k_mem"), &hw.w_k_mem);
            f(join(&p, "w_k"), &hw.w_k);
            f(join(&p, "w_v"), &hw.w_v);
            f(join(&p, "mixers"), &hw.search.mixers);
            f(join(&p, "w_k_sp"), &hw.search.w_k);
            f(join(&p, "w_v_sp"), &hw.search.w_v);
        }
        f(join(prefix, "w_k_r"), &self.w_k_r);
        f(join(prefix, "w_o"), &self.w_o);
        let mp = join(prefix, "memory");
        f(join(&mp, "cells"), &self.memory.cells);
        match &self.memory.keys {
            KeyTable::Flat(k) => f(join(&mp, "keys"), k),
            KeyTable::Product(a, b) => {
                f(join(&mp, "keys1"), a);
                f(join(&mp, "keys2"), b);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut P)) {
        for (h, hw) in self.heads.iter_mut().enumerate() {
            let p = join(prefix, &format!("head{h}"));
            f(join(&p, "w_q"), &mut hw.w_q);
            f(join(&p, "w_k_mem"), &mut hw.w_k_mem);
            f(join(&p, "w_k"), &mut hw.w_k);
            f(join(&p, "w_v"), &mut hw.w_v);
            f(join(&p, "mixers"), &mut hw.search.mixers);
            f(join(&p, "w_k_sp"), &mut hw.search.w_k);
            f(join(&p, "w_v_sp"), &mut hw.search.w_v);
        }
        f(join(prefix, "w_k_r"), &mut self.w_k_r);
        f(join(prefix, "w_o"), &mut self.w_o);
        let mp = join(prefix, "memory");
        f(join(&mp, "cells"), &mut self.memory.cells);
        match &mut self.memory.keys {
            KeyTable::Flat(k) => f(join(&mp, "keys"), k),
            KeyTable::Product(a, b) => {
                f(join(&mp, "keys1"), a);
                f(join(&mp, "keys2"), b);
            }
        }
    }
}

impl<T: Scalar> ManarLayer<Tensor<T>> {
    /// Projections Glorot-uniform; mixers, keys and cells from `N(0, 1/d)`.
    pub fn init(cfg: &ManarConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (dm, d) = (cfg.model_dim, cfg.head_dim);
        let heads = (0..cfg.heads)
            .map(|_| ManarHead {
                w_q: Tensor::glorot(dm, d, rng),
                w_k_mem: Tensor::glorot(dm, d, rng),
                w_k: Tensor::glorot(dm, d, rng),
                w_v: Tensor::glorot(dm, d, rng),
                search: SearchPatterns::init(cfg.acr_size, dm, d, rng),
            })
            .collect();
        Ok(ManarLayer {
            heads,
            w_k_r: Tensor::glorot(d, d, rng),
            w_o: Tensor::glorot(dm, dm, rng),
            memory: MemoryUnit::init(cfg.key_mode, cfg.memory_size, d, rng)?,
        })
    }

    /// Checks every shape against `cfg`.
    pub fn validate(&self, cfg: &ManarConfig) -> Result<()> {
        cfg.validate()?;
        let (dm, d, m) = (cfg.model_dim, cfg.head_dim, cfg.acr_size);
        if self.heads.len() != cfg.heads {
            return Err(Error::config(format!(
                "weights have {} heads, config has {}",
                self.heads.len(),
                cfg.heads
            )));
        }
        let expect = |t: &Tensor<T>, shape: [usize; 2], what: &'static str| {
            if t.shape() != shape {
                Err(Error::dim(what, t.shape(), &shape))
            } else {
                Ok(())
            }
        };
        for hw in &self.heads {
            for w in [&hw.w_q, &hw.w_k_mem, &hw.w_k, &hw.w_v, &hw.search.w_k, &hw.search.w_v] {
                expect(w, [dm, d], "head projection")?;
            }
            expect(&hw.search.mixers, [m, d], "mixers")?;
        }
        expect(&self.w_k_r, [d, d], "W_k^r")?;
        expect(&self.w_o, [dm, dm], "output projection")?;
        if self.memory.keys.mode() != cfg.key_mode {
            return Err(Error::config("memory key mode does not match config"));
        }
        self.memory.validate(cfg.memory_size, d)
    }
}

/// The `m×d` abstract conceptual representation of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct AcrMatrix<T = f32>(pub Tensor<T>);

impl<T: Scalar> AcrMatrix<T> {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// The four token projections of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct Conceptualized<T = f32> {
    pub k_mem: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

pub fn conceptualize<T: Scalar>(x: &Tensor<T>, head: &ManarHead<Tensor<T>>) -> Result<Conceptualized<T>> {
    if x.rows() == 0 {
        return Err(Error::arg("conceptualize needs at least one token"));
    }
    Ok(Conceptualized {
        k_mem: x.matmul(&head.w_k_mem)?,
        q: x.matmul(&head.w_q)?,
        k: x.matmul(&head.w_k)?,
        v: x.matmul(&head.w_v)?,
    })
}

fn concept_matrices<T: Scalar>(
    concepts: &[RetrievedConcept<T>],
    d: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    for c in concepts {
        if c.query.len() != d || c.key.len() != d || c.value.len() != d {
            return Err(Error::arg(format!("retrieved concept parts must have width {d}")));
        }
    }
    let build = |part: fn(&RetrievedConcept<T>) -> &Vec<T>| {
        Tensor::from_fn(concepts.len(), d, |i, j| part(&concepts[i])[j])
    };
    Ok((build(|c| &c.query), build(|c| &c.key), build(|c| &c.value)))
}

fn check_tokens<T: Scalar>(k_mem: &Tensor<T>, v: &Tensor<T>, d: usize) -> Result<()> {
    if k_mem.cols() != d || v.cols() != d || k_mem.rows() != v.rows() {
        return Err(Error::dim("ACR token inputs", k_mem.shape(), v.shape()));
    }
    if v.rows() == 0 {
        return Err(Error::arg("ACR construction needs at least one token"));
    }
    Ok(())
}

/// Integration stage: row `i` of the ACR is `S_{i,0}·c_i^v + Σ_j S_{i,j}·v_j`, where
/// `S_i` is the softmax over the self logit `c_i^q·c_i^k/√d` followed by the token
/// logits `c_i^q·k_j^M/√d`. Returns the ACR and the `m×(n+1)` weights.
pub fn build_acr<T: Scalar>(
    concepts: &[RetrievedConcept<T>],
    k_mem: &Tensor<T>,
    v: &Tensor<T>,
    d: usize,
) -> Result<(AcrMatrix<T>, Tensor<T>)> {
    check_tokens(k_mem, v, d)?;
    let n = v.rows();
    if concepts.is_empty() {
        return Ok((AcrMatrix(Tensor::zeros(&[0, d])), Tensor::zeros(&[0, n + 1])));
    }
    let (cq, ck, cv) = concept_matrices(concepts, d)?;
    let scale = T::one() / T::lit(d as f64).sqrt();
    let (r, w) = attend(
        &cq,
        k_mem,
        v,
        Prefix::PerRow { keys: &ck, values: &cv },
        Window::Full,
        scale,
    )?;
    Ok((AcrMatrix(r), w.dense()))
}

/// The ACR rebuilt through its two-term decomposition
/// `r_i = S_{i,0}·c_i^v + (1 − S_{i,0})·A_i`, where `A_i` is plain attention of
/// `c_i^q` over the tokens. Algebraically identical to [`build_acr`].
pub fn acr_decomposition<T: Scalar>(
    concepts: &[RetrievedConcept<T>],
    k_mem: &Tensor<T>,
    v: &Tensor<T>,
    d: usize,
) -> Result<AcrMatrix<T>> {
    check_tokens(k_mem, v, d)?;
    let n = v.rows();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut out = Tensor::zeros(&[concepts.len(), d]);
    let mut token_logits = vec![T::zero(); n];
    for (i, c) in concepts.iter().enumerate() {
        if c.query.len() != d || c.key.len() != d || c.value.len() != d {
            return Err(Error::arg(format!("retrieved concept parts must have width {d}")));
        }
        let self_logit = crate::tensor::dot(&c.query, &c.key) * scale;
        for (j, l) in token_logits.iter_mut().enumerate() {
            *l = crate::tensor::dot(&c.query, k_mem.row(j)) * scale;
        }
        let tmax = token_logits.iter().copied().fold(T::neg_infinity(), T::max);
        let mx = tmax.max(self_logit);
        let e_self = (self_logit - mx).exp();
        let token_sum: T = token_logits.iter().map(|&l| (l - mx).exp()).sum();
        let s0 = e_self / (e_self + token_sum);

        // term A: attention over the tokens alone
        let inner_sum: T = token_logits.iter().map(|&l| (l - tmax).exp()).sum();
        let mut a = vec![T::zero(); d];
        for (j, &l) in token_logits.iter().enumerate() {
            crate::tensor::axpy(&mut a, (l - tmax).exp() / inner_sum, v.row(j));
        }
        let row = out.row_mut(i);
        for t in 0..d {
            row[t] = s0 * c.value[t] + (T::one() - s0) * a[t];
        }
    }
    Ok(AcrMatrix(out))
}

/// Broadcasting stage: token `i` attends jointly over the `m` ACR slots (keys
/// `r_j·W_k^r`, values `r_j`) and then its ROI window (keys `k`, values `v`),
/// all logits scaled by `1/√d`. Returns head outputs and the ragged weights, whose
/// prefix part is `Ŝ` and token part is `S̃`.
pub fn contextualize_tokens<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    acr: &AcrMatrix<T>,
    w_k_r: &Tensor<T>,
    half_window: usize,
) -> Result<(Tensor<T>, AttnWeights<T>)> {
    let d = q.cols();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let prefix_keys;
    let prefix = if acr.rows() > 0 {
        prefix_keys = acr.0.matmul(w_k_r)?;
        Prefix::Shared {
            keys: &prefix_keys,
            values: &acr.0,
        }
    } else {
        Prefix::None
    };
    attend(q, k, v, prefix, Window::Roi(half_window), scale)
}

#[derive(Clone, Debug)]
pub(crate) struct ManarHeadVars {
    pub sigma: Option<Var>,
    pub concepts: Option<Var>,
    pub k_mem: Var,
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub acr: Option<Var>,
    pub out: Var,
}

#[derive(Clone, Debug)]
pub(crate) struct ManarVars {
    pub heads: Vec<ManarHeadVars>,
    pub out: Var,
}

pub(crate) fn manar_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &ManarLayer<Var>,
    cfg: &ManarConfig,
) -> Result<ManarVars> {
    let d = cfg.head_dim;
    let scale = T::one() / T::lit(d as f64).sqrt();
    let window = Window::Roi(cfg.half_window);
    let mut heads = Vec::with_capacity(w.heads.len());
    for hw in &w.heads {
        let k_mem = tape.matmul(x, hw.w_k_mem)?;
        let q = tape.matmul(x, hw.w_q)?;
        let k = tape.matmul(x, hw.w_k)?;
        let v = tape.matmul(x, hw.w_v)?;
        if cfg.acr_size == 0 {
            let out = tape.attend(q, k, v, TapePrefix::None, window, scale, ScoreKind::Broadcasting)?;
            heads.push(ManarHeadVars {
                sigma: None,
                concepts: None,
                k_mem,
                q,
                k,
                v,
                acr: None,
                out,
            });
            continue;
        }
        let xk = tape.matmul(x, hw.search.w_k)?;
        let xv = tape.matmul(x, hw.search.w_v)?;
        let sigma = tape.attend(
            hw.search.mixers,
            xk,
            xv,
            TapePrefix::None,
            Window::Full,
            scale,
            ScoreKind::SearchPattern,
        )?;
        let concepts = tape.retrieve(sigma, w.memory.keys.clone(), w.memory.cells, cfg.k_top)?;
        let cq = tape.slice_cols(concepts, 0, d)?;
        let ck = tape.slice_cols(concepts, d, d)?;
        let cv = tape.slice_cols(concepts, 2 * d, d)?;
        let acr = tape.attend(
            cq,
            k_mem,
            v,
            TapePrefix::PerRow(ck, cv),
            Window::Full,
            scale,
            ScoreKind::Integration,
        )?;
        let acr_keys = tape.matmul(acr, w.w_k_r)?;
        let out = tape.attend(
            q,
            k,
            v,
            TapePrefix::Shared(acr_keys, acr),
            window,
            scale,
            ScoreKind::Broadcasting,
        )?;
        heads.push(ManarHeadVars {
            sigma: Some(sigma),
            concepts: Some(concepts),
            k_mem,
            q,
            k,
            v,
            acr: Some(acr),
            out,
        });
    }
    let outs: Vec<Var> = heads.iter().map(|h| h.out).collect();
    let cat = tape.concat_cols(&outs)?;
    let out = tape.matmul(cat, w.w_o)?;
    Ok(ManarVars { heads, out })
}

/// Intermediates of one head of a forward pass.
#[derive(Clone, Debug)]
pub struct HeadTrace<T = f32> {
    pub search_patterns: Tensor<T>,
    pub retrievals: Vec<RetrievalResult<T>>,
    pub concepts: Vec<RetrievedConcept<T>>,
    pub acr: AcrMatrix<T>,
    /// Integration weights `S`, `m×(n+1)`; column 0 is the self slot.
    pub integration: Tensor<T>,
    /// Broadcasting weights: prefix part `Ŝ` (`n×m`), token part `S̃` over each ROI.
    pub broadcasting: AttnWeights<T>,
    pub k_mem: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// Head output before the output projection.
    pub output: Tensor<T>,
}

impl<T: Scalar> HeadTrace<T> {
    /// `Ŝ` as a dense `n×m` matrix.
    pub fn acr_weights(&self) -> Tensor<T> {
        self.broadcasting.prefix_matrix()
    }

    /// `S̃` row `i` and the zero-based token positions it covers.
    pub fn local_weights(&self, i: usize) -> (&[T], Range<usize>) {
        (self.broadcasting.tokens(i), self.broadcasting.window(i))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionTrace<T = f32> {
    pub heads: Vec<HeadTrace<T>>,
    pub counters: ScoreCounters,
}

impl ManarVars {
    pub(crate) fn trace<T: Scalar>(&self, tape: &Tape<T>, cfg: &ManarConfig) -> AttentionTrace<T> {
        let d = cfg.head_dim;
        let heads = self
            .heads
            .iter()
            .map(|h| {
                let n = tape.value(h.v).rows();
                let (search_patterns, retrievals, concepts, acr, integration) = match (h.sigma, h.concepts, h.acr) {
                    (Some(s), Some(c), Some(a)) => {
                        let cvals = tape.value(c);
                        let sels = tape.selections(c).expect("retrieve node");
                        let retrievals = sels
                            .iter()
                            .enumerate()
                            .map(|(i, sel)| RetrievalResult {
                                indices: sel.indices.clone(),
                                weights: sel.weights.clone(),
                                concept: cvals.row(i).to_vec(),
                            })
                            .collect();
                        let concepts = (0..cvals.rows())
                            .map(|i| split_concept(cvals.row(i), d).expect("concept width"))
                            .collect();
                        (
                            tape.value(s).clone(),
                            retrievals,
                            concepts,
                            AcrMatrix(tape.value(a).clone()),
                            tape.attention_weights(a).expect("attend node").dense(),
                        )
                    }
                    _ => (
                        Tensor::zeros(&[0, d]),
                        Vec::new(),
                        Vec::new(),
                        AcrMatrix(Tensor::zeros(&[0, d])),
                        Tensor::zeros(&[0, n + 1]),
                    ),
                };
                HeadTrace {
                    search_patterns,
                    retrievals,
                    concepts,
                    acr,
                    integration,
                    broadcasting: tape.attention_weights(h.out).expect("attend node").clone(),
                    k_mem: tape.value(h.k_mem).clone(),
                    q: tape.value(h.q).clone(),
                    k: tape.value(h.k).clone(),
                    v: tape.value(h.v).clone(),
                    output: tape.value(h.out).clone(),
                }
            })
            .collect();
        AttentionTrace {
            heads,
            counters: *tape.counters(),
        }
    }
}

/// Full layer forward pass without gradient tracking.
pub fn manar_layer_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &ManarLayerWeights<T>,
    cfg: &ManarConfig,
) -> Result<(Tensor<T>, AttentionTrace<T>)> {
    w.validate(cfg)?;
    if x.rows() == 0 {
        return Err(Error::arg("layer input needs at least one token"));
    }
    if x.cols() != cfg.model_dim {
        return Err(Error::dim("layer input", x.shape(), &[x.rows(), cfg.model_dim]));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = w.map_named("", &mut |_, t| tape.constant(t.clone()));
    let vars = manar_on_tape(&mut tape, xv, &wv, cfg)?;
    Ok((tape.value(vars.out).clone(), vars.trace(&tape, cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::KeyMode;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: usize, big_m: usize, l: usize, key_mode: KeyMode) -> ManarConfig {
        ManarConfig {
            model_dim: 8,
            heads: 2,
            head_dim: 4,
            memory_size: big_m,
            acr_size: m,
            k_top: 2,
            half_window: l,
            key_mode,
        }
    }

    fn softmax(v: &[f64]) -> Vec<f64> {
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn dotv(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // Loop-by-loop reference of the whole layer. Retrieval scans every composite key.
    fn naive_layer(x: &Tensor<f64>, w: &ManarLayerWeights<f64>, cfg: &ManarConfig) -> Tensor<f64> {
        let (n, d, m) = (x.rows(), cfg.head_dim, cfg.acr_size);
        let sc = 1.0 / (d as f64).sqrt();
        let big_m = cfg.memory_size;
        let key_of = |j: usize| -> Vec<f64> {
            match &w.memory.keys {
                KeyTable::Flat(k) => k.row(j).to_vec(),
                KeyTable::Product(a, b) => {
                    let side = (big_m as f64).sqrt().round() as usize;
                    let mut v = a.row(j / side).to_vec();
                    v.extend_from_slice(b.row(j % side));
                    v
                }
            }
        };
        let mut cat = Tensor::zeros(&[n, cfg.model_dim]);
        for (h, hw) in w.heads.iter().enumerate() {
            let proj = |wm: &Tensor<f64>| x.matmul(wm).unwrap();
            let (xk, xv) = (proj(&hw.search.w_k), proj(&hw.search.w_v));
            let (km, q, k, v) = (proj(&hw.w_k_mem), proj(&hw.w_q), proj(&hw.w_k), proj(&hw.w_v));
            let mut acr: Vec<Vec<f64>> = Vec::new();
            for i in 0..m {
                let mix = hw.search.mixers.row(i);
                let a = softmax(&(0..n).map(|j| dotv(mix, xk.row(j)) * sc).collect::<Vec<_>>());
                let sigma: Vec<f64> = (0..d).map(|t| (0..n).map(|j| a[j] * xv.get(j, t)).sum()).collect();
                let mut order: Vec<(f64, usize)> = (0..big_m).map(|j| (dotv(&sigma, &key_of(j)), j)).collect();
                order.sort_by(|p, q| q.0.partial_cmp(&p.0).unwrap().then(p.1.cmp(&q.1)));
                let top = &order[..cfg.k_top];
                let ww = softmax(&top.iter().map(|p| p.0).collect::<Vec<_>>());
                let mut c = vec![0.0; 3 * d];
                for (wt, &(_, j)) in ww.iter().zip(top) {
                    for (ct, mu) in c.iter_mut().zip(w.memory.cells.row(j)) {
                        *ct += wt * mu;
                    }
                }
                let (cq, ck, cv) = (&c[..d], &c[d..2 * d], &c[2 * d..]);
                let mut logits = vec![dotv(cq, ck) * sc];
                logits.extend((0..n).map(|j| dotv(cq, km.row(j)) * sc));
                let s = softmax(&logits);
                let r: Vec<f64> = (0..d)
                    .map(|t| s[0] * cv[t] + (0..n).map(|j| s[j + 1] * v.get(j, t)).sum::<f64>())
                    .collect();
                acr.push(r);
            }
            let rk: Vec<Vec<f64>> = acr
                .iter()
                .map(|r| (0..d).map(|t| (0..d).map(|u| r[u] * w.w_k_r.get(u, t)).sum()).collect())
                .collect();
            for i in 0..n {
                let p = i + 1;
                let win: Vec<usize> = (1..=n).filter(|&j| j + cfg.half_window > p && j <= p + cfg.half_window).collect();
                let mut logits: Vec<f64> = rk.iter().map(|key| dotv(q.row(i), key) * sc).collect();
                logits.extend(win.iter().map(|&j| dotv(q.row(i), k.row(j - 1)) * sc));
                let s = softmax(&logits);
                for t in 0..d {
                    let mut y = 0.0;
                    for (a, r) in s.iter().zip(&acr) {
                        y += a * r[t];
                    }
                    for (a, &j) in s[m..].iter().zip(&win) {
                        y += a * v.get(j - 1, t);
                    }
                    cat.set(i, h * d + t, y);
                }
            }
        }
        cat.matmul(&w.w_o).unwrap()
    }

    fn setup(c: &ManarConfig, n: usize, seed: u64) -> (Tensor<f64>, ManarLayerWeights<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ManarLayer::init(c, &mut rng).unwrap();
        let x = Tensor::randn(n, c.model_dim, 1.0, &mut rng);
        (x, w)
    }

    #[test]
    fn layer_matches_naive_reference() {
        for (c, n) in [
            (cfg(3, 16, 2, KeyMode::Flat), 7),
            (cfg(2, 16, 1, KeyMode::Product), 5),
            (cfg(1, 4, 3, KeyMode::Flat), 1),
            (cfg(4, 9, 8, KeyMode::Product), 6),
            (cfg(0, 4, 2, KeyMode::Flat), 6),
        ] {
            let (x, w) = setup(&c, n, 11);
            let (y, _) = manar_layer_forward(&x, &w, &c).unwrap();
            let expect = naive_layer(&x, &w, &c);
            assert!(y.max_abs_diff(&expect) < 1e-12, "{c:?}: {}", y.max_abs_diff(&expect));
        }
    }

    #[test]
    fn trace_shapes_and_normalisation() {
        let c = cfg(3, 16, 2, KeyMode::Flat);
        let (x, w) = setup(&c, 9, 2);
        let (y, tr) = manar_layer_forward(&x, &w, &c).unwrap();
        assert_eq!(y.shape(), &[9, 8]);
        assert_eq!(tr.heads.len(), 2);
        for h in &tr.heads {
            assert_eq!(h.acr.0.shape(), &[3, 4]);
            assert_eq!(h.integration.shape(), &[3, 10]);
            assert_eq!(h.acr_weights().shape(), &[9, 3]);
            assert_eq!(h.retrievals.len(), 3);
            for i in 0..3 {
                let s: f64 = h.integration.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            for i in 0..9 {
                let (local, win) = h.local_weights(i);
                assert_eq!(local.len(), win.len());
                let s: f64 = h.acr_weights().row(i).iter().sum::<f64>() + local.iter().sum::<f64>();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(tr.counters.contextualization_entries(), c.score_entries(9));
    }

    #[test]
    fn stagewise_api_reproduces_the_trace() {
        let c = cfg(2, 16, 2, KeyMode::Flat);
        let (x, w) = setup(&c, 6, 5);
        let (_, tr) = manar_layer_forward(&x, &w, &c).unwrap();
        for (hw, ht) in w.heads.iter().zip(&tr.heads) {
            let p = conceptualize(&x, hw).unwrap();
            assert_eq!(p.k_mem, ht.k_mem);
            assert_eq!(p.v, ht.v);
            let (acr, s) = build_acr(&ht.concepts, &p.k_mem, &p.v, 4).unwrap();
            assert!(acr.0.max_abs_diff(&ht.acr.0) < 1e-14);
            assert!(s.max_abs_diff(&ht.integration) < 1e-14);
            let (out, _) = contextualize_tokens(&p.q, &p.k, &p.v, &acr, &w.w_k_r, c.half_window).unwrap();
            assert!(out.max_abs_diff(&ht.output) < 1e-14);
        }
    }

    #[test]
    fn decomposition_agrees_in_the_saturated_limits() {
        let d = 2;
        let k_mem: Tensor<f64> = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[&[3.0, -1.0], &[0.5, 2.0]]).unwrap();
        // self logit dominates: r = c^v
        let c = RetrievedConcept { query: vec![50.0, 0.0], key: vec![10.0, 0.0], value: vec![7.0, 8.0] };
        let r = acr_decomposition(&[c.clone()], &k_mem, &v, d).unwrap();
        assert!((r.0.get(0, 0) - 7.0).abs() < 1e-9 && (r.0.get(0, 1) - 8.0).abs() < 1e-9);
        let (full, _) = build_acr(&[c], &k_mem, &v, d).unwrap();
        assert!(full.0.max_abs_diff(&r.0) < 1e-12);
        // self logit negligible: r = attention over tokens
        let c = RetrievedConcept { query: vec![50.0, 0.0], key: vec![-10.0, 0.0], value: vec![7.0, 8.0] };
        let r = acr_decomposition(&[c], &k_mem, &v, d).unwrap();
        assert!((r.0.get(0, 0) - 3.0).abs() < 1e-9 && (r.0.get(0, 1) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let c = cfg(2, 16, 2, KeyMode::Flat);
        let (x, w) = setup(&c, 4, 1);
        assert!(manar_layer_forward(&Tensor::<f64>::zeros(&[0, 8]), &w, &c).is_err());
        assert!(manar_layer_forward(&Tensor::<f64>::zeros(&[3, 7]), &w, &c).is_err());
        let mut c2 = c;
        c2.acr_size = 3;
        assert!(manar_layer_forward(&x, &w, &c2).is_err());
        let k = Tensor::<f64>::zeros(&[3, 4]);
        let bad = RetrievedConcept { query: vec![0.0; 3], key: vec![0.0; 4], value: vec![0.0; 4] };
        assert!(build_acr(&[bad], &k, &k, 4).is_err());
    }

    #[test]
    fn parameter_names_are_stable() {
        let c = cfg(2, 16, 2, KeyMode::Product);
        let (_, w) = setup(&c, 1, 1);
        let mut names = Vec::new();
        w.visit("layer0", &mut |n, _| names.push(n));
        assert_eq!(names.len(), 2 * 7 + 2 + 3);
        assert!(names.contains(&"layer0.head1.w_k_mem".to_string()));
        assert!(names.contains(&"layer0.memory.keys2".to_string()));
        assert!(is_memory_param("layer0.head0.mixers"));
        assert!(is_memory_param("layer0.memory.cells"));
        assert!(is_memory_param("layer0.w_k_r"));
        assert!(!is_memory_param("layer0.head0.w_k_mem"));
        assert!(!is_memory_param("layer0.w_o"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn acr_size_is_independent_of_length(n in 1usize..40, m in 1usize..5, seed in any::<u64>()) {
            let c = cfg(m, 16, 3, KeyMode::Product);
            let (x, w) = setup(&c, n, seed);
            let (_, tr) = manar_layer_forward(&x, &w, &c).unwrap();
            for h in &tr.heads {
                prop_assert_eq!(h.acr.0.shape(), &[m, 4]);
            }
        }

        #[test]
        fn decomposition_matches_construction(n in 1usize..20, m in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 6;
            let k_mem = Tensor::<f64>::randn(n, d, 1.5, &mut rng);
            let v = Tensor::<f64>::randn(n, d, 1.0, &mut rng);
            let concepts: Vec<RetrievedConcept<f64>> = (0..m)
                .map(|_| split_concept(Tensor::<f64>::randn(1, 3 * d, 1.5, &mut rng).data(), d).unwrap())
                .collect();
            let (a, _) = build_acr(&concepts, &k_mem, &v, d).unwrap();
            let b = acr_decomposition(&concepts, &k_mem, &v, d).unwrap();
            let scale = b.0.data().iter().fold(1.0f64, |s, x| s.max(x.abs()));
            prop_assert!(a.0.max_abs_diff(&b.0) / scale <= 1e-10);
        }
    }
}
