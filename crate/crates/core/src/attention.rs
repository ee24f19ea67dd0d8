//! Standard multi-head attention and its ROI-windowed variant.

use std::ops::Range;

use rand::Rng;

use crate::attend::{AttnWeights, Window};
use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{Scalar, ScoreKind, Tape, TapePrefix, Tensor, Var};

/// 1-based region of interest of token `i`: positions `j` with
/// `max(1, i−l+1) ≤ j ≤ min(n, i+l)`, at most `2l` of them.
pub fn roi(i: usize, l: usize, n: usize) -> Result<Vec<usize>> {
    if i == 0 || i > n {
        return Err(Error::arg(format!("roi: position {i} outside 1..={n}")));
    }
    if l == 0 {
        return Err(Error::arg("roi: half-window must be >= 1"));
    }
    Ok(roi_range(i - 1, l, n).map(|j| j + 1).collect())
}

/// Zero-based form of [`roi`] for the token stored at index `i`.
pub fn roi_range(i: usize, l: usize, n: usize) -> Range<usize> {
    let pos = i + 1;
    let lo = (pos + 1).saturating_sub(l).max(1);
    let hi = (pos + l).min(n);
    lo - 1..hi
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhaHead<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
}

/// Multi-head attention projections: per-head `D×d` query/key/value maps and a
/// shared `(h·d)×D` output map. No biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mha<P> {
    pub heads: Vec<MhaHead<P>>,
    pub w_o: P,
}

pub type MhaWeights<T = f32> = Mha<Tensor<T>>;

impl<P> Mha<P> {
    pub fn map_named<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> Mha<Q> {
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(h, hw)| {
                let p = join(prefix, &format!("head{h}"));
                MhaHead {
                    w_q: f(&join(&p, "w_q"), &hw.w_q),
                    w_k: f(&join(&p, "w_k"), &hw.w_k),
                    w_v: f(&join(&p, "w_v"), &hw.w_v),
                }
            })
            .collect();
        Mha {
            heads,
            w_o: f(&join(prefix, "w_o"), &self.w_o),
        }
    }
}

impl<P> Parameters<P> for Mha<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (h, hw) in self.heads.iter().enumerate() {
            let p = join(prefix, &format!("head{h}"));
            f(join(&p, "w_q"), &hw.w_q);
            f(join(&p, "w_k"), &hw.w_k);
            f(join(&p, "w_v"), &hw.w_v);
        }
        f(join(prefix, "w_o"), &self.w_o);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut P)) {
        for (h, hw) in self.heads.iter_mut().enumerate() {
            let p = join(prefix, &format!("head{h}"));
            f(join(&p, "w_q"), &mut hw.w_q);
            f(join(&p, "w_k"), &mut hw.w_k);
            f(join(&p, "w_v"), &mut hw.w_v);
        }
        f(join(prefix, "w_o"), &mut self.w_o);
    }
}

impl<T: Scalar> Mha<Tensor<T>> {
    /// Glorot-initialized weights for `heads` heads of width `head_dim`.
    pub fn init(heads: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        let dm = heads * head_dim;
        let heads = (0..heads)
            .map(|_| MhaHead {
                w_q: Tensor::glorot(dm, head_dim, rng),
                w_k: Tensor::glorot(dm, head_dim, rng),
                w_v: Tensor::glorot(dm, head_dim, rng),
            })
            .collect();
        Mha {
            heads,
            w_o: Tensor::glorot(dm, dm, rng),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.cols())
    }

    pub fn model_dim(&self) -> usize {
        self.w_o.cols()
    }

    /// Checks `D = h·d` and every projection shape.
    pub fn validate(&self) -> Result<()> {
        let (h, d, dm) = (self.num_heads(), self.head_dim(), self.model_dim());
        if h == 0 || dm != h * d {
            return Err(Error::config(format!("model width {dm} != heads {h} × head width {d}")));
        }
        for hw in &self.heads {
            for w in [&hw.w_q, &hw.w_k, &hw.w_v] {
                if w.shape() != [dm, d] {
                    return Err(Error::dim("attention projection", w.shape(), &[dm, d]));
                }
            }
        }
        if self.w_o.shape() != [dm, dm] {
            return Err(Error::dim("output projection", self.w_o.shape(), &[dm, dm]));
        }
        Ok(())
    }
}

/// Tape variables of one attention head.
#[derive(Clone, Debug)]
pub(crate) struct MhaHeadVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub out: Var,
}

#[derive(Clone, Debug)]
pub(crate) struct MhaVars {
    pub heads: Vec<MhaHeadVars>,
    pub out: Var,
}

pub(crate) fn mha_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &Mha<Var>, window: Window) -> Result<MhaVars> {
    let d = tape.value(w.heads[0].w_q).cols();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut heads = Vec::with_capacity(w.heads.len());
    for hw in &w.heads {
        let q = tape.matmul(x, hw.w_q)?;
        let k = tape.matmul(x, hw.w_k)?;
        let v = tape.matmul(x, hw.w_v)?;
        let out = tape.attend(q, k, v, TapePrefix::None, window, scale, ScoreKind::Token)?;
        heads.push(MhaHeadVars { q, k, v, out });
    }
    let outs: Vec<Var> = heads.iter().map(|h| h.out).collect();
    let cat = tape.concat_cols(&outs)?;
    let out = tape.matmul(cat, w.w_o)?;
    Ok(MhaVars { heads, out })
}

/// Per-head intermediates of a standard attention forward pass.
#[derive(Clone, Debug)]
pub struct MhaHeadTrace<T = f32> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub weights: AttnWeights<T>,
    /// Head output before the output projection.
    pub output: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct MhaTrace<T = f32> {
    pub heads: Vec<MhaHeadTrace<T>>,
}

impl MhaVars {
    pub(crate) fn trace<T: Scalar>(&self, tape: &Tape<T>) -> MhaTrace<T> {
        MhaTrace {
            heads: self
                .heads
                .iter()
                .map(|h| MhaHeadTrace {
                    q: tape.value(h.q).clone(),
                    k: tape.value(h.k).clone(),
                    v: tape.value(h.v).clone(),
                    weights: tape.attention_weights(h.out).expect("attend node").clone(),
                    output: tape.value(h.out).clone(),
                })
                .collect(),
        }
    }
}

fn forward<T: Scalar>(x: &Tensor<T>, w: &MhaWeights<T>, window: Window) -> Result<(Tensor<T>, MhaTrace<T>)> {
    w.validate()?;
    if x.rows() == 0 {
        return Err(Error::arg("attention needs at least one token"));
    }
    if x.cols() != w.model_dim() {
        return Err(Error::dim("attention input", x.shape(), &[x.rows(), w.model_dim()]));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = w.map_named("", &mut |_, t| tape.constant(t.clone()));
    let vars = mha_on_tape(&mut tape, xv, &wv, window)?;
    Ok((tape.value(vars.out).clone(), vars.trace(&tape)))
}

/// Standard multi-head attention: per head `softmax(QKᵀ/√d)V`, heads concatenated
/// and projected by `W_o`.
pub fn mha_forward<T: Scalar>(x: &Tensor<T>, w: &MhaWeights<T>) -> Result<(Tensor<T>, MhaTrace<T>)> {
    forward(x, w, Window::Full)
}

/// As [`mha_forward`], but token `i` attends only over `roi(i, l, n)`.
pub fn windowed_mha_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &MhaWeights<T>,
    half_window: usize,
) -> Result<(Tensor<T>, MhaTrace<T>)> {
    forward(x, w, Window::Roi(half_window))
}
