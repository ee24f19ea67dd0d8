//! Fused softmax attention over ragged slot sets.
//!
//! One kernel serves every contextualization step in the crate: standard and
//! windowed attention, search-pattern construction, ACR construction (one private
//! self slot per query) and token broadcasting (shared ACR slots followed by the
//! local window). Slot order within a row is always prefix slots first, then
//! token slots in ascending position.

use std::ops::Range;

use crate::attention::roi_range;
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, softmax_in_place, Scalar, Tensor};

/// Which token positions a query row may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Every token.
    Full,
    /// The region of interest of half-width `l` around the query's own position.
    Roi(usize),
}

/// Extra key/value slots placed before the token slots of every row.
#[derive(Clone, Copy, Debug)]
pub enum Prefix<'a, T> {
    None,
    /// The same `m` slots for every row (ACR slots during broadcasting).
    Shared {
        keys: &'a Tensor<T>,
        values: &'a Tensor<T>,
    },
    /// Row `i` gets exactly one slot, built from row `i` of `keys`/`values`.
    PerRow {
        keys: &'a Tensor<T>,
        values: &'a Tensor<T>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixKind {
    None,
    Shared,
    PerRow,
}

impl<T> Prefix<'_, T> {
    pub fn kind(&self) -> PrefixKind {
        match self {
            Prefix::None => PrefixKind::None,
            Prefix::Shared { .. } => PrefixKind::Shared,
            Prefix::PerRow { .. } => PrefixKind::PerRow,
        }
    }
}

/// Softmax weights of one attention call, one ragged row per query.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnWeights<T> {
    offsets: Vec<usize>,
    data: Vec<T>,
    prefix_len: usize,
    windows: Vec<Range<usize>>,
}

impl<T: Scalar> AttnWeights<T> {
    pub fn rows(&self) -> usize {
        self.windows.len()
    }

    /// Total number of score entries (softmax slots) across all rows.
    pub fn num_entries(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn prefix(&self, i: usize) -> &[T] {
        &self.row(i)[..self.prefix_len]
    }

    pub fn tokens(&self, i: usize) -> &[T] {
        &self.row(i)[self.prefix_len..]
    }

    /// Zero-based token positions covered by row `i`.
    pub fn window(&self, i: usize) -> Range<usize> {
        self.windows[i].clone()
    }

    /// Prefix weights as a dense `rows × prefix_len` matrix.
    pub fn prefix_matrix(&self) -> Tensor<T> {
        Tensor::from_fn(self.rows(), self.prefix_len, |i, j| self.prefix(i)[j])
    }

    /// Full weights as a dense matrix; only meaningful when every row has the
    /// same window (`Window::Full`).
    pub fn dense(&self) -> Tensor<T> {
        let width = self.row(0).len();
        Tensor::from_fn(self.rows(), width, |i, j| self.row(i)[j])
    }
}

fn check_prefix<T: Scalar>(prefix: &Prefix<'_, T>, rows: usize, d: usize, dv: usize) -> Result<()> {
    let (keys, values, expect_rows) = match prefix {
        Prefix::None => return Ok(()),
        Prefix::Shared { keys, values } => (keys, values, keys.rows()),
        Prefix::PerRow { keys, values } => (keys, values, rows),
    };
    if keys.cols() != d || keys.rows() != expect_rows {
        return Err(Error::dim("attend: prefix keys", keys.shape(), &[expect_rows, d]));
    }
    if values.cols() != dv || values.rows() != keys.rows() {
        return Err(Error::dim("attend: prefix values", values.shape(), &[keys.rows(), dv]));
    }
    Ok(())
}

/// Computes `out[i] = Σ_s softmax(scale · q_i·key_s)_s · value_s` over the slots of
/// row `i`. Returns the outputs and the softmax weights.
pub fn attend<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    prefix: Prefix<'_, T>,
    window: Window,
    scale: T,
) -> Result<(Tensor<T>, AttnWeights<T>)> {
    let rows = q.rows();
    let d = q.cols();
    let n = keys.rows();
    if keys.cols() != d {
        return Err(Error::dim("attend: query/key width", q.shape(), keys.shape()));
    }
    if values.rows() != n {
        return Err(Error::dim("attend: key/value rows", keys.shape(), values.shape()));
    }
    let dv = values.cols();
    check_prefix(&prefix, rows, d, dv)?;
    if let Window::Roi(l) = window {
        if l == 0 {
            return Err(Error::arg("attend: ROI half-window must be >= 1"));
        }
        if rows != n {
            return Err(Error::dim("attend: windowed queries must match tokens", q.shape(), keys.shape()));
        }
    }
    let prefix_len = match prefix {
        Prefix::None => 0,
        Prefix::Shared { keys, .. } => keys.rows(),
        Prefix::PerRow { .. } => 1,
    };

    let mut windows = Vec::with_capacity(rows);
    let mut offsets = Vec::with_capacity(rows + 1);
    offsets.push(0);
    for i in 0..rows {
        let w = match window {
            Window::Full => 0..n,
            Window::Roi(l) => roi_range(i, l, n),
        };
        let width = prefix_len + w.len();
        if width == 0 {
            return Err(Error::arg("attend: a query row has no slots to attend to"));
        }
        offsets.push(offsets[i] + width);
        windows.push(w);
    }

    let mut data = vec![T::zero(); offsets[rows]];
    let mut out = Tensor::zeros(&[rows, dv]);
    for i in 0..rows {
        let qi = q.row(i);
        let w = &mut data[offsets[i]..offsets[i + 1]];
        let win = windows[i].clone();
        let mut s = 0;
        match prefix {
            Prefix::None => {}
            Prefix::Shared { keys: pk, .. } => {
                for j in 0..prefix_len {
                    w[s] = dot(qi, pk.row(j)) * scale;
                    s += 1;
                }
            }
            Prefix::PerRow { keys: pk, .. } => {
                w[s] = dot(qi, pk.row(i)) * scale;
                s += 1;
            }
        }
        for j in win.clone() {
            w[s] = dot(qi, keys.row(j)) * scale;
            s += 1;
        }
        softmax_in_place(w);

        let oi = out.row_mut(i);
        let mut s = 0;
        match prefix {
            Prefix::None => {}
            Prefix::Shared { values: pv, .. } => {
                for j in 0..prefix_len {
                    axpy(oi, w[s], pv.row(j));
                    s += 1;
                }
            }
            Prefix::PerRow { values: pv, .. } => {
                axpy(oi, w[s], pv.row(i));
                s += 1;
            }
        }
        for j in win {
            axpy(oi, w[s], values.row(j));
            s += 1;
        }
    }

    Ok((
        out,
        AttnWeights {
            offsets,
            data,
            prefix_len,
            windows,
        },
    ))
}

/// Gradients of [`attend`] with respect to each of its tensor inputs.
pub(crate) struct AttendGrads<T> {
    pub q: Tensor<T>,
    pub keys: Tensor<T>,
    pub values: Tensor<T>,
    pub prefix_keys: Option<Tensor<T>>,
    pub prefix_values: Option<Tensor<T>>,
}

pub(crate) fn attend_backward<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    prefix: Prefix<'_, T>,
    weights: &AttnWeights<T>,
    scale: T,
    dout: &Tensor<T>,
) -> AttendGrads<T> {
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(keys.shape());
    let mut dv = Tensor::zeros(values.shape());
    let (mut dpk, mut dpv) = match prefix {
        Prefix::None => (None, None),
        Prefix::Shared { keys, values } | Prefix::PerRow { keys, values } => {
            (Some(Tensor::zeros(keys.shape())), Some(Tensor::zeros(values.shape())))
        }
    };
    let mut dlogit: Vec<T> = Vec::new();

    for i in 0..weights.rows() {
        let w = weights.row(i);
        let gi = dout.row(i);
        let win = weights.window(i);
        let plen = weights.prefix_len;

        // dP_s = dout_i · value_s ; dvalue_s += P_s · dout_i
        dlogit.clear();
        for s in 0..w.len() {
            let (val, is_prefix, row) = if s < plen {
                let r = match prefix {
                    Prefix::PerRow { .. } => i,
                    _ => s,
                };
                (prefix_values(&prefix).row(r), true, r)
            } else {
                let j = win.start + s - plen;
                (values.row(j), false, j)
            };
            dlogit.push(dot(gi, val));
            if is_prefix {
                axpy(dpv.as_mut().unwrap().row_mut(row), w[s], gi);
            } else {
                axpy(dv.row_mut(row), w[s], gi);
            }
        }
        let mut mean = T::zero();
        for (p, g) in w.iter().zip(&dlogit) {
            mean += *p * *g;
        }
        let qi = q.row(i);
        for s in 0..w.len() {
            let dz = w[s] * (dlogit[s] - mean) * scale;
            if s < plen {
                let r = match prefix {
                    Prefix::PerRow { .. } => i,
                    _ => s,
                };
                let key = prefix_keys(&prefix).row(r);
                axpy(dq.row_mut(i), dz, key);
                axpy(dpk.as_mut().unwrap().row_mut(r), dz, qi);
            } else {
                let j = win.start + s - plen;
                axpy(dq.row_mut(i), dz, keys.row(j));
                axpy(dk.row_mut(j), dz, qi);
            }
        }
    }

    AttendGrads {
        q: dq,
        keys: dk,
        values: dv,
        prefix_keys: dpk,
        prefix_values: dpv,
    }
}

fn prefix_keys<'a, T>(p: &Prefix<'a, T>) -> &'a Tensor<T> {
    match p {
        Prefix::Shared { keys, .. } | Prefix::PerRow { keys, .. } => keys,
        Prefix::None => unreachable!("no prefix slots"),
    }
}

fn prefix_values<'a, T>(p: &Prefix<'a, T>) -> &'a Tensor<T> {
    match p {
        Prefix::Shared { values, .. } | Prefix::PerRow { values, .. } => values,
        Prefix::None => unreachable!("no prefix slots"),
    }
}
