//! Dense row-major tensors and the deterministic kernels the layers are built from.
//!
//! Every reduction accumulates in ascending index order so that results are
//! bit-reproducible across runs and tolerances in equivalence tests can stay tight.

mod gradcheck;
mod tape;

pub use gradcheck::finite_diff_grad;
pub use tape::{ScoreCounters, ScoreKind, Tape, TapePrefix, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the storage default; `f64` is used for
/// gradient checking and convex-hull analysis.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array. Almost every tensor in this crate is rank 2; vectors
/// are stored as `1×d` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Builds a matrix from equally long rows. An empty slice yields a `0×0` matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("Tensor::from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn row_vector(values: &[T]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Matrix with entries drawn from `N(0, std²)`.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
        Self::from_fn(rows, cols, |_, _| T::lit(normal.sample(rng)))
    }

    /// Glorot/Xavier uniform initialization for a `fan_in × fan_out` projection.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::from_fn(fan_in, fan_out, |_, _| T::lit(dist.sample(rng)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.shape.first().copied().unwrap_or(1)
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        let c = self.cols();
        self.data[i * c + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, &self.shape, &[]));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    // ----- elementwise -----

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map(|x| x * c)
    }

    fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc += x;
        }
        acc
    }

    // ----- matrix ops -----

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("matmul")?;
        let (q2, r) = other.expect_matrix("matmul")?;
        if q != q2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); p * r];
        for i in 0..p {
            let a_row = &self.data[i * q..(i + 1) * q];
            let c_row = &mut out[i * r..(i + 1) * r];
            for (t, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[t * r..(t + 1) * r];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![p, r],
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("matmul_nt")?;
        let (r, q2) = other.expect_matrix("matmul_nt")?;
        if q != q2 {
            return Err(Error::dim("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = Vec::with_capacity(p * r);
        for i in 0..p {
            let a = &self.data[i * q..(i + 1) * q];
            for j in 0..r {
                out.push(dot(a, &other.data[j * q..(j + 1) * q]));
            }
        }
        Ok(Tensor {
            shape: vec![p, r],
            data: out,
        })
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (q, p) = self.expect_matrix("matmul_tn")?;
        let (q2, r) = other.expect_matrix("matmul_tn")?;
        if q != q2 {
            return Err(Error::dim("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); p * r];
        for t in 0..q {
            let a_row = &self.data[t * p..(t + 1) * p];
            let b_row = &other.data[t * r..(t + 1) * r];
            for (i, &a) in a_row.iter().enumerate() {
                let c_row = &mut out[i * r..(i + 1) * r];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![p, r],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("transpose")?;
        Ok(Tensor::from_fn(q, p, |i, j| self.data[j * q + i]))
    }

    /// Row-wise softmax with row-max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        self.expect_matrix("softmax_rows")?;
        let mut out = self.clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        Ok(out)
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(indices.len() * q);
        for &i in indices {
            if i >= p {
                return Err(Error::arg(format!("gather_rows: row {i} out of range for {p} rows")));
            }
            data.extend_from_slice(&self.data[i * q..(i + 1) * q]);
        }
        Ok(Tensor {
            shape: vec![indices.len(), q],
            data,
        })
    }

    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for t in parts {
            t.expect_matrix("concat_rows")?;
            if t.cols() != cols {
                return Err(Error::dim("concat_rows", &parts[0].shape, &t.shape));
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let rows = parts.first().map_or(0, |t| t.rows());
        let mut cols = 0;
        for t in parts {
            t.expect_matrix("concat_cols")?;
            if t.rows() != rows {
                return Err(Error::dim("concat_cols", &parts[0].shape, &t.shape));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(i));
            }
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("slice_cols")?;
        if start + width > q {
            return Err(Error::arg(format!(
                "slice_cols: columns {start}..{} out of range for {q}",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(p * width);
        for i in 0..p {
            data.extend_from_slice(&self.data[i * q + start..i * q + start + width]);
        }
        Ok(Tensor {
            shape: vec![p, width],
            data,
        })
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        let (p, q) = self.expect_matrix("slice_rows")?;
        if start + count > p {
            return Err(Error::arg(format!(
                "slice_rows: rows {start}..{} out of range for {p}",
                start + count
            )));
        }
        Ok(Tensor {
            shape: vec![count, q],
            data: self.data[start * q..(start + count) * q].to_vec(),
        })
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `acc += c · x`
#[inline]
pub(crate) fn axpy<T: Scalar>(acc: &mut [T], c: T, x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += c * v;
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Indices and values of the `k` largest scores, descending; equal scores are
/// ordered by smaller index first.
pub fn topk<T: Scalar>(scores: &[T], k: usize) -> Result<(Vec<usize>, Vec<T>)> {
    if k > scores.len() {
        return Err(Error::arg(format!("topk: k = {k} exceeds {} scores", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k > 0 && k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
    }
    idx.truncate(k);
    idx.sort_by(cmp);
    let values = idx.iter().map(|&i| scores[i]).collect();
    Ok((idx, values))
}
