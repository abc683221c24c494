use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::exec::Execution;

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (the storage
/// type used for models and grids) and `f64` (used for gradient checking).
pub trait Element:
    Copy
    + Send
    + Sync
    + Debug
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = a * b` for strided row/column layouts; `c` is row-major with
    /// row stride `rsc`.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must be in bounds.
    unsafe fn gemm(
        dims: (usize, usize, usize),
        a: *const Self,
        sa: (usize, usize),
        b: *const Self,
        sb: (usize, usize),
        c: *mut Self,
        rsc: usize,
    );
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    unsafe fn gemm(
        (m, k, n): (usize, usize, usize),
        a: *const Self,
        sa: (usize, usize),
        b: *const Self,
        sb: (usize, usize),
        c: *mut Self,
        rsc: usize,
    ) {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a,
            sa.0 as isize,
            sa.1 as isize,
            b,
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c,
            rsc as isize,
            1,
        );
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    unsafe fn gemm(
        (m, k, n): (usize, usize, usize),
        a: *const Self,
        sa: (usize, usize),
        b: *const Self,
        sb: (usize, usize),
        c: *mut Self,
        rsc: usize,
    ) {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a,
            sa.0 as isize,
            sa.1 as isize,
            b,
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c,
            rsc as isize,
            1,
        );
    }
}

/// Dense row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length does not match {rows}x{cols}"
        );
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[T]) -> Self {
        Tensor::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Inner product over all elements, accumulated in f64.
    pub fn dot(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum()
    }
}

const PAR_MIN_WORK: usize = 1 << 15;

fn pick(exec: Execution, work: usize) -> Execution {
    if work >= PAR_MIN_WORK {
        exec
    } else {
        Execution::Sequential
    }
}

fn rayon_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    1
}

fn rows_per_chunk(rows: usize, exec: Execution) -> usize {
    if exec.is_parallel() {
        rows.div_ceil(4 * rayon_threads()).max(64)
    } else {
        rows.max(1)
    }
}

/// Row-major product of strided operands: `a` is `m x k` with strides
/// `sa`, `b` is `k x n` with strides `sb`. Output rows are split over `exec`.
fn strided_product<T: Element>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    exec: Execution,
) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    let exec = pick(exec, m * k * n);
    let chunk_rows = rows_per_chunk(m, exec);
    exec.for_each_chunk_mut(&mut out, chunk_rows * n, |ci, chunk| {
        let i0 = ci * chunk_rows;
        let rows = chunk.len() / n;
        // SAFETY: the asserts above bound every index of rows i0..i0+rows of
        // `a` and all of `b`; `chunk` holds exactly `rows x n` outputs.
        unsafe {
            T::gemm(
                (rows, k, n),
                a.as_ptr().add(i0 * sa.0),
                sa,
                b.as_ptr(),
                sb,
                chunk.as_mut_ptr(),
                n,
            );
        }
    });
    out
}

/// `a[m x k] * b[k x n]`.
pub(crate) fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>, exec: Execution) -> Tensor<T> {
    let (m, k) = a.shape();
    let n = b.cols;
    debug_assert_eq!(k, b.rows);
    let out = strided_product((m, k, n), &a.data, (k, 1), &b.data, (n, 1), exec);
    Tensor::from_vec(m, n, out)
}

/// `a[m x k] * b[n x k]^T`.
pub(crate) fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>, exec: Execution) -> Tensor<T> {
    let (m, k) = a.shape();
    let n = b.rows;
    debug_assert_eq!(k, b.cols);
    let out = strided_product((m, k, n), &a.data, (k, 1), &b.data, (1, k), exec);
    Tensor::from_vec(m, n, out)
}

/// `a[m x k]^T * b[m x n]`.
pub(crate) fn matmul_tn<T: Element>(a: &Tensor<T>, b: &Tensor<T>, exec: Execution) -> Tensor<T> {
    let (m, k) = a.shape();
    let n = b.cols;
    debug_assert_eq!(m, b.rows);
    let out = strided_product((k, m, n), &a.data, (1, k), &b.data, (n, 1), exec);
    Tensor::from_vec(k, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn filled(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn hand_product() {
        let a = Tensor::from_rows(&[&[1.0f32, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[1.0f32], &[1.0]]);
        let c = matmul(&a, &b, Execution::Sequential);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn transposed_variants_agree_with_naive() {
        let a = filled(7, 5, 1);
        let b = filled(5, 9, 2);
        let expect = naive(&a, &b);
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert!(matmul(&a, &b, exec).max_abs_diff(&expect) < 1e-12);
            assert!(matmul_nt(&a, &b.transpose(), exec).max_abs_diff(&expect) < 1e-12);
            assert!(matmul_tn(&a.transpose(), &b, exec).max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let a = filled(300, 70, 3).cast::<f32>();
        let b = filled(70, 90, 4).cast::<f32>();
        let s = matmul(&a, &b, Execution::Sequential);
        let p = matmul(&a, &b, Execution::Parallel);
        assert_eq!(s, p);
    }
}
