use std::fmt::Debug;
use std::ops::{AddAssign, Mul, Neg, Sub};

use serde::{de::DeserializeOwned, Serialize};

/// Element type for network math: `f32` for training, `f64` for the sharp
/// gradient-check builds.
pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    /// `c := alpha * a @ b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major matrix: `rows` batch entries of `cols` features.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Tensor2D<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2D<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor2D { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor2D { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Take a contiguous block of rows.
    pub fn rows_slice(&self, start: usize, count: usize) -> Tensor2D<T> {
        Tensor2D {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    pub(crate) fn debug_check_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite entries after {what}"
        );
    }

    /// `self @ other`: (r×k) @ (k×c) -> (r×c).
    pub fn matmul(&self, other: &Tensor2D<T>) -> Tensor2D<T> {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        unsafe {
            T::gemm(
                self.rows,
                self.cols,
                other.cols,
                T::ONE,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                T::ZERO,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out.debug_check_finite("matmul");
        out
    }

    /// `self @ other^T`: (r×k) @ (c×k)^T -> (r×c).
    pub fn matmul_nt(&self, other: &Tensor2D<T>) -> Tensor2D<T> {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        unsafe {
            T::gemm(
                self.rows,
                self.cols,
                other.rows,
                T::ONE,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                1,
                other.cols as isize,
                T::ZERO,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out.debug_check_finite("matmul_nt");
        out
    }

    /// `self^T @ other`: (k×r)^T @ (k×c) -> (r×c).
    pub fn matmul_tn(&self, other: &Tensor2D<T>) -> Tensor2D<T> {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        unsafe {
            T::gemm(
                self.cols,
                self.rows,
                other.cols,
                T::ONE,
                self.data.as_ptr(),
                1,
                self.cols as isize,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                T::ZERO,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out.debug_check_finite("matmul_tn");
        out
    }

    /// Add a bias row vector to every row.
    pub fn add_bias(&mut self, bias: &[T]) {
        assert_eq!(bias.len(), self.cols, "bias length mismatch");
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (v, b) in row.iter_mut().zip(bias) {
                *v += *b;
            }
        }
    }

    /// Column sums (used for bias gradients).
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::ZERO; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += *v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor2D::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor2D::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = Tensor2D::from_vec(2, 3, vec![1.0f64, -2.0, 3.0, 0.5, 5.0, -6.0]);
        let b = Tensor2D::from_vec(4, 3, vec![1.0, 0.0, 2.0, -1.0, 3.0, 1.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        // a @ b^T == a @ transpose(b)
        let mut bt = Tensor2D::zeros(3, 4);
        for r in 0..4 {
            for c in 0..3 {
                bt.set(c, r, b.get(r, c));
            }
        }
        assert_eq!(a.matmul_nt(&b).data(), a.matmul(&bt).data());

        let x = Tensor2D::from_vec(3, 2, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut xt = Tensor2D::zeros(2, 3);
        for r in 0..3 {
            for c in 0..2 {
                xt.set(c, r, x.get(r, c));
            }
        }
        let y = Tensor2D::from_vec(3, 4, (0..12).map(|v| v as f64).collect());
        assert_eq!(x.matmul_tn(&y).data(), xt.matmul(&y).data());
    }

    #[test]
    fn bias_and_column_sums() {
        let mut a = Tensor2D::zeros(3, 2);
        a.add_bias(&[1.0f64, -2.0]);
        assert_eq!(a.column_sums(), vec![3.0, -6.0]);
    }
}
