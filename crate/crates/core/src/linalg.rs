//! Small dense linear algebra: the `vec` operator, Kronecker products,
//! inverses (general, unit lower triangular and 3x3 block lower triangular),
//! Cholesky and a Jacobi symmetric eigensolver.
//!
//! Everything is `f64` and row-major. Problem sizes are tens to a few
//! hundred, so nothing here is blocked or vectorised.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use thiserror::Error;

/// Relative pivot threshold below which [`inverse`] reports a singular matrix.
pub const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix is singular (pivot column {column})")]
    Singular { column: usize },
    #[error("matrix is not positive definite (column {column})")]
    NotPositiveDefinite { column: usize },
}

/// Dense row-major `f64` matrix. Zero-sized dimensions are allowed.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// `n x 1` column vector.
    pub fn column(values: &[f64]) -> Self {
        Self::from_row_major(values.len(), 1, values.to_vec())
    }

    /// `1 x n` row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_row_major(1, values.len(), values.to_vec())
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row `i` as a `1 x cols` matrix.
    pub fn row_matrix(&self, i: usize) -> Matrix {
        Matrix::row_vector(self.row(i))
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Sub-matrix with the given row and column indices, in that order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "matrix-vector dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            axpy(*vi, self.row(i), &mut out);
        }
        out
    }

    /// Quadratic form `x^T self x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// Largest elementwise absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when the diagonal and upper triangle are exactly zero.
    pub fn is_strictly_lower(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (i..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square(), "asymmetry of a non-square matrix");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(self + self^T) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrizing a non-square matrix");
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn try_mul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: (self.cols, rhs.cols),
                found: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a != 0.0 {
                    axpy(*a, rhs.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "elementwise shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        match self.try_mul(rhs) {
            Ok(m) => m,
            Err(e) => panic!("{e}"),
        }
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

/// Stacks the columns of `b`, first column first.
pub fn vec(b: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(b.rows * b.cols);
    for j in 0..b.cols {
        for i in 0..b.rows {
            out.push(b[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`]: rebuilds a `rows x cols` matrix from stacked columns.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Matrix {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    Matrix::from_fn(rows, cols, |i, j| v[j * rows + i])
}

/// Kronecker product: block `(i, j)` of the result is `b[(i, j)] * c`.
pub fn kron(b: &Matrix, c: &Matrix) -> Matrix {
    let (m, n) = b.shape();
    let (p, q) = c.shape();
    let mut out = Matrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            let bij = b[(i, j)];
            if bij == 0.0 {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[(i * p + k, j * q + l)] = bij * c[(k, l)];
                }
            }
        }
    }
    out
}

/// LU factorisation with partial pivoting, stored compactly.
struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

fn lu_decompose(b: &Matrix) -> Result<Lu, LinalgError> {
    if !b.is_square() {
        return Err(LinalgError::NotSquare {
            rows: b.rows,
            cols: b.cols,
        });
    }
    let n = b.rows;
    let mut lu = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let row_scale: Vec<f64> = (0..n).map(|i| max_abs(b.row(i))).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        // relative to the largest entry of the pivot's original row
        let scale = row_scale[perm[p]];
        if best == 0.0 || best <= SINGULAR_PIVOT * scale {
            return Err(LinalgError::Singular { column: k });
        }
        if p != k {
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve_in_place(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.lu.rows;
        for i in 0..n {
            let mut s = rhs[self.perm[i]];
            for j in 0..i {
                s -= self.lu[(i, j)] * out[j];
            }
            out[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = out[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * out[j];
            }
            out[i] = s / self.lu[(i, i)];
        }
    }
}

/// General inverse by partially pivoted LU.
pub fn inverse(b: &Matrix) -> Result<Matrix, LinalgError> {
    let lu = lu_decompose(b)?;
    let n = b.rows;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        lu.solve_in_place(&e, &mut col);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// Solves `b x = rhs`.
pub fn solve(b: &Matrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let lu = lu_decompose(b)?;
    if rhs.len() != b.rows {
        return Err(LinalgError::DimensionMismatch {
            expected: (b.rows, 1),
            found: (rhs.len(), 1),
        });
    }
    let mut out = vec![0.0; rhs.len()];
    lu.solve_in_place(rhs, &mut out);
    Ok(out)
}

/// `(I - a)^{-1}` for strictly lower triangular `a`, by forward substitution.
///
/// Only the strictly lower part of `a` is read. The result is unit lower
/// triangular and equals `I + a + a^2 + ... + a^{n-1}`.
pub fn unit_lower_inverse(a: &Matrix) -> Matrix {
    assert!(a.is_square(), "unit_lower_inverse needs a square matrix");
    debug_assert!(a.is_strictly_lower(), "input is not strictly lower triangular");
    let n = a.rows;
    let mut inv = Matrix::identity(n);
    // Row i of (I - A)^{-1}: e_i + sum_{k<i} a_ik * row_k.
    for i in 0..n {
        for k in 0..i {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..=k {
                let v = inv[(k, j)];
                inv[(i, j)] += aik * v;
            }
        }
    }
    inv
}

/// The six nonzero blocks of the inverse of a 3x3 block lower triangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLowerInverse {
    pub b11: Matrix,
    pub b21: Matrix,
    pub b22: Matrix,
    pub b31: Matrix,
    pub b32: Matrix,
    pub b33: Matrix,
}

impl BlockLowerInverse {
    /// Assembles the full inverse.
    pub fn assemble(&self) -> Matrix {
        assemble_block_lower(&self.b11, &self.b21, &self.b22, &self.b31, &self.b32, &self.b33)
    }
}

/// Lays out a 3x3 block lower triangular matrix densely.
pub fn assemble_block_lower(
    b11: &Matrix,
    b21: &Matrix,
    b22: &Matrix,
    b31: &Matrix,
    b32: &Matrix,
    b33: &Matrix,
) -> Matrix {
    let (n1, n2, n3) = (b11.rows, b22.rows, b33.rows);
    let n = n1 + n2 + n3;
    let mut out = Matrix::zeros(n, n);
    let mut put = |blk: &Matrix, r0: usize, c0: usize| {
        for i in 0..blk.rows {
            for j in 0..blk.cols {
                out[(r0 + i, c0 + j)] = blk[(i, j)];
            }
        }
    };
    put(b11, 0, 0);
    put(b21, n1, 0);
    put(b22, n1, n1);
    put(b31, n1 + n2, 0);
    put(b32, n1 + n2, n1);
    put(b33, n1 + n2, n1 + n2);
    out
}

/// Inverse of
///
/// ```text
/// | B11  0    0   |
/// | B21  B22  0   |
/// | B31  B32  B33 |
/// ```
///
/// from the inverses of the diagonal blocks:
///
/// ```text
/// | B11^-1                                          0                  0      |
/// | -B22^-1 B21 B11^-1                              B22^-1             0      |
/// | B33^-1 B32 B22^-1 B21 B11^-1 - B33^-1 B31 B11^-1  -B33^-1 B32 B22^-1  B33^-1 |
/// ```
pub fn block_lower_inverse(
    b11: &Matrix,
    b21: &Matrix,
    b22: &Matrix,
    b31: &Matrix,
    b32: &Matrix,
    b33: &Matrix,
) -> Result<BlockLowerInverse, LinalgError> {
    let (n1, n2, n3) = (b11.rows, b22.rows, b33.rows);
    for (blk, want) in [
        (b21, (n2, n1)),
        (b31, (n3, n1)),
        (b32, (n3, n2)),
    ] {
        if blk.shape() != want {
            return Err(LinalgError::DimensionMismatch {
                expected: want,
                found: blk.shape(),
            });
        }
    }
    let i11 = inverse(b11)?;
    let i22 = inverse(b22)?;
    let i33 = inverse(b33)?;
    let i22_b21_i11 = &(&i22 * b21) * &i11;
    let i33_b32_i22 = &(&i33 * b32) * &i22;
    let b31_term = &(&i33 * b31) * &i11;
    Ok(BlockLowerInverse {
        b21: -&i22_b21_i11,
        b31: &(&(&i33 * b32) * &i22_b21_i11) - &b31_term,
        b32: -&i33_b32_i22,
        b11: i11,
        b22: i22,
        b33: i33,
    })
}

/// Lower Cholesky factor `l` with `l l^T = a`.
///
/// Fails when a pivot is not above `rel_tol * max_diag`.
pub fn cholesky(a: &Matrix, rel_tol: f64) -> Result<Matrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let max_diag = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = rel_tol * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || d <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite { column: j });
        }
        let ljj = libm::sqrt(d);
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `l l^T x = rhs` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Matrix, rhs: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the second matrix. Only the symmetric part of `a` is used.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    assert!(a.is_square(), "symmetric_eigen needs a square matrix");
    let n = a.rows;
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.max_abs();
    if n > 1 && scale > 0.0 {
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..i {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
            if libm::sqrt(off) <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    (values, vectors)
}

/// Smallest eigenvalue of the symmetric part of `a` (`+inf` for 0x0).
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    symmetric_eigen(a).0.first().copied().unwrap_or(f64::INFINITY)
}

/// A factor `f` with `f f^T = a` for symmetric PSD `a`.
///
/// Tries Cholesky first and falls back to `V sqrt(max(lambda, 0))` from the
/// eigen-decomposition when `a` is singular. Returns the smallest eigenvalue
/// as an error when it is below `-neg_tol`.
pub fn psd_factor(a: &Matrix, neg_tol: f64) -> Result<Matrix, f64> {
    if let Ok(l) = cholesky(a, 1e-14) {
        return Ok(l);
    }
    let (values, vectors) = symmetric_eigen(a);
    if let Some(&lo) = values.first() {
        if lo < -neg_tol {
            return Err(lo);
        }
    }
    let n = a.rows;
    Ok(Matrix::from_fn(n, n, |i, k| {
        vectors[(i, k)] * libm::sqrt(values[k].max(0.0))
    }))
}
