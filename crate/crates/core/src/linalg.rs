//! Small dense linear algebra over row-major `f64` storage.
//!
//! Covariances in this crate are at most a few hundred rows, so plain
//! loops are fast enough and keep the arithmetic order fixed (which the
//! reproducibility guarantees depend on).

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim("Matrix::new", rows * cols, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = scale;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Panics on ragged input; intended for literals and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("inner dim {}", self.cols),
                format!("{}", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "matmul_t",
                format!("{} columns", self.cols),
                format!("{}", other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::dim("matvec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `self^T * v`.
    pub fn t_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(Error::dim("t_matvec", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    /// `A * B * A^T`, the congruence used by every covariance propagation.
    pub fn congruence(&self, b: &Matrix) -> Result<Matrix> {
        self.matmul(b)?.matmul_t(self)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, ctx: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                ctx,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Replaces the matrix with `(M + M^T) / 2`. No-op on non-square input.
    pub fn symmetrize(&mut self) {
        if !self.is_square() {
            return;
        }
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn symmetrized(&self) -> Matrix {
        let mut m = self.clone();
        m.symmetrize();
        m
    }

    /// `max |M - M^T|` (infinite for non-square matrices).
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::dim("min_eigenvalue", "square", format!("{:?}", self.shape())));
        }
        if self.rows == 0 {
            return Ok(0.0);
        }
        let sym = self.symmetrized();
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &sym.data);
        let eig = nalgebra::SymmetricEigen::new(m);
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Largest absolute eigenvalue modulus (general, possibly non-symmetric).
    pub fn spectral_radius(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::dim("spectral_radius", "square", format!("{:?}", self.shape())));
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        Ok(m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Three-index array `B[v, i, j]`, stored with `j` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if dims.0 * dims.1 * dims.2 != data.len() {
            return Err(Error::dim("Tensor3::new", dims.0 * dims.1 * dims.2, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entry".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The `(n, p*q)` unfolding: row `v` holds `B[v, :, :]` row-major.
    pub fn unfold(&self) -> Matrix {
        Matrix {
            rows: self.dims.0,
            cols: self.dims.1 * self.dims.2,
            data: self.data.clone(),
        }
    }

    pub fn get(&self, v: usize, i: usize, j: usize) -> f64 {
        self.data[(v * self.dims.1 + i) * self.dims.2 + j]
    }

    pub fn set(&mut self, v: usize, i: usize, j: usize, value: f64) {
        self.data[(v * self.dims.1 + i) * self.dims.2 + j] = value;
    }
}

/// Contraction `[B • C]_v = sum_{i,j} B[v,i,j] C[i,j]`.
pub fn bullet(b: &Tensor3, c: &Matrix) -> Result<Vec<f64>> {
    let (n, p, q) = b.dims;
    if c.shape() != (p, q) {
        return Err(Error::dim("bullet", format!("({p}, {q})"), format!("{:?}", c.shape())));
    }
    let block = p * q;
    Ok((0..n)
        .map(|v| dot(&b.data[v * block..(v + 1) * block], c.as_slice()))
        .collect())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factors the symmetric part of `s`. A non-positive pivot yields
    /// [`Error::SingularInnovation`] carrying that pivot.
    pub fn factor(s: &Matrix) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::dim("cholesky", "square", format!("{:?}", s.shape())));
        }
        let a = s.symmetrized();
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularInnovation { min_pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `S x = b` in place for a single right-hand side.
    pub fn solve_vec_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = l.rows;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= l[(i, k)] * b[k];
            }
            b[i] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * b[k];
            }
            b[i] = v / l[(i, i)];
        }
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows;
        if b.rows != n {
            return Err(Error::dim("cholesky solve", n, b.rows));
        }
        // Work on columns of B as rows of B^T.
        let mut bt = b.transpose();
        for c in 0..bt.rows {
            self.solve_vec_in_place(bt.row_mut(c));
        }
        Ok(bt.transpose())
    }
}

/// Solves `S X = B` for symmetric positive definite `S` via Cholesky.
pub fn spd_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    Cholesky::factor(s)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bullet_examples() {
        let mut b = Tensor3::zeros((2, 2, 2));
        // B1 = I2, B2 = [[0,1],[1,0]]
        b.set(0, 0, 0, 1.0);
        b.set(0, 1, 1, 1.0);
        b.set(1, 0, 1, 1.0);
        b.set(1, 1, 0, 1.0);
        let c = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(bullet(&b, &c).unwrap(), vec![5.0, 5.0]);
        assert_eq!(bullet(&b, &Matrix::zeros(2, 2)).unwrap(), vec![0.0, 0.0]);

        let ones = Tensor3::new((1, 2, 2), vec![1.0; 4]).unwrap();
        let c1 = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(bullet(&ones, &c1).unwrap(), vec![4.0]);

        assert!(bullet(&ones, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn spd_solve_examples() {
        let x = spd_solve(&Matrix::scaled_identity(2, 2.0), &Matrix::identity(2)).unwrap();
        assert!(x.sub(&Matrix::scaled_identity(2, 0.5)).unwrap().max_abs() < 1e-15);

        let s = Matrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let x = spd_solve(&s, &Matrix::column(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 3.0 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[(1, 0)], -1.0 / 11.0, epsilon = 1e-15);

        let indefinite = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match spd_solve(&indefinite, &Matrix::identity(2)) {
            Err(Error::SingularInnovation { min_pivot }) => assert!(min_pivot < 0.0),
            other => panic!("expected singular innovation, got {other:?}"),
        }
    }

    #[test]
    fn new_rejects_non_finite_and_bad_len() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_t_matches_explicit_transpose() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[&[0.5, -1.0, 2.0], &[1.0, 0.0, 1.0], &[2.0, 2.0, 2.0]]);
        assert_eq!(a.matmul_t(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
    }

    #[test]
    fn min_eigenvalue_of_diag() {
        let m = Matrix::from_diagonal(&[3.0, -0.5, 2.0]);
        assert_abs_diff_eq!(m.min_eigenvalue().unwrap(), -0.5, epsilon = 1e-14);
    }
}
