//! Small dense linear algebra: the handful of operations the controller
//! synthesis and the trigger predictions need, nothing more.
//!
//! Every system in this crate is tiny (at most a few dozen states), so all
//! matrices are dense, row-major `f64`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Dense row-major real matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

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

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::column(&[value])
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checked product, for call sites where shapes come from user input.
    pub fn try_mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(self * rhs)
    }

    /// `self · v` for a plain vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Copies the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        let mut b = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "block out of range"
        );
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square());
        (self + &self.transpose()).scale(0.5)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Fails when the 1-norm condition number exceeds [`CONDITION_LIMIT`].
    pub fn inverse(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::dim(format!(
                "cannot invert a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut work = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| work[(a, col)].abs().total_cmp(&work[(b, col)].abs()))
                .unwrap_or(col);
            let pivot = work[(pivot_row, col)];
            if pivot == 0.0 {
                return Err(Error::Numerical("singular matrix".into()));
            }
            if pivot_row != col {
                work.swap_rows(pivot_row, col);
                inv.swap_rows(pivot_row, col);
            }
            let scale = 1.0 / pivot;
            for j in 0..n {
                work[(col, j)] *= scale;
                inv[(col, j)] *= scale;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = work[(r, col)];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    work[(r, j)] -= factor * work[(col, j)];
                    inv[(r, j)] -= factor * inv[(col, j)];
                }
            }
        }
        let condition = self.norm_1() * inv.norm_1();
        if !condition.is_finite() || condition > CONDITION_LIMIT {
            return Err(Error::Numerical(format!(
                "ill-conditioned matrix (condition estimate {condition:.3e})"
            )));
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

/// Condition-number ceiling for [`Matrix::inverse`].
pub const CONDITION_LIMIT: f64 = 1e12;

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "cannot multiply {}x{} by {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl<'a> Add<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in addition");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in subtraction");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn mat_exp(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let norm = a.norm_1();
    // bring the norm below 1/2 so the series converges fast
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = (&term * &scaled).scale(1.0 / k as f64);
        result = &result + &term;
        if term.max_abs() <= f64::EPSILON * result.max_abs() * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Zero-order-hold discretization of `dx/dt = A x + B u` over `dt` seconds.
///
/// Exponentiates the augmented generator `[[A, B], [0, 0]] * dt`.
pub fn zoh_discretize(a_c: &Matrix, b_c: &Matrix, dt: f64) -> Result<(Matrix, Matrix)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::arg(format!("time step must be positive, got {dt}")));
    }
    if !a_c.is_square() || b_c.rows != a_c.rows {
        return Err(Error::dim(format!(
            "A is {}x{}, B is {}x{}",
            a_c.rows, a_c.cols, b_c.rows, b_c.cols
        )));
    }
    let n = a_c.rows;
    let m = b_c.cols;
    let mut gen = Matrix::zeros(n + m, n + m);
    gen.set_block(0, 0, &a_c.scale(dt));
    gen.set_block(0, n, &b_c.scale(dt));
    let e = mat_exp(&gen)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, m)))
}

/// Output of [`solve_dare`].
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Stabilizing fixed point of the Riccati recursion.
    pub p: Matrix,
    /// Optimal state feedback, `u = gain · x`.
    pub gain: Matrix,
    pub iterations: usize,
    /// Frobenius norm of `riccati_map(P) - P`.
    pub residual: f64,
}

/// Iteration cap for [`solve_dare`].
pub const DARE_MAX_ITERATIONS: usize = 10_000;
/// Frobenius residual accepted by [`solve_dare`].
pub const DARE_TOLERANCE: f64 = 1e-9;

/// One application of the Riccati value recursion
/// `AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`.
pub fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let at = a.transpose();
    let bt_p = &b.transpose() * p;
    let gram = r + &(&bt_p * b);
    let bt_p_a = &bt_p * a;
    let correction = &(&bt_p_a.transpose() * &gram.inverse()?) * &bt_p_a;
    let next = &(&(&(&at * p) * a) - &correction) + q;
    Ok(next.symmetrized())
}

/// Gain that is optimal for a given value matrix: `−(R + BᵀPB)⁻¹BᵀPA`.
pub fn lqr_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt_p = &b.transpose() * p;
    let gram = r + &(&bt_p * b);
    Ok(-&(&gram.inverse()? * &(&bt_p * a)))
}

/// Frobenius residual of `P` under the Riccati map.
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    Ok((&riccati_map(a, b, q, r, p)? - p).frobenius_norm())
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// from `P₀ = Q`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<DareSolution> {
    let n = a.rows;
    let m = b.cols;
    if !a.is_square() || b.rows != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim(format!(
            "DARE shapes A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    check_symmetric(q, "Q")?;
    check_symmetric(r, "R")?;
    if min_eigenvalue_symmetric(q) < -PSD_TOLERANCE * q.max_abs().max(1.0) {
        return Err(Error::arg("Q must be positive semidefinite"));
    }
    if min_eigenvalue_symmetric(r) <= 0.0 {
        return Err(Error::arg("R must be positive definite"));
    }

    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for iteration in 1..=DARE_MAX_ITERATIONS {
        let next = riccati_map(a, b, q, r, &p)?;
        residual = (&next - &p).frobenius_norm();
        if !residual.is_finite() {
            return Err(Error::Numerical("Riccati iteration diverged".into()));
        }
        p = next;
        if residual <= DARE_TOLERANCE {
            // `residual` was measured on the previous iterate; report the one we return
            let residual = riccati_residual(a, b, q, r, &p)?;
            let gain = lqr_gain(a, b, r, &p)?;
            return Ok(DareSolution {
                p,
                gain,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::Convergence {
        iterations: DARE_MAX_ITERATIONS,
        residual,
    })
}

fn check_symmetric(m: &Matrix, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!("{name} must be square")));
    }
    if m.asymmetry() > 1e-10 * m.max_abs().max(1.0) {
        return Err(Error::arg(format!("{name} must be symmetric")));
    }
    Ok(())
}

/// Eigenvalues at or above `-PSD_TOLERANCE` count as non-negative.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and the orthogonal matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    assert!(m.is_square());
    let n = m.rows;
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.frobenius_norm().powi(2).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
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
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

pub fn min_eigenvalue_symmetric(m: &Matrix) -> f64 {
    symmetric_eigen(m)
        .0
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes `m` and clips negative eigenvalues no larger in magnitude
/// than [`PSD_TOLERANCE`]. Anything more negative is an error.
pub fn symmetrize_psd_project(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim("PSD projection needs a square matrix"));
    }
    let sym = m.symmetrized();
    let (values, vectors) = symmetric_eigen(&sym);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 || m.rows == 0 {
        return Ok(sym);
    }
    if min < -PSD_TOLERANCE {
        return Err(Error::Numerical(format!(
            "matrix is indefinite (smallest eigenvalue {min:.3e})"
        )));
    }
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    Ok((&(&vectors * &Matrix::diag(&clipped)) * &vectors.transpose()).symmetrized())
}

/// Factor `L` with `L Lᵀ = m` for a symmetric PSD `m`; works for singular
/// covariances where Cholesky would break down.
pub fn psd_factor(m: &Matrix) -> Result<Matrix> {
    let projected = symmetrize_psd_project(m)?;
    let (values, vectors) = symmetric_eigen(&projected);
    let roots: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(&vectors * &Matrix::diag(&roots))
}

/// Spectral radius via Gelfand's formula `ρ = lim ‖Aᵏ‖^{1/k}`, evaluated
/// along `k = 2^j` with renormalized repeated squaring.
pub fn spectral_radius(a: &Matrix) -> f64 {
    assert!(a.is_square(), "spectral radius needs a square matrix");
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut b = a.scale(1.0 / norm);
    let mut log_scale = norm.ln();
    let mut exponent = 1.0f64;
    for _ in 0..48 {
        let sq = &b * &b;
        let s = sq.frobenius_norm();
        if s == 0.0 {
            return 0.0;
        }
        b = sq.scale(1.0 / s);
        log_scale = 2.0 * log_scale + s.ln();
        exponent *= 2.0;
    }
    (log_scale / exponent).exp()
}
