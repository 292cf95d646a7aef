//! Dense real matrices.
//!
//! [`Matrix`] is generic over [`Real`] so the same routines run on plain
//! floats and on recorded autodiff variables. Eigen-based routines
//! (symmetric square roots, SVD, eigenvalues, the Lyapunov solve) work on
//! `f64` only and go through nalgebra; they serve as references and are
//! never on the differentiated path.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::{Complex, DMatrix, DVector};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl<T> Matrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn from_f64(m: &Matrix<f64>) -> Self {
        m.map(|&v| T::cst(v))
    }

    pub fn values(&self) -> Matrix<f64> {
        self.map(|v| v.value())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for c in 0..rhs.cols {
                let mut acc = self[(r, 0)] * rhs[(0, c)];
                for k in 1..self.cols {
                    acc += self[(r, k)] * rhs[(k, c)];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    /// `self * rhs^T`.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.rows);
        for r in 0..self.rows {
            for c in 0..rhs.rows {
                let mut acc = self[(r, 0)] * rhs[(c, 0)];
                for k in 1..self.cols {
                    acc += self[(r, k)] * rhs[(c, k)];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    /// `self^T * rhs`.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul dimension mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for r in 0..self.cols {
            for c in 0..rhs.cols {
                let mut acc = self[(0, r)] * rhs[(0, c)];
                for k in 1..self.rows {
                    acc += self[(k, r)] * rhs[(k, c)];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| {
                let mut acc = self[(r, 0)] * x[0];
                for k in 1..self.cols {
                    acc += self[(r, k)] * x[k];
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|&v| v * k)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `I - self`.
    pub fn identity_minus(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |r, c| {
            if r == c {
                -self[(r, c)] + 1.0
            } else {
                -self[(r, c)]
            }
        })
    }

    /// `I + self`.
    pub fn identity_plus(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |r, c| {
            if r == c {
                self[(r, c)] + 1.0
            } else {
                self[(r, c)]
            }
        })
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |r, c| {
            if r == c {
                self[(r, c)]
            } else {
                (self[(r, c)] + self[(c, r)]) * 0.5
            }
        })
    }

    pub fn trace(&self) -> T {
        assert!(self.is_square());
        (1..self.rows).fold(self[(0, 0)], |acc, i| acc + self[(i, i)])
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.value() * v.value()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.value().abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.value().is_finite())
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| self[(r0 + r, c0 + c)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for r in 0..b.rows {
            for c in 0..b.cols {
                self[(r0 + r, c0 + c)] = b[(r, c)];
            }
        }
    }

    /// Lower Cholesky factor. Fails on a non-positive or non-finite pivot.
    pub fn cholesky(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Dimension("cholesky of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)].square();
            }
            if !(d.value() > 0.0) || !d.value().is_finite() {
                return Err(Error::NotSpd(format!("cholesky pivot {j} is {}", d.value())));
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(l)
    }

    /// Solve `L X = B` for lower-triangular `L`.
    pub fn solve_lower(l: &Self, b: &Self) -> Self {
        assert_eq!(l.rows, b.rows);
        let n = l.rows;
        let mut x = Self::zeros(n, b.cols);
        for c in 0..b.cols {
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        x
    }

    /// Solve `L^T X = B` for lower-triangular `L`.
    pub fn solve_lower_t(l: &Self, b: &Self) -> Self {
        assert_eq!(l.rows, b.rows);
        let n = l.rows;
        let mut x = Self::zeros(n, b.cols);
        for c in 0..b.cols {
            for i in (0..n).rev() {
                let mut s = b[(i, c)];
                for k in i + 1..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        x
    }

    /// Inverse of a symmetric positive definite matrix.
    pub fn spd_inverse(&self) -> Result<Self> {
        let l = self.cholesky()?;
        Ok(spd_inverse_from_cholesky(&l))
    }
}

/// Inverse of a lower-triangular matrix, itself lower triangular.
pub fn lower_inverse<T: Real>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut x = Matrix::zeros(n, n);
    for c in 0..n {
        x[(c, c)] = T::one() / l[(c, c)];
        for i in c + 1..n {
            let mut s = l[(i, c)] * x[(c, c)];
            for k in c + 1..i {
                s += l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = -s / l[(i, i)];
        }
    }
    x
}

/// `(L L^T)^{-1}` from its lower Cholesky factor. Only the structurally
/// nonzero terms are formed, which keeps recorded tapes short.
pub fn spd_inverse_from_cholesky<T: Real>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let linv = lower_inverse(l);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // (L^{-T} L^{-1})_{ij} = sum over k >= j of Linv[k,i] Linv[k,j].
            let mut s = linv[(j, i)] * linv[(j, j)];
            for k in j + 1..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// `log det(L L^T)`.
pub fn log_det_from_cholesky<T: Real>(l: &Matrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..l.rows() {
        acc += l[(i, i)].ln();
    }
    acc * 2.0
}

/// Result of a Denman–Beavers run.
#[derive(Debug, Clone)]
pub struct SqrtPair<T> {
    pub sqrt: Matrix<T>,
    pub inv_sqrt: Matrix<T>,
    pub iterations: usize,
}

const DB_TOL: f64 = 1e-13;
const DB_STALL: f64 = 1e-9;
const DB_MAX_ITER: usize = 100;

/// Square root and inverse square root of an SPD matrix by the scaled
/// Denman–Beavers iteration.
///
/// Built only from products, Cholesky factorizations and triangular solves,
/// so it can be recorded and differentiated. The determinant scaling factor
/// is treated as a constant: the limit does not depend on it.
pub fn denman_beavers<T: Real>(m: &Matrix<T>) -> Result<SqrtPair<T>> {
    if !m.is_square() {
        return Err(Error::Dimension("square root of a non-square matrix".into()));
    }
    let n = m.rows();
    let mut y = m.symmetrize();
    let mut z = Matrix::<T>::identity(n);
    let mut scaling = true;
    let mut last = f64::INFINITY;
    for it in 1..=DB_MAX_ITER {
        let ly = y.cholesky().map_err(|e| spd_context(e, "square root input"))?;
        let lz = z.cholesky().map_err(|e| spd_context(e, "square root iterate"))?;
        let y_inv = spd_inverse_from_cholesky(&ly);
        let z_inv = spd_inverse_from_cholesky(&lz);
        let (y_next, z_next) = if scaling {
            let log_det = log_det_from_cholesky(&ly).value() + log_det_from_cholesky(&lz).value();
            let mu = (-log_det / (2.0 * n as f64)).exp();
            (
                y.scale(T::cst(mu)).add(&z_inv.scale(T::cst(1.0 / mu))).scale(T::cst(0.5)),
                z.scale(T::cst(mu)).add(&y_inv.scale(T::cst(1.0 / mu))).scale(T::cst(0.5)),
            )
        } else {
            (
                y.add(&z_inv).scale(T::cst(0.5)),
                z.add(&y_inv).scale(T::cst(0.5)),
            )
        };
        let y_next = y_next.symmetrize();
        let z_next = z_next.symmetrize();
        let step = y_next.values().sub(&y.values()).frobenius() / y_next.frobenius();
        y = y_next;
        z = z_next;
        if !step.is_finite() {
            return Err(Error::NonFinite("square root iteration".into()));
        }
        if step < DB_TOL || (step < DB_STALL && step >= last) {
            return Ok(SqrtPair {
                sqrt: y,
                inv_sqrt: z,
                iterations: it,
            });
        }
        if step < 1e-2 {
            scaling = false;
        }
        last = step;
    }
    Err(Error::NoConvergence(format!(
        "square root iteration after {DB_MAX_ITER} steps"
    )))
}

fn spd_context(e: Error, what: &str) -> Error {
    match e {
        Error::NotSpd(msg) => Error::NotSpd(format!("{what}: {msg}")),
        other => other,
    }
}

pub(crate) fn to_dmatrix(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

fn check_symmetric(m: &Matrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension("expected a square matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let asym = m.sub(&m.transpose()).max_abs();
    if asym > 1e-12 * scale {
        return Err(Error::NotSpd(format!("asymmetry {asym:e}")));
    }
    Ok(())
}

fn spd_eigen(m: &Matrix<f64>) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(m)?;
    m.cholesky()?;
    let eig = to_dmatrix(&m.symmetrize()).symmetric_eigen();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::NotSpd(format!("eigenvalue {bad}")));
    }
    Ok(eig)
}

fn eigen_function(m: &Matrix<f64>, f: impl Fn(f64) -> f64) -> Result<Matrix<f64>> {
    let eig = spd_eigen(m)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(from_dmatrix(&out).symmetrize())
}

/// Symmetric square root through the eigendecomposition.
pub fn sym_sqrt(m: &Matrix<f64>) -> Result<Matrix<f64>> {
    eigen_function(m, f64::sqrt)
}

/// Symmetric inverse square root through the eigendecomposition.
pub fn sym_inv_sqrt(m: &Matrix<f64>) -> Result<Matrix<f64>> {
    eigen_function(m, |v| 1.0 / v.sqrt())
}

/// Singular value decomposition `M = U diag(s) V^T`, `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix<f64>,
    pub s: Vec<f64>,
    pub v: Matrix<f64>,
}

pub fn svd(m: &Matrix<f64>) -> Result<Svd> {
    if !m.is_square() {
        return Err(Error::Dimension("svd expects a square matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let n = m.rows();
    let dec = to_dmatrix(m).svd(true, true);
    let u = dec.u.expect("requested U");
    let vt = dec.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    Ok(Svd {
        u: Matrix::from_fn(n, n, |r, c| u[(r, order[c])]),
        s: order.iter().map(|&k| dec.singular_values[k]).collect(),
        v: Matrix::from_fn(n, n, |r, c| vt[(order[c], r)]),
    })
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix<f64>) -> Result<f64> {
    Ok(svd(m)?.s.first().copied().unwrap_or(0.0))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &Matrix<f64>) -> Vec<Complex<f64>> {
    assert!(m.is_square());
    if m.rows() == 0 {
        return Vec::new();
    }
    to_dmatrix(m).complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &Matrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solve `V = F V F^T + E` through the Kronecker system
/// `(I - F ⊗ F) vec(V) = vec(E)`.
pub fn solve_discrete_lyapunov(f: &Matrix<f64>, e: &Matrix<f64>) -> Result<Matrix<f64>> {
    if !f.is_square() || !e.is_square() || f.rows() != e.rows() {
        return Err(Error::Dimension("lyapunov operands must be square and conformable".into()));
    }
    let radius = spectral_radius(f);
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    let n = f.rows();
    let nn = n * n;
    // Row-major vec: vec(F V F^T)[i*n + j] = sum_{k,l} F[i,k] F[j,l] V[k,l].
    let mut k = DMatrix::<f64>::identity(nn, nn);
    for i in 0..n {
        for j in 0..n {
            for a in 0..n {
                for b in 0..n {
                    k[(i * n + j, a * n + b)] -= f[(i, a)] * f[(j, b)];
                }
            }
        }
    }
    let rhs = DVector::from_row_slice(e.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonStationary { radius })?;
    Ok(Matrix::from_vec(n, n, sol.iter().copied().collect()).symmetrize())
}

/// Multivariate normal log density.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &Matrix<f64>) -> Result<f64> {
    let n = x.len();
    if mean.len() != n || cov.rows() != n || cov.cols() != n {
        return Err(Error::Dimension(format!(
            "mvn_logpdf with x of length {n}, mean of length {}, covariance {}x{}",
            mean.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let l = cov.cholesky()?;
    let r = Matrix::from_vec(n, 1, x.iter().zip(mean).map(|(a, b)| a - b).collect());
    let w = Matrix::solve_lower(&l, &r);
    let quad: f64 = w.as_slice().iter().map(|v| v * v).sum();
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_from_cholesky(&l) + quad))
}
