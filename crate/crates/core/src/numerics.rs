//! Scalar and matrix arithmetic shared by all machine semantics.
//!
//! Probabilistic machines use exact rational arithmetic ([`Rational`]), so
//! acceptance probabilities are exact fractions; quantum machines use
//! double-precision complex arithmetic with a [`TolerancePolicy`].

use num_complex::Complex64;
use num_traits::{One, Zero};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::NumericsError;

/// Arbitrary-precision rational, always in lowest terms with positive denominator.
pub type Rational = num_rational::BigRational;

/// Double-precision complex amplitude.
pub type Complex = Complex64;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

/// Validation and comparison tolerances for floating-point (quantum) arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct TolerancePolicy {
    pub eps_validate: f64,
    pub eps_compare: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            eps_validate: 1e-12,
            eps_compare: 1e-9,
        }
    }
}

impl TolerancePolicy {
    pub fn new(eps_validate: f64, eps_compare: f64) -> Result<Self, NumericsError> {
        if !(0.0 < eps_validate && eps_validate <= eps_compare && eps_compare < 1.0) {
            return Err(NumericsError::BadTolerance {
                eps_validate,
                eps_compare,
            });
        }
        Ok(TolerancePolicy {
            eps_validate,
            eps_compare,
        })
    }
}

/// Entry type usable inside a [`Mat`]: rationals or complex doubles.
pub trait Scalar:
    Clone
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + fmt::Debug
{
    /// Complex conjugate; identity for rationals.
    fn conj(&self) -> Self;
}

impl Scalar for Rational {
    fn conj(&self) -> Self {
        self.clone()
    }
}

impl Scalar for Complex64 {
    fn conj(&self) -> Self {
        Complex64::conj(self)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, NumericsError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in &rows {
            if r.len() != ncols {
                return Err(NumericsError::RaggedRows);
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row_major(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// Conjugate transpose; plain transpose for rational matrices.
    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)].clone();
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out[(i, j)].clone() + a.clone() * rhs[(k, j)].clone();
                    out[(i, j)] = v;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        let mut out = vec![T::zero(); self.rows];
        for i in 0..self.rows {
            let mut acc = T::zero();
            for j in 0..self.cols {
                acc = acc + self[(i, j)].clone() * v[j].clone();
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a.clone() + b.clone())
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a.clone() - b.clone())
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, c: &T) -> Self {
        let data = self.data.iter().map(|a| a.clone() * c.clone()).collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn trace(&self) -> T {
        assert!(self.is_square());
        let mut acc = T::zero();
        for i in 0..self.rows {
            acc = acc + self[(i, i)].clone();
        }
        acc
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Kronecker product: entry [(i*b.rows+k),(j*b.cols+l)] = a[i,j]*b[k,l].
pub fn tensor_product<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a[(i, j)].clone();
            if aij.is_zero() {
                continue;
            }
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out[(i * b.rows + k, j * b.cols + l)] = aij.clone() * b[(k, l)].clone();
                }
            }
        }
    }
    out
}

impl Mat<Complex64> {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        self.sub(rhs).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.max_abs_diff(&self.dagger()) <= tol
    }

    fn off_diag_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j {
                    s += self[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.
    /// Returns (eigenvalues, V) with `self = V diag(vals) V†`.
    pub fn hermitian_eigen(&self, tol: &TolerancePolicy) -> Result<(Vec<f64>, Mat<Complex64>), NumericsError> {
        if !self.is_hermitian(tol.eps_compare) {
            return Err(NumericsError::NotHermitian);
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut v: Mat<Complex64> = Mat::identity(n);
        let max_sweeps = 100;
        for _ in 0..max_sweeps {
            if a.off_diag_norm() < tol.eps_validate {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.norm() < tol.eps_validate * 1e-3 {
                        continue;
                    }
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let phase = apq / apq.norm();
                    // 2x2 unitary zeroing the (p,q) entry
                    let theta = 0.5 * (2.0 * apq.norm()).atan2(app - aqq);
                    let (s, c) = theta.sin_cos();
                    // columns p,q of the rotation
                    let rpp = Complex64::new(c, 0.0);
                    let rpq = -phase * s;
                    let rqp = phase.conj() * s;
                    let rqq = Complex64::new(c, 0.0);
                    // a <- R† a R, applied in place on rows/cols p,q
                    for j in 0..n {
                        let ap = a[(p, j)];
                        let aq = a[(q, j)];
                        a[(p, j)] = rpp.conj() * ap + rqp.conj() * aq;
                        a[(q, j)] = rpq.conj() * ap + rqq.conj() * aq;
                    }
                    for i in 0..n {
                        let ap = a[(i, p)];
                        let aq = a[(i, q)];
                        a[(i, p)] = ap * rpp + aq * rqp;
                        a[(i, q)] = ap * rpq + aq * rqq;
                    }
                    for i in 0..n {
                        let vp = v[(i, p)];
                        let vq = v[(i, q)];
                        v[(i, p)] = vp * rpp + vq * rqp;
                        v[(i, q)] = vp * rpq + vq * rqq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[(i, i)].re).collect();
        Ok((vals, v))
    }

    /// Hermitian square root of a positive-semidefinite matrix.
    /// Eigenvalues in [-eps_validate, 0) are clamped to zero.
    pub fn psd_sqrt(&self, tol: &TolerancePolicy) -> Result<Mat<Complex64>, NumericsError> {
        let (vals, v) = self.hermitian_eigen(tol)?;
        let mut d: Mat<Complex64> = Mat::zeros(self.rows, self.rows);
        for (i, lam) in vals.iter().enumerate() {
            if *lam < -tol.eps_validate {
                return Err(NumericsError::NegativeEigenvalue(*lam));
            }
            d[(i, i)] = Complex64::new(lam.max(0.0).sqrt(), 0.0);
        }
        Ok(v.matmul(&d).matmul(&v.dagger()))
    }
}

impl Mat<Rational> {
    /// Exact embedding into a complex matrix.
    pub fn to_complex(&self) -> Mat<Complex64> {
        let mut out = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = Complex64::new(rational_to_f64(&self[(i, j)]), 0.0);
            }
        }
        out
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}
