//! Small dense linear algebra.
//!
//! Everything here targets the low-dimensional systems the rest of the crate
//! handles (n up to ~32): a row-major [`Matrix`], a cyclic Jacobi symmetric
//! eigensolver, a Cholesky positive-definiteness test and an LU solver with
//! a condition estimate. Vectors are plain `&[f64]` / `Vec<f64>`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Numerical tolerances shared by all modules and their tests.
pub mod tol {
    /// Maximum absolute asymmetry accepted by symmetric-input operations.
    pub const SYMMETRY: f64 = 1e-10;
    /// Jacobi stops when the off-diagonal Frobenius norm drops below this times ‖A‖_F.
    pub const JACOBI_OFF_DIAGONAL: f64 = 1e-12;
    pub const JACOBI_MAX_SWEEPS: usize = 100;
    /// Orthonormality of eigenvectors, A·A⁻¹ = I checks.
    pub const ORTHONORMAL: f64 = 1e-9;
    /// Largest accepted 1-norm condition estimate before a matrix counts as singular.
    pub const MAX_CONDITION: f64 = 1e12;
    /// Relative finite-difference step: h = FD_STEP · (1 + ‖a‖).
    pub const FD_STEP: f64 = 1e-5;
    /// Fraction of failed sample evaluations tolerated by certification.
    pub const MAX_FAILURE_FRACTION: f64 = 1e-3;
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Column vector (n×1).
    pub fn column(v: &[f64]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// (A + Aᵀ)/2.
    pub fn sym_part(&self) -> Matrix {
        assert!(self.is_square());
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// vᵀ·A·v.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest |A[i][j] − A[j][i]| and where it occurs.
    pub fn max_asymmetry(&self) -> (usize, usize, f64) {
        let mut worst = (0, 0, 0.0);
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let d = (self[(i, j)] - self[(j, i)]).abs();
                if d > worst.2 {
                    worst = (i, j, d);
                }
            }
        }
        worst
    }
}

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

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
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

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "{:?}", self.row(i))?;
            if i + 1 < self.rows {
                write!(f, ", ")?;
            }
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot product dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_square(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!("expected a square matrix, got {}x{}", a.rows, a.cols)));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    check_square(a)?;
    let (row, col, asymmetry) = a.max_asymmetry();
    if asymmetry > tol::SYMMETRY {
        return Err(Error::Asymmetric { row, col, asymmetry });
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    check_symmetric(a)?;
    let n = a.rows;
    let mut m = a.sym_part();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..tol::JACOBI_MAX_SWEEPS {
        if off(&m) <= tol::JACOBI_OFF_DIAGONAL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // m ← Jᵀ m J with J the (p,q) rotation
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

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn lambda_min_max(a: &Matrix) -> Result<(f64, f64)> {
    let e = sym_eigen(a)?;
    Ok((e.values[0], *e.values.last().unwrap_or(&0.0)))
}

pub fn lambda_max(a: &Matrix) -> Result<f64> {
    Ok(lambda_min_max(a)?.1)
}

pub fn lambda_min(a: &Matrix) -> Result<f64> {
    Ok(lambda_min_max(a)?.0)
}

/// Cholesky-based test: true iff every pivot is strictly positive.
pub fn is_positive_definite(a: &Matrix) -> Result<bool> {
    check_symmetric(a)?;
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Ok(false);
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(true)
}

/// LU factorization with partial pivoting.
struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Result<Lu> {
        check_square(a)?;
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                return Err(Error::Singular { condition: f64::INFINITY });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in k + 1..n {
                    lu[(i, j)] -= factor * lu[(k, j)];
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    fn inverse(&self) -> Matrix {
        let n = self.lu.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Inverse together with the 1-norm condition number ‖A‖₁‖A⁻¹‖₁.
fn checked_inverse(a: &Matrix) -> Result<(Lu, Matrix)> {
    let lu = Lu::factor(a)?;
    let inv = lu.inverse();
    let condition = a.norm1() * inv.norm1();
    if !condition.is_finite() || condition > tol::MAX_CONDITION {
        return Err(Error::Singular { condition });
    }
    Ok((lu, inv))
}

pub fn condition_number(a: &Matrix) -> Result<f64> {
    let lu = Lu::factor(a)?;
    Ok(a.norm1() * lu.inverse().norm1())
}

/// Solves A·x = b.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::DimensionMismatch(format!("rhs of length {} for {}x{} system", b.len(), a.rows, a.cols)));
    }
    let (lu, _) = checked_inverse(a)?;
    Ok(lu.solve(b))
}

pub fn invert(a: &Matrix) -> Result<Matrix> {
    Ok(checked_inverse(a)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> Matrix {
        Matrix::from_rows(&[[-3.0, 5.0], [3.0, 2.0]])
    }

    fn q() -> Matrix {
        Matrix::from_rows(&[[-1.0, 1.0], [-1.0, 0.0]])
    }

    fn random_symmetric(rng: &mut impl Rng, n: usize) -> Matrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        b.sym_part()
    }

    fn random_rotation(rng: &mut impl Rng, n: usize) -> Matrix {
        // eigenvectors of a random symmetric matrix form an orthogonal matrix
        sym_eigen(&random_symmetric(rng, n)).unwrap().vectors
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn observer_symmetric_part_eigenvalues() {
        let a = &(&p() * &q()) * &invert(&p()).unwrap();
        let (lo, hi) = lambda_min_max(&a.sym_part()).unwrap();
        assert!((lo + 0.76).abs() < 0.005, "{lo}");
        assert!((hi + 0.24).abs() < 0.005, "{hi}");
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_symmetric(&mut rng, 8);
        let e = sym_eigen(&a).unwrap();
        let v = &e.vectors;
        let recon = &(v * &Matrix::from_diag(&e.values)) * &v.transpose();
        assert!((&recon - &a).frobenius() < 1e-8);
        let vtv = &v.transpose() * v;
        assert!((&vtv - &Matrix::identity(8)).max_abs() < tol::ORTHONORMAL);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        // A·V = V·Λ
        let av = &a * v;
        let vl = v * &Matrix::from_diag(&e.values);
        assert!((&av - &vl).max_abs() < 1e-9);
    }

    #[test]
    fn diagonal_extremes() {
        assert_eq!(lambda_min_max(&Matrix::from_diag(&[2.0, 5.0])).unwrap(), (2.0, 5.0));
    }

    #[test]
    fn spd_construction_has_floor_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b = Matrix::from_fn(5, 5, |_, _| rng.random_range(-2.0..2.0));
            let a = &(&b.transpose() * &b) + &Matrix::identity(5);
            assert!(lambda_min(&a).unwrap() >= 1.0 - 1e-10);
        }
    }

    #[test]
    fn asymmetric_input_names_the_pair() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.5, 1.0]]);
        match sym_eigen(&a) {
            Err(Error::Asymmetric { row: 0, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(sym_eigen(&Matrix::zeros(2, 3)), Err(Error::InvalidInput(_))));
        assert!(is_positive_definite(&a).is_err());
    }

    #[test]
    fn positive_definiteness() {
        assert!(is_positive_definite(&Matrix::identity(4)).unwrap());
        assert!(!is_positive_definite(&Matrix::from_diag(&[1.0, -1.0])).unwrap());
        // PᵀP at the observer origin, cross-checked by the eigenvalue floor
        let m = &p().transpose() * &p();
        assert!(is_positive_definite(&m).unwrap());
        assert!(lambda_min(&m).unwrap() > 0.0);
    }

    #[test]
    fn inverse_of_p() {
        let inv = invert(&p()).unwrap();
        let expected = Matrix::from_rows(&[[2.0, -5.0], [-3.0, -3.0]]).scale(-1.0 / 21.0);
        assert!((&inv - &expected).max_abs() < 1e-14);
        assert!((&(&p() * &inv) - &Matrix::identity(2)).max_abs() < tol::ORTHONORMAL);
    }

    #[test]
    fn solve_identity_and_residual() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve(&Matrix::identity(3), &b).unwrap(), b);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Matrix::from_fn(6, 6, |i, j| rng.random_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 });
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve(&a, &b).unwrap();
        let r = sub(&a.mul_vec(&x), &b);
        assert!(norm(&r) <= 1e-10 * (1.0 + norm(&b)));
    }

    #[test]
    fn hilbert_is_rejected() {
        let h = Matrix::from_fn(12, 12, |i, j| 1.0 / (i + j + 1) as f64);
        match invert(&h) {
            Err(Error::Singular { condition }) => assert!(condition > tol::MAX_CONDITION),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(solve(&Matrix::zeros(2, 2), &[1.0, 1.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn rayleigh_quotients_stay_in_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_symmetric(&mut rng, 6);
        let (lo, hi) = lambda_min_max(&a).unwrap();
        for _ in 0..1000 {
            let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let r = a.quadratic_form(&v);
            assert!(r >= lo - 1e-8 && r <= hi + 1e-8);
        }
    }

    #[test]
    fn pd_test_agrees_with_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..1000 {
            let n = 1 + i % 5;
            let mut a = random_symmetric(&mut rng, n);
            let shift = rng.random_range(-0.5..1.5);
            for k in 0..n {
                a[(k, k)] += shift;
            }
            assert_eq!(is_positive_definite(&a).unwrap(), lambda_min(&a).unwrap() > 0.0);
        }
    }

    proptest! {
        #[test]
        fn similarity_invariance(seed in any::<u64>(), n in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_symmetric(&mut rng, n);
            let r = random_rotation(&mut rng, n);
            let b = (&(&r.transpose() * &a) * &r).sym_part();
            let ea = sym_eigen(&a).unwrap().values;
            let eb = sym_eigen(&b).unwrap().values;
            for (x, y) in ea.iter().zip(&eb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
