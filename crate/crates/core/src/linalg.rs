//! Small dense real linear algebra.
//!
//! Everything here targets matrices of dimension 16 or less: cyclic Jacobi for
//! symmetric eigenproblems, Hessenberg reduction followed by Francis
//! double-shift QR for general spectra, and a Kronecker-vectorized dense solve
//! for continuous Lyapunov equations.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

/// Solver tolerances shared by every routine in this module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Relative asymmetry allowed in symmetric inputs: `max|M - Mᵀ| <= symmetry * (1 + max|M|)`.
    pub symmetry: f64,
    /// Maximum number of cyclic Jacobi sweeps.
    pub jacobi_max_sweeps: usize,
    /// Maximum QR iterations spent on a single eigenvalue before giving up.
    pub qr_max_iterations: usize,
    /// Relative pivot threshold below which the LU factorization is declared singular.
    pub pivot: f64,
    /// Relative threshold on `|λi + λj|` used to detect a singular Lyapunov operator.
    pub lyapunov_singularity: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        symmetry: 1e-9,
        jacobi_max_sweeps: 100,
        qr_max_iterations: 60,
        pivot: 1e-13,
        lyapunov_singularity: 1e-10,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {deviation:e})")]
    Asymmetric { deviation: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("ragged or empty row data")]
    Ragged,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{routine} did not converge after {iterations} iterations")]
    NonConvergence { routine: &'static str, iterations: usize },
    #[error("singular linear system (pivot {pivot:e})")]
    Singular { pivot: f64 },
    #[error("Lyapunov operator is singular: eigenvalues {0} and {1} sum to zero")]
    SingularLyapunov(Complex64, Complex64),
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotHurwitz { abscissa: f64 },
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
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

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row vectors, rejecting ragged or non-finite input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map(|row| row.as_ref().len()).unwrap_or(0);
        if r == 0 || c == 0 {
            return Err(LinalgError::Ragged);
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(LinalgError::Ragged);
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Convenience constructor for literal data in code and tests. Panics on ragged input.
    pub fn new<const C: usize>(rows: &[[f64; C]]) -> Self {
        Self::from_rows(rows).expect("literal matrix must be rectangular and finite")
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(|r| r.to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "mul_vec dimension mismatch");
        self.data.chunks(self.cols).map(|row| dot(row, x)).collect()
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Bilinear form `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise dimension mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `(M + Mᵀ) / 2`
    pub fn symmetrized(&self) -> Matrix {
        self.add(&self.transpose()).scale(0.5)
    }

    /// `AᵀP + PA`, the Lyapunov form of `A` with respect to `P`.
    pub fn lyapunov_form(a: &Matrix, p: &Matrix) -> Matrix {
        a.transpose().matmul(p).add(&p.matmul(a))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        dev
    }

    pub fn ensure_square(&self) -> Result<usize, LinalgError> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn ensure_symmetric(&self) -> Result<usize, LinalgError> {
        let n = self.ensure_square()?;
        let dev = self.asymmetry();
        if dev > Tolerances::DEFAULT.symmetry * (1.0 + self.max_abs()) {
            return Err(LinalgError::Asymmetric { deviation: dev });
        }
        Ok(n)
    }

    /// Determinant by LU with partial pivoting.
    pub fn determinant(&self) -> Result<f64, LinalgError> {
        let n = self.ensure_square()?;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap_or(k);
            if a[(piv, k)] == 0.0 {
                return Ok(0.0);
            }
            if piv != k {
                a.swap_rows(piv, k);
                det = -det;
            }
            det *= a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        Ok(det)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + b).collect()
}

pub fn scale_vec(s: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| s * v).collect()
}

/// Eigenvalues of a general real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    /// Largest real part.
    pub fn abscissa(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.abscissa() < 0.0
    }
}

/// Symmetric eigendecomposition `M = Q diag(λ) Qᵀ` by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in descending order; column `k` of the returned
/// matrix is the unit eigenvector for eigenvalue `k`.
pub fn eig_symmetric(m: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    let n = m.ensure_symmetric()?;
    let tol = Tolerances::DEFAULT;
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();
    let target = (f64::EPSILON * scale).powi(2);

    let mut converged = n < 2;
    for _ in 0..tol.jacobi_max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum();
        if off <= target || off == 0.0 {
            converged = true;
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
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NonConvergence {
            routine: "jacobi",
            iterations: tol.jacobi_max_sweeps,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix together with its unit eigenvector.
pub fn min_eigenpair(m: &Matrix) -> Result<(f64, Vec<f64>), LinalgError> {
    let (vals, vecs) = eig_symmetric(m)?;
    let n = vals.len();
    let col = (0..n).map(|k| vecs[(k, n - 1)]).collect();
    Ok((vals[n - 1], col))
}

/// Largest eigenvalue of a symmetric matrix together with its unit eigenvector.
pub fn max_eigenpair(m: &Matrix) -> Result<(f64, Vec<f64>), LinalgError> {
    let (vals, vecs) = eig_symmetric(m)?;
    let n = vals.len();
    let col = (0..n).map(|k| vecs[(k, 0)]).collect();
    Ok((vals[0], col))
}

/// True iff the smallest eigenvalue exceeds `margin`.
pub fn is_positive_definite(m: &Matrix, margin: f64) -> Result<bool, LinalgError> {
    let (vals, _) = eig_symmetric(m)?;
    Ok(vals.last().copied().unwrap_or(f64::NEG_INFINITY) > margin)
}

/// Eigenvalues of a general real matrix (Hessenberg reduction + shifted QR).
pub fn eig_general(m: &Matrix) -> Result<Spectrum, LinalgError> {
    let n = m.ensure_square()?;
    let mut a = m.clone();
    reduce_to_hessenberg(&mut a);
    let eigenvalues = hessenberg_qr(&mut a, Tolerances::DEFAULT.qr_max_iterations)?;
    debug_assert_eq!(eigenvalues.len(), n);
    Ok(Spectrum { eigenvalues })
}

/// Gaussian similarity reduction to upper Hessenberg form with pivoting.
fn reduce_to_hessenberg(a: &mut Matrix) {
    let n = a.rows();
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[(j, m - 1)].abs() > x.abs() {
                x = a[(j, m - 1)];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                let tmp = a[(piv, j)];
                a[(piv, j)] = a[(m, j)];
                a[(m, j)] = tmp;
            }
            for j in 0..n {
                let tmp = a[(j, piv)];
                a[(j, piv)] = a[(j, m)];
                a[(j, m)] = tmp;
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = y;
                    for j in m..n {
                        let v = a[(m, j)];
                        a[(i, j)] -= y * v;
                    }
                    for j in 0..n {
                        let v = a[(j, i)];
                        a[(j, m)] += y * v;
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            a[(i, j)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `h`).
#[allow(unused_assignments)]
fn hessenberg_qr(h: &mut Matrix, max_its: usize) -> Result<Vec<Complex64>, LinalgError> {
    let n = h.rows() as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); n as usize];
    let at = |h: &Matrix, i: isize, j: isize| h[(i as usize, j as usize)];
    macro_rules! set {
        ($i:expr, $j:expr, $v:expr) => {
            h[($i as usize, $j as usize)] = $v
        };
    }

    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += at(h, i, j).abs();
        }
    }
    let eps = f64::EPSILON;
    let mut nn = n - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r, mut s, mut w, mut x, mut y, mut z) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l > 0 {
                s = at(h, l - 1, l - 1).abs() + at(h, l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if at(h, l, l - 1).abs() <= eps * s {
                    set!(l, l - 1, 0.0);
                    break;
                }
                l -= 1;
            }
            x = at(h, nn, nn);
            if l == nn {
                out[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            y = at(h, nn - 1, nn - 1);
            w = at(h, nn, nn - 1) * at(h, nn - 1, nn);
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    let mut lo = x + z;
                    let hi = x + z;
                    if z != 0.0 {
                        lo = x - w / z;
                    }
                    out[(nn - 1) as usize] = Complex64::new(hi, 0.0);
                    out[nn as usize] = Complex64::new(lo, 0.0);
                } else {
                    out[nn as usize] = Complex64::new(x + p, -z);
                    out[(nn - 1) as usize] = Complex64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == max_its {
                return Err(LinalgError::NonConvergence {
                    routine: "hessenberg qr",
                    iterations: its,
                });
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nn {
                    let v = at(h, i, i);
                    set!(i, i, v - x);
                }
                s = at(h, nn, nn - 1).abs() + at(h, nn - 1, nn - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            while m >= l {
                z = at(h, m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / at(h, m + 1, m) + at(h, m, m + 1);
                q = at(h, m + 1, m + 1) - z - r - s;
                r = at(h, m + 2, m + 1);
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = at(h, m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (at(h, m - 1, m - 1).abs() + z.abs() + at(h, m + 1, m + 1).abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..(nn - 1) {
                set!(i + 2, i, 0.0);
                if i != m {
                    set!(i + 2, i - 1, 0.0);
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = at(h, k, k - 1);
                    q = at(h, k + 1, k - 1);
                    r = 0.0;
                    if k + 1 != nn {
                        r = at(h, k + 2, k - 1);
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            let v = at(h, k, k - 1);
                            set!(k, k - 1, -v);
                        }
                    } else {
                        set!(k, k - 1, -s * x);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = at(h, k, j) + q * at(h, k + 1, j);
                        if k + 1 != nn {
                            p += r * at(h, k + 2, j);
                            let v = at(h, k + 2, j);
                            set!(k + 2, j, v - p * z);
                        }
                        let v = at(h, k + 1, j);
                        set!(k + 1, j, v - p * y);
                        let v = at(h, k, j);
                        set!(k, j, v - p * x);
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * at(h, i, k) + y * at(h, i, k + 1);
                        if k + 1 != nn {
                            p += z * at(h, i, k + 2);
                            let v = at(h, i, k + 2);
                            set!(i, k + 2, v - p * r);
                        }
                        let v = at(h, i, k + 1);
                        set!(i, k + 1, v - p * q);
                        let v = at(h, i, k);
                        set!(i, k, v - p);
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok(out)
}

/// Dense LU solve with partial pivoting. `a` is consumed.
pub fn lu_solve(mut a: Matrix, mut b: Vec<f64>) -> Result<Vec<f64>, LinalgError> {
    let n = a.ensure_square()?;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap_or(k);
        let pivot = a[(piv, k)];
        if pivot.abs() <= Tolerances::DEFAULT.pivot * scale {
            return Err(LinalgError::Singular { pivot });
        }
        a.swap_rows(piv, k);
        b.swap(piv, k);
        for i in (k + 1)..n {
            let f = a[(i, k)] / a[(k, k)];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                let v = a[(k, j)];
                a[(i, j)] -= f * v;
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| a[(i, j)] * x[j]).sum();
        x[i] = (b[i] - s) / a[(i, i)];
    }
    Ok(x)
}

/// Solves `AᵀP + PA + Q = 0` for symmetric `P` by Kronecker vectorization.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.ensure_square()?;
    let qn = q.ensure_symmetric()?;
    if qn != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: qn,
        });
    }
    let spectrum = eig_general(a)?;
    let tol = Tolerances::DEFAULT.lyapunov_singularity * (1.0 + a.frobenius());
    for (i, li) in spectrum.eigenvalues.iter().enumerate() {
        for lj in &spectrum.eigenvalues[i..] {
            if (li + lj).norm() <= tol {
                return Err(LinalgError::SingularLyapunov(*li, *lj));
            }
        }
    }
    if !spectrum.is_hurwitz() {
        return Err(LinalgError::NotHurwitz {
            abscissa: spectrum.abscissa(),
        });
    }

    // Row (i, j) of the system: Σ_k A[k,i] P[k,j] + Σ_k P[i,k] A[k,j] = -Q[i,j],
    // unknown P[r,c] stored at r*n + c.
    let nn = n * n;
    let mut big = Matrix::zeros(nn, nn);
    let mut rhs = vec![0.0; nn];
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            rhs[row] = -q[(i, j)];
            for k in 0..n {
                big[(row, k * n + j)] += a[(k, i)];
                big[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let sol = lu_solve(big, rhs)?;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = sol[i * n + j];
        }
    }
    Ok(p.symmetrized())
}
