//! Dense symmetric-matrix utilities shared by every solver stage.
//!
//! Everything here is a pure function of its inputs. Rank decisions go through
//! [`RankTol`], which defaults to the usual SVD cutoff
//! `eps * max(rows, cols) * sigma_max`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{contract, Error, Result};

const MAX_SWEEPS: usize = 10_000;


/// Threshold below which singular values are treated as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankTol {
    /// `f64::EPSILON * max(rows, cols) * sigma_max`.
    #[default]
    Auto,
    Abs(f64),
}

impl RankTol {
    pub fn from_option(tol: Option<f64>) -> Self {
        tol.map_or(RankTol::Auto, RankTol::Abs)
    }

    pub fn cutoff(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            RankTol::Auto => f64::EPSILON * rows.max(cols) as f64 * sigma_max,
            RankTol::Abs(t) => t,
        }
    }
}

/// Largest absolute entry.
pub fn sup_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// A real symmetric matrix. Construction symmetrizes `(M + M')/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(contract(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(contract("symmetric matrix must have dim >= 1"));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrize a square matrix. Panics if `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let defect = sup_norm(&(&m - m.transpose()));
        let scale = sup_norm(&m).max(1.0);
        if defect > 1e-12 * scale {
            log::debug!("symmetrizing matrix with asymmetry defect {defect:e}");
        }
        let s = (&m + m.transpose()) * 0.5;
        SymMatrix(s)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Singular value decomposition `M = U diag(s) V'`, `s` descending.
///
/// `V` is the full `cols x cols` orthogonal factor; `U` has `cols` columns, and
/// those belonging to zero singular values are zero.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// nalgebra's implicit-shift SVD can return factorizations that are off by
/// O(1) on rank-deficient inputs; Jacobi rotations are slower but accurate to
/// rounding on the small matrices used here. Wide matrices are padded with zero
/// rows so the full right factor comes out.
pub(crate) fn svd(m: &DMatrix<f64>, context: &'static str) -> Result<Svd> {
    let (rows, cols) = m.shape();
    let height = rows.max(cols);
    let mut a = DMatrix::zeros(height, cols);
    a.view_mut((0, 0), (rows, cols)).copy_from(m);
    let mut v = DMatrix::<f64>::identity(cols, cols);

    // Columns below `negligible` are rounding noise of an exactly zero singular
    // value; rotating them only cycles.
    let negligible = (f64::EPSILON * m.norm()).powi(2);
    let orth_tol = f64::EPSILON * height as f64;
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha <= negligible || beta <= negligible || gamma.abs() <= orth_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged || !a.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericalFailure {
            context,
            matrix: m.clone(),
        });
    }

    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(rows, cols);
    let mut v_sorted = DMatrix::zeros(cols, cols);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(a.column(j).rows(0, rows) / norms[j]));
        }
        v_sorted.set_column(k, &v.column(j));
    }
    Ok(Svd {
        u,
        s: DVector::from_iterator(cols, order.iter().map(|&j| norms[j])),
        v: v_sorted,
    })
}

const MAX_JACOBI_SWEEPS: usize = 100;

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, cs: f64, sn: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = cs * x - sn * y;
        m[(i, q)] = sn * x + cs * y;
    }
}

fn sym_eigen(s: &DMatrix<f64>, context: &'static str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(s.clone(), f64::EPSILON, MAX_SWEEPS).ok_or_else(|| {
        Error::NumericalFailure {
            context,
            matrix: s.clone(),
        }
    })
}

/// Moore-Penrose pseudo-inverse by SVD.
pub fn pinv(m: &DMatrix<f64>, rank_tol: RankTol) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let dec = svd(m, "pinv")?;
    let cutoff = rank_tol.cutoff(rows, cols, dec.s.max());

    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in dec.s.iter().enumerate() {
        if s > cutoff {
            out += (dec.v.column(k) * dec.u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(s: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() != s.ncols() || s.nrows() == 0 {
        return Err(contract(format!(
            "min_eig_sym needs a non-empty square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(sym_eigen(s, "min_eig_sym")?.eigenvalues.min())
}

/// `min_eig_sym(s) >= -tol`.
pub fn psd(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(min_eig_sym(s)? >= -tol)
}

/// Smallest eigenvalue together with a unit eigenvector for it.
pub(crate) fn min_eigenpair(s: &DMatrix<f64>) -> Result<(f64, nalgebra::DVector<f64>)> {
    let eig = sym_eigen(s, "min_eigenpair")?;
    let idx = eig.eigenvalues.imin();
    Ok((eig.eigenvalues[idx], eig.eigenvectors.column(idx).into_owned()))
}

/// Orthonormal basis (as columns) of `Ker(m)`.
///
/// The basis holds the right singular vectors whose singular values fall at or
/// below the rank cutoff; a matrix with full column rank yields zero columns.
pub fn kernel_basis(m: &DMatrix<f64>, rank_tol: RankTol) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let dec = svd(m, "kernel_basis")?;
    let cutoff = rank_tol.cutoff(rows, cols, dec.s.max());
    let null: Vec<usize> = (0..cols).filter(|&k| dec.s[k] <= cutoff).collect();
    Ok(dec.v.select_columns(&null))
}

/// True iff `||T v|| <= tol` for every kernel basis vector `v` of `m` and every target `T`.
pub fn kernel_included(
    m: &DMatrix<f64>,
    targets: &[&DMatrix<f64>],
    rank_tol: RankTol,
    tol: f64,
) -> Result<bool> {
    for (i, t) in targets.iter().enumerate() {
        if t.ncols() != m.ncols() {
            return Err(contract(format!(
                "kernel_included: target {i} has {} columns, matrix has {}",
                t.ncols(),
                m.ncols()
            )));
        }
    }
    let basis = kernel_basis(m, rank_tol)?;
    for v in basis.column_iter() {
        for t in targets {
            if (*t * v).norm() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Unique PSD square root. Eigenvalues in `[-tol, 0)` are clamped to zero.
pub fn sqrt_psd(s: &SymMatrix, tol: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(s, "sqrt_psd")?;
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPsd { min_eig: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(SymMatrix::symmetrize(
        v * DMatrix::from_diagonal(&roots) * v.transpose(),
    ))
}

/// Column-major vectorization.
pub fn vec_of(x: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec_of`] for an `n x n` matrix.
pub fn unvec(v: &nalgebra::DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Matrix of `X -> A X + X A' + C X C'` acting on column-major `vec(X)`,
/// i.e. `I (x) A + A (x) I + C (x) C`.
pub fn moment_lift(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || c_cl.shape() != (n, n) {
        return Err(contract(format!(
            "moment_lift needs square A and C of equal size, got {:?} and {:?}",
            a_cl.shape(),
            c_cl.shape()
        )));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    Ok(eye.kronecker(a_cl) + a_cl.kronecker(&eye) + c_cl.kronecker(c_cl))
}
