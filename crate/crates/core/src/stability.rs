//! Mean-square stability, exact detectability and Lyapunov-decrease checks.
//!
//! The second moment `X(t) = E[x x']` of `dx = A x dt + C x dw` obeys
//! `dX/dt = A X + X A' + C X C'`; its matrix on `vec(X)` is
//! [`moment_lift`](crate::matops::moment_lift). Mean-square stability is a
//! negative spectral abscissa of that matrix.
//!
//! Exact detectability of `(A, C, Q^{1/2})` is decided with the stochastic
//! PBH-type test: the triple is detectable iff no symmetric eigen-matrix `X`
//! of the moment operator with `Re λ >= -tol` satisfies `Q^{1/2} X = 0`.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{contract, Error, Result};
use crate::lmi::ShiftedWeights;
use crate::matops::{moment_lift, sqrt_psd, svd, sup_norm, RankTol, SymMatrix};
use crate::model::{check_gain, check_square, SystemModel};
use crate::riccati::closedloop_data;

const MAX_SWEEPS: usize = 10_000;

/// Relative tolerance on the closed-loop rewrite used by [`detectability_preserved`].
const CLOSED_LOOP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// Largest real part among the moment-operator eigenvalues.
    pub spectral_abscissa: f64,
    pub stable: bool,
    /// `-spectral_abscissa` when stable, otherwise zero.
    pub decay_rate: f64,
}

/// An eigen-matrix of the moment operator that is not mean-square decaying and
/// is invisible to the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub eigenvalue: Complex64,
    /// Complex symmetric, unit Frobenius norm.
    pub matrix: DMatrix<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    pub detectable: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

fn eigenvalues(m: &DMatrix<f64>, context: &'static str) -> Result<Vec<Complex64>> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS).ok_or_else(|| Error::NumericalFailure {
        context,
        matrix: m.clone(),
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn mean_square_stable(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> Result<StabilityReport> {
    let lift = moment_lift(a_cl, c_cl)?;
    let spectral_abscissa = eigenvalues(&lift, "mean_square_stable")?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let stable = spectral_abscissa < 0.0;
    Ok(StabilityReport {
        spectral_abscissa,
        stable,
        decay_rate: if stable { -spectral_abscissa } else { 0.0 },
    })
}

pub fn exact_detectable(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_half: &DMatrix<f64>,
    tol: f64,
) -> Result<DetectabilityReport> {
    unobserved_mode(a, c, q_half, tol, false)
}

/// Exact observability: the detectability test with every eigenvalue examined.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn exact_observable(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_half: &DMatrix<f64>,
    tol: f64,
) -> Result<DetectabilityReport> {
    unobserved_mode(a, c, q_half, tol, true)
}

fn unobserved_mode(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_half: &DMatrix<f64>,
    tol: f64,
    all_modes: bool,
) -> Result<DetectabilityReport> {
    let n = a.nrows();
    check_square("q_half", q_half, n)?;
    let lift = moment_lift(a, c)?;
    let scale = sup_norm(&lift).max(1.0);
    let cluster_tol = 1e-8 * scale;

    // Eigenvalues come in conjugate pairs with conjugate eigen-matrices; one of
    // each pair suffices.
    let mut lambdas: Vec<Complex64> = eigenvalues(&lift, "exact_detectable")?
        .into_iter()
        .filter(|l| (all_modes || l.re >= -tol) && l.im >= -cluster_tol)
        .collect();
    lambdas.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    let mut clusters: Vec<Complex64> = Vec::new();
    for l in lambdas {
        if !clusters.iter().any(|c| (c - l).norm() <= cluster_tol) {
            clusters.push(if l.im.abs() <= cluster_tol { Complex64::new(l.re, 0.0) } else { l });
        }
    }

    for lambda in clusters {
        if let Some(witness) = unobserved_eigenmatrix(&lift, q_half, lambda, scale, tol)? {
            return Ok(DetectabilityReport {
                detectable: false,
                witness: Some(witness),
            });
        }
    }
    Ok(DetectabilityReport {
        detectable: true,
        witness: None,
    })
}

/// Real form of `L - λI` on `(Re vec X, Im vec X)`.
fn real_embedding(lift: &DMatrix<f64>, lambda: Complex64) -> DMatrix<f64> {
    let nn = lift.nrows();
    let shifted = lift - DMatrix::<f64>::identity(nn, nn) * lambda.re;
    let eye_im = DMatrix::<f64>::identity(nn, nn) * lambda.im;
    let mut e = DMatrix::zeros(2 * nn, 2 * nn);
    e.view_mut((0, 0), (nn, nn)).copy_from(&shifted);
    e.view_mut((nn, nn), (nn, nn)).copy_from(&shifted);
    e.view_mut((0, nn), (nn, nn)).copy_from(&eye_im);
    e.view_mut((nn, 0), (nn, nn)).copy_from(&(-eye_im));
    e
}

fn symmetric_part(v: &[f64], n: usize) -> DMatrix<f64> {
    let x = DMatrix::from_column_slice(n, n, v);
    (&x + x.transpose()) * 0.5
}

/// Look for `X = X'`, `X != 0`, in the eigenspace of `lambda` with `q_half X = 0`.
///
/// Works on real pairs `(Re X, Im X)`; every step is real-linear, so the
/// smallest singular value of the output map over the (real) symmetric
/// eigenspace equals the complex one.
fn unobserved_eigenmatrix(
    lift: &DMatrix<f64>,
    q_half: &DMatrix<f64>,
    lambda: Complex64,
    scale: f64,
    tol: f64,
) -> Result<Option<Witness>> {
    let n = q_half.nrows();
    let nn = n * n;
    let dec = svd(&real_embedding(lift, lambda), "eigenspace")?;
    // Numerical null vectors; the smallest is always kept because λ itself
    // carries rounding error.
    let null_tol = (1e-7 * scale).max(2.0 * dec.s.min());

    let mut sym_parts: Vec<DVector<f64>> = Vec::new();
    for k in (0..2 * nn).filter(|&k| dec.s[k] <= null_tol) {
        let v = dec.v.column(k);
        let xr = symmetric_part(&v.as_slice()[..nn], n);
        let xi = symmetric_part(&v.as_slice()[nn..], n);
        if (xr.norm_squared() + xi.norm_squared()).sqrt() > 1e-6 {
            let mut w = DVector::zeros(2 * nn);
            w.rows_mut(0, nn).copy_from_slice(xr.as_slice());
            w.rows_mut(nn, nn).copy_from_slice(xi.as_slice());
            sym_parts.push(w);
        }
    }
    if sym_parts.is_empty() {
        return Ok(None);
    }

    // Orthonormal basis of the symmetric eigen-matrices.
    let span = DMatrix::from_columns(&sym_parts);
    let span_dec = svd(&span, "eigenspace basis")?;
    let span_cut = 1e-8 * span_dec.s.max();
    let basis: Vec<usize> = (0..span.ncols()).filter(|&j| span_dec.s[j] > span_cut).collect();
    let basis = span_dec.u.select_columns(&basis);

    // Smallest output gain over unit combinations of the basis.
    let mut outputs = DMatrix::zeros(2 * nn, basis.ncols());
    for (j, g) in basis.column_iter().enumerate() {
        let xr = DMatrix::from_column_slice(n, n, &g.as_slice()[..nn]);
        let xi = DMatrix::from_column_slice(n, n, &g.as_slice()[nn..]);
        outputs.view_mut((0, j), (nn, 1)).copy_from_slice((q_half * xr).as_slice());
        outputs.view_mut((nn, j), (nn, 1)).copy_from_slice((q_half * xi).as_slice());
    }
    let out_dec = svd(&outputs, "output map")?;
    let k = basis.ncols() - 1;
    if out_dec.s[k] > tol {
        return Ok(None);
    }
    let w = &basis * out_dec.v.column(k);
    let matrix = DMatrix::from_fn(n, n, |i, j| Complex64::new(w[i + j * n], w[nn + i + j * n]));
    let norm = matrix.norm();
    Ok(Some(Witness {
        eigenvalue: lambda,
        matrix: matrix / Complex64::new(norm, 0.0),
    }))
}

/// RK4 propagation of `dX/dt = A X + X A' + C X C'` from `X(0) = x0 x0'`.
///
/// Returns the grid `0, dt, ..., t_end` and `X` on it.
pub fn second_moment_trajectory(
    a_cl: &DMatrix<f64>,
    c_cl: &DMatrix<f64>,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    let n = a_cl.nrows();
    check_square("A_cl", a_cl, n)?;
    check_square("C_cl", c_cl, n)?;
    if x0.len() != n {
        return Err(contract(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(contract(format!("need dt > 0 and t_end >= 0, got dt {dt}, t_end {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    let f = |x: &DMatrix<f64>| a_cl * x + x * a_cl.transpose() + c_cl * x * c_cl.transpose();

    let mut grid = Vec::with_capacity(steps + 1);
    let mut moments = Vec::with_capacity(steps + 1);
    let mut x = x0 * x0.transpose();
    for k in 0..=steps {
        grid.push(k as f64 * dt);
        moments.push(x.clone());
        if k == steps {
            break;
        }
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (0.5 * dt)));
        let k3 = f(&(&x + &k2 * (0.5 * dt)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok((grid, moments))
}

/// `V(t) = trace(Z X(t))` along the closed loop `u = K x`, `X` the exact second moment.
pub fn lyapunov_trace(
    model: &SystemModel,
    gain: &DMatrix<f64>,
    z_matrix: &SymMatrix,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
) -> Result<LyapunovTrace> {
    check_gain(gain, model)?;
    check_square("Z", z_matrix, model.n())?;
    let z_min = crate::matops::min_eig_sym(z_matrix)?;
    if z_min < -1e-8 * sup_norm(z_matrix).max(1.0) {
        return Err(Error::NotPsd { min_eig: z_min });
    }
    let a_cl = &model.a + &model.b * gain;
    let c_cl = &model.c + &model.d * gain;
    let (grid, moments) = second_moment_trajectory(&a_cl, &c_cl, x0, dt, t_end)?;
    let values = moments.iter().map(|x| (z_matrix.as_matrix() * x).trace()).collect();
    Ok(LyapunovTrace { grid, values })
}

/// Detectability of the closed-loop triple `(A_cl, C_cl, Q_cl^{1/2})`, given that
/// `(A, C, Q_P^{1/2})` is detectable. A `false` signals a numerical inconsistency.
pub fn detectability_preserved(
    model: &SystemModel,
    shifted: &ShiftedWeights,
    z_bar: &SymMatrix,
    tol: f64,
) -> Result<bool> {
    let q_half = sqrt_psd(&shifted.q_shift, 1e-8 * sup_norm(&shifted.q_shift).max(1.0))?;
    if !exact_detectable(&model.a, &model.c, &q_half, tol)?.detectable {
        return Err(contract("(A, C, Q_P^1/2) is not exactly detectable"));
    }
    let cl = closedloop_data(model, shifted, z_bar, RankTol::Auto, CLOSED_LOOP_TOL)?;
    let q_cl_half = sqrt_psd(&cl.q_cl, 1e-8 * sup_norm(&cl.q_cl).max(1.0))?;
    Ok(exact_detectable(&cl.a_cl, &cl.c_cl, &q_cl_half, tol)?.detectable)
}
