//! Generalized Riccati equations with pseudo-inverse and range constraints.
//!
//! All equations share the form
//!
//! ```text
//! F(X) = A'X + XA + C'XC + Q~ - (XB + C'XD + L~)(R~ + D'XD)^† (B'X + D'XC + L~')
//! ```
//!
//! with `(Q~, L~, R~) = (Q, 0, R)` for the GDRE/GARE and the shifted weights of a
//! member `P^` of the LMI set for the SDRE/SARE. The differential equations read
//! `dX/dt = -F(X)` and are integrated backward from the terminal time with
//! fixed-step RK4, which keeps the constraint log on a deterministic grid.
//!
//! Constraint checks are scaled: `min eig(Ω) >= -psd_tol * max(1, |Ω|)` and
//! `|(I - ΩΩ^†) M'| <= reg_tol * max(1, |M|)`, with `|.|` the largest absolute
//! entry. Logged diagnostics are the raw values.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lmi::{shifted_weights, LmiCandidate, ShiftedWeights};
use crate::matops::{min_eig_sym, pinv, sup_norm, RankTol, SymMatrix};
use crate::model::{check_square, CostWeights, SystemModel};

/// Blow-up guard for the backward integration.
const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub psd_tol: f64,
    pub reg_tol: f64,
    pub rank_tol: RankTol,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd_tol: 1e-8,
            reg_tol: 1e-7,
            rank_tol: RankTol::Auto,
        }
    }
}

/// Per-stamp constraint diagnostics: `min eig(Ω)` and `|(I - ΩΩ^†)(B'X + D'XC + L~')|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintDiag {
    pub omega_min_eig: f64,
    pub reg_defect: f64,
}

/// A backward-integrated Riccati trajectory. Stamps run from `T` down to `T - horizon`.
#[derive(Debug, Clone)]
pub struct GdreSolution {
    pub grid: Vec<f64>,
    pub p_of_t: Vec<SymMatrix>,
    pub k_of_t: Vec<DMatrix<f64>>,
    pub constraint_log: Vec<ConstraintDiag>,
}

impl GdreSolution {
    /// Value at the earliest stamp.
    pub fn initial(&self) -> &SymMatrix {
        self.p_of_t.last().expect("solution has at least one stamp")
    }

    pub fn terminal_time(&self) -> f64 {
        self.grid[0]
    }

    pub fn initial_time(&self) -> f64 {
        *self.grid.last().expect("solution has at least one stamp")
    }
}

#[derive(Debug, Clone)]
pub struct GareSolution {
    pub p_bar: SymMatrix,
    pub k_gain: DMatrix<f64>,
    pub z_bar: SymMatrix,
    pub p_hat_used: LmiCandidate,
    pub residual: f64,
    pub regularity_defect: f64,
    pub omega_min_eig: f64,
    /// RK4 steps taken.
    pub iterations: usize,
    /// Backward horizon reached when the convergence test passed.
    pub horizon: f64,
    /// Last trailing-window difference.
    pub window_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GareResidual {
    pub res: f64,
    pub reg_defect: f64,
    pub omega_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GareOptions {
    pub conv_tol: f64,
    pub step: f64,
    /// First horizon limit; doubled until `max_horizon`.
    pub initial_horizon: f64,
    pub max_horizon: f64,
    /// Length of the trailing window for the convergence test.
    pub window: f64,
    pub tols: Tolerances,
}

impl Default for GareOptions {
    fn default() -> Self {
        Self {
            conv_tol: 1e-9,
            step: 1e-3,
            initial_horizon: 50.0,
            max_horizon: 6400.0,
            window: 1.0,
            tols: Tolerances::default(),
        }
    }
}

/// `(A_cl, C_cl, Q_cl, K)` of the closed loop under `K = -Ω_P^† M_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopData {
    pub a_cl: DMatrix<f64>,
    pub c_cl: DMatrix<f64>,
    pub q_cl: SymMatrix,
    pub k_shift: DMatrix<f64>,
}

/// Weights of one member of the equation family.
struct Family<'a> {
    model: &'a SystemModel,
    q: &'a DMatrix<f64>,
    l: Option<&'a DMatrix<f64>>,
    r: &'a DMatrix<f64>,
    rank_tol: RankTol,
}

struct Evaluation {
    value: DMatrix<f64>,
    gain: DMatrix<f64>,
    /// `B'X + D'XC + L~'` (m x n).
    m_mat: DMatrix<f64>,
    omega: DMatrix<f64>,
    omega_pinv: DMatrix<f64>,
}

impl Evaluation {
    fn diag(&self) -> Result<ConstraintDiag> {
        let m = self.omega.nrows();
        let proj = DMatrix::<f64>::identity(m, m) - &self.omega * &self.omega_pinv;
        Ok(ConstraintDiag {
            omega_min_eig: min_eig_sym(&self.omega)?,
            reg_defect: sup_norm(&(proj * &self.m_mat)),
        })
    }

    fn violates(&self, d: &ConstraintDiag, tols: &Tolerances) -> bool {
        let psd_scale = sup_norm(&self.omega).max(1.0);
        let reg_scale = sup_norm(&self.m_mat).max(1.0);
        d.omega_min_eig < -tols.psd_tol * psd_scale || d.reg_defect > tols.reg_tol * reg_scale
    }
}

impl<'a> Family<'a> {
    fn plain(model: &'a SystemModel, weights: &'a CostWeights, rank_tol: RankTol) -> Self {
        Self {
            model,
            q: weights.q.as_matrix(),
            l: None,
            r: weights.r.as_matrix(),
            rank_tol,
        }
    }

    fn shifted(model: &'a SystemModel, sw: &'a ShiftedWeights, rank_tol: RankTol) -> Self {
        Self {
            model,
            q: sw.q_shift.as_matrix(),
            l: Some(&sw.l_shift),
            r: sw.r_shift.as_matrix(),
            rank_tol,
        }
    }

    fn eval(&self, x: &DMatrix<f64>) -> Result<Evaluation> {
        let SystemModel { a, b, c, d } = self.model;
        let xd = x * d;
        let mut m_mat = b.transpose() * x + xd.transpose() * c;
        if let Some(l) = self.l {
            m_mat += l.transpose();
        }
        let omega = self.r + d.transpose() * &xd;
        let omega_pinv = pinv(&omega, self.rank_tol)?;
        let gain = -(&omega_pinv * &m_mat);
        let xa = x * a;
        let value = xa.transpose() + &xa + c.transpose() * x * c + self.q + m_mat.transpose() * &gain;
        Ok(Evaluation {
            value: (&value + value.transpose()) * 0.5,
            gain,
            m_mat,
            omega,
            omega_pinv,
        })
    }

    /// One RK4 step of `dX/dτ = F(X)` (τ = T - t). Returns the new state.
    fn rk4(&self, x: &DMatrix<f64>, h: f64, k1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k2 = self.eval(&(x + k1 * (0.5 * h)))?.value;
        let k3 = self.eval(&(x + &k2 * (0.5 * h)))?.value;
        let k4 = self.eval(&(x + &k3 * h))?.value;
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        Ok((&next + next.transpose()) * 0.5)
    }
}

fn uniform_steps(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(crate::error::contract(format!("step must be positive, got {step}")));
    }
    if !(horizon >= step) || !horizon.is_finite() {
        return Err(crate::error::contract(format!(
            "horizon must be finite and >= step, got horizon {horizon}, step {step}"
        )));
    }
    let count = (horizon / step).round().max(1.0) as usize;
    Ok((count, horizon / count as f64))
}

/// Right-hand side of the GDRE as a time derivative: `dP/dt = -F(P)`.
pub fn gdre_rhs(
    model: &SystemModel,
    weights: &CostWeights,
    p: &SymMatrix,
    rank_tol: RankTol,
) -> Result<(SymMatrix, ConstraintDiag)> {
    weights.check_against(model)?;
    check_square("P", p, model.n())?;
    let ev = Family::plain(model, weights, rank_tol).eval(p)?;
    let diag = ev.diag()?;
    Ok((SymMatrix::symmetrize(-ev.value), diag))
}

/// `-(R + D'PD)^† (B'P + D'PC)`.
pub fn finite_gain(
    model: &SystemModel,
    weights: &CostWeights,
    p: &SymMatrix,
    rank_tol: RankTol,
) -> Result<DMatrix<f64>> {
    weights.check_against(model)?;
    check_square("P", p, model.n())?;
    Ok(Family::plain(model, weights, rank_tol).eval(p)?.gain)
}

pub fn gare_residual(
    model: &SystemModel,
    weights: &CostWeights,
    p: &SymMatrix,
    rank_tol: RankTol,
) -> Result<GareResidual> {
    weights.check_against(model)?;
    check_square("P", p, model.n())?;
    let ev = Family::plain(model, weights, rank_tol).eval(p)?;
    let diag = ev.diag()?;
    Ok(GareResidual {
        res: sup_norm(&ev.value),
        reg_defect: diag.reg_defect,
        omega_min: diag.omega_min_eig,
    })
}

/// Backward RK4 integration of the GDRE from `P(T) = terminal`, with `T = horizon`.
pub fn integrate_gdre(
    model: &SystemModel,
    weights: &CostWeights,
    terminal: &SymMatrix,
    horizon: f64,
    step: f64,
    tols: &Tolerances,
) -> Result<GdreSolution> {
    weights.check_against(model)?;
    check_square("terminal", terminal, model.n())?;
    let family = Family::plain(model, weights, tols.rank_tol);
    integrate(&family, terminal.as_matrix().clone(), horizon, step, tols, false)
}

/// Backward RK4 integration of the SDRE from `Z(T, T) = 0`, with `T = horizon`.
///
/// Every stamp must satisfy the regularity condition, `Ω_P >= 0` and `Z >= 0`
/// within tolerance.
pub fn integrate_sdre(
    model: &SystemModel,
    shifted: &ShiftedWeights,
    horizon: f64,
    step: f64,
    tols: &Tolerances,
) -> Result<GdreSolution> {
    check_shifted(model, shifted)?;
    let family = Family::shifted(model, shifted, tols.rank_tol);
    integrate(&family, DMatrix::zeros(model.n(), model.n()), horizon, step, tols, true)
}

fn check_shifted(model: &SystemModel, sw: &ShiftedWeights) -> Result<()> {
    check_square("Q_P", &sw.q_shift, model.n())?;
    check_square("R_P", &sw.r_shift, model.m())?;
    if sw.l_shift.shape() != (model.n(), model.m()) {
        return Err(crate::error::contract(format!(
            "L_P must be {}x{}, got {:?}",
            model.n(),
            model.m(),
            sw.l_shift.shape()
        )));
    }
    Ok(())
}

fn breakdown(time: f64, diag: ConstraintDiag, z_min_eig: Option<f64>) -> Error {
    match z_min_eig {
        Some(z_min_eig) => Error::SdreBreakdown {
            time,
            min_eig: diag.omega_min_eig,
            reg_defect: diag.reg_defect,
            z_min_eig,
        },
        None => Error::GdreBreakdown {
            time,
            min_eig: diag.omega_min_eig,
            reg_defect: diag.reg_defect,
        },
    }
}

/// Check one accepted stamp. `check_z` adds the `Z >= 0` requirement of the SDRE.
fn accept(
    ev: &Evaluation,
    x: &DMatrix<f64>,
    time: f64,
    tols: &Tolerances,
    check_z: bool,
) -> Result<ConstraintDiag> {
    let diag = ev.diag()?;
    let z_min = if check_z { Some(min_eig_sym(x)?) } else { None };
    let z_bad = z_min.is_some_and(|zm| zm < -tols.psd_tol * sup_norm(x).max(1.0));
    if ev.violates(&diag, tols) || z_bad {
        return Err(breakdown(time, diag, z_min));
    }
    Ok(diag)
}

fn integrate(
    family: &Family<'_>,
    terminal: DMatrix<f64>,
    horizon: f64,
    step: f64,
    tols: &Tolerances,
    shifted: bool,
) -> Result<GdreSolution> {
    let (count, h) = uniform_steps(horizon, step)?;
    let mut grid = Vec::with_capacity(count + 1);
    let mut p_of_t = Vec::with_capacity(count + 1);
    let mut k_of_t = Vec::with_capacity(count + 1);
    let mut constraint_log = Vec::with_capacity(count + 1);

    let mut x = terminal;
    for k in 0..=count {
        let time = horizon - k as f64 * h;
        let ev = family.eval(&x)?;
        let diag = accept(&ev, &x, time, tols, shifted)?;
        if !x.iter().all(|v| v.is_finite()) || sup_norm(&x) > DIVERGENCE_NORM {
            return Err(Error::NonConvergence {
                horizon: horizon - time,
                last_diff: f64::INFINITY,
            });
        }
        grid.push(time.max(0.0));
        p_of_t.push(SymMatrix::symmetrize(x.clone()));
        k_of_t.push(ev.gain.clone());
        constraint_log.push(diag);
        if k < count {
            x = family.rk4(&x, h, &ev.value)?;
        }
    }
    Ok(GdreSolution {
        grid,
        p_of_t,
        k_of_t,
        constraint_log,
    })
}

/// Maximal GARE solution as the limit of the SDRE started from a member `cand`
/// of the LMI set: `P = Z + P^`.
///
/// The horizon grows until the sup-norm change of `Z` over one trailing window
/// drops below `conv_tol`, or `max_horizon` is exhausted.
pub fn solve_gare(
    model: &SystemModel,
    weights: &CostWeights,
    cand: &LmiCandidate,
    opts: &GareOptions,
) -> Result<GareSolution> {
    let sw = shifted_weights(model, weights, cand)?;
    let tols = &opts.tols;
    let family = Family::shifted(model, &sw, tols.rank_tol);
    let (per_window, h) = uniform_steps(opts.window, opts.step)?;

    let n = model.n();
    let mut z = DMatrix::zeros(n, n);
    let mut checkpoint = z.clone();
    let mut limit = opts.initial_horizon.min(opts.max_horizon);
    let mut steps = 0usize;
    let mut windows = 0usize;
    let mut last_diff = f64::INFINITY;

    loop {
        for _ in 0..per_window {
            let time = -(steps as f64) * h;
            let ev = family.eval(&z)?;
            accept(&ev, &z, time, tols, true)?;
            z = family.rk4(&z, h, &ev.value)?;
            steps += 1;
            if !z.iter().all(|v| v.is_finite()) || sup_norm(&z) > DIVERGENCE_NORM {
                return Err(Error::NonConvergence {
                    horizon: steps as f64 * h,
                    last_diff,
                });
            }
        }
        windows += 1;
        let tau = windows as f64 * opts.window;
        last_diff = sup_norm(&(&z - &checkpoint));
        checkpoint.copy_from(&z);
        if last_diff < opts.conv_tol {
            break;
        }
        if tau >= limit - 1e-9 {
            if limit >= opts.max_horizon {
                return Err(Error::NonConvergence {
                    horizon: tau,
                    last_diff,
                });
            }
            limit = (2.0 * limit).min(opts.max_horizon);
        }
    }

    let ev = family.eval(&z)?;
    accept(&ev, &z, -(steps as f64) * h, tols, true)?;

    let z_bar = SymMatrix::symmetrize(z);
    let p_bar = SymMatrix::symmetrize(z_bar.as_matrix() + cand.p_hat.as_matrix());
    let k_gain = finite_gain(model, weights, &p_bar, tols.rank_tol)?;
    let resid = gare_residual(model, weights, &p_bar, tols.rank_tol)?;
    Ok(GareSolution {
        p_bar,
        k_gain,
        z_bar,
        p_hat_used: cand.clone(),
        residual: resid.res,
        regularity_defect: resid.reg_defect,
        omega_min_eig: resid.omega_min,
        iterations: steps,
        horizon: windows as f64 * opts.window,
        window_diff: last_diff,
    })
}

/// Closed-loop rewrite of the SARE at `z_bar`:
/// `K = -Ω_P^† M_P`, `A_cl = A + BK`, `C_cl = C + DK`,
/// `Q_cl = Q_P + L_P K + K' L_P' + K' R_P K`, so that
/// `A_cl' Z + Z A_cl + C_cl' Z C_cl + Q_cl = 0`.
///
/// Fails with [`Error::Inconsistency`] if that identity or `Q_cl >= 0` is off by
/// more than `tol * max(1, |Z|)`.
pub fn closedloop_data(
    model: &SystemModel,
    shifted: &ShiftedWeights,
    z_bar: &SymMatrix,
    rank_tol: RankTol,
    tol: f64,
) -> Result<ClosedLoopData> {
    check_shifted(model, shifted)?;
    check_square("Z", z_bar, model.n())?;
    let family = Family::shifted(model, shifted, rank_tol);
    let ev = family.eval(z_bar)?;
    let k = ev.gain;
    let a_cl = &model.a + &model.b * &k;
    let c_cl = &model.c + &model.d * &k;
    let lk = &shifted.l_shift * &k;
    let q_cl = SymMatrix::symmetrize(
        shifted.q_shift.as_matrix() + &lk + lk.transpose() + k.transpose() * shifted.r_shift.as_matrix() * &k,
    );

    let z = z_bar.as_matrix();
    let lyap = a_cl.transpose() * z + z * &a_cl + c_cl.transpose() * z * &c_cl + q_cl.as_matrix();
    let scale = sup_norm(z).max(sup_norm(&shifted.q_shift)).max(1.0);
    let lyap_res = sup_norm(&lyap);
    if lyap_res > tol * scale {
        return Err(Error::Inconsistency {
            what: "closed-loop Lyapunov residual",
            value: lyap_res,
        });
    }
    let q_min = min_eig_sym(&q_cl)?;
    if q_min < -tol * scale {
        return Err(Error::Inconsistency {
            what: "min eig of closed-loop weight",
            value: q_min,
        });
    }
    Ok(ClosedLoopData {
        a_cl,
        c_cl,
        q_cl,
        k_shift: k,
    })
}
