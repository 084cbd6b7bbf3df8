//! The candidate set of symmetric matrices `P` for which
//!
//! ```text
//! [ A'P + PA + C'PC + Q   PB + C'PD ]
//! [ B'P + D'PC            R + D'PD  ]  >= 0,    Ker(R + D'PD) ⊆ Ker B ∩ Ker D
//! ```
//!
//! together with the shifted weights built from a member, and a first-order
//! search for a member.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::matops::{kernel_included, min_eig_sym, min_eigenpair, RankTol, SymMatrix};
use crate::model::{check_square, CostWeights, SystemModel};

/// A symmetric matrix tested for membership in the LMI set.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiCandidate {
    pub p_hat: SymMatrix,
}

impl LmiCandidate {
    pub fn new(p_hat: SymMatrix) -> Self {
        Self { p_hat }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(SymMatrix::zeros(n))
    }
}

/// `Q_P = A'P + PA + C'PC + Q`, `L_P = PB + C'PD`, `R_P = R + D'PD`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedWeights {
    pub q_shift: SymMatrix,
    pub l_shift: DMatrix<f64>,
    pub r_shift: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    /// Smallest eigenvalue of the LMI block.
    pub lmi_min_eig: f64,
    pub lmi_psd: bool,
    pub kernel_ok: bool,
    pub member: bool,
}

pub fn shifted_weights(
    model: &SystemModel,
    weights: &CostWeights,
    cand: &LmiCandidate,
) -> Result<ShiftedWeights> {
    weights.check_against(model)?;
    check_square("P_hat", &cand.p_hat, model.n())?;
    let p = cand.p_hat.as_matrix();
    let (a, b, c, d) = (&model.a, &model.b, &model.c, &model.d);

    let q_shift = a.transpose() * p + p * a + c.transpose() * p * c + weights.q.as_matrix();
    let l_shift = p * b + c.transpose() * p * d;
    let r_shift = weights.r.as_matrix() + d.transpose() * p * d;
    Ok(ShiftedWeights {
        q_shift: SymMatrix::symmetrize(q_shift),
        l_shift,
        r_shift: SymMatrix::symmetrize(r_shift),
    })
}

/// The `(n+m) x (n+m)` LMI block `[[Q_P, L_P], [L_P', R_P]]`.
pub fn lmi_block(
    model: &SystemModel,
    weights: &CostWeights,
    cand: &LmiCandidate,
) -> Result<SymMatrix> {
    let sw = shifted_weights(model, weights, cand)?;
    let (n, m) = (model.n(), model.m());
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(sw.q_shift.as_matrix());
    block.view_mut((0, n), (n, m)).copy_from(&sw.l_shift);
    block.view_mut((n, 0), (m, n)).copy_from(&sw.l_shift.transpose());
    block.view_mut((n, n), (m, m)).copy_from(sw.r_shift.as_matrix());
    Ok(SymMatrix::symmetrize(block))
}

pub fn membership(
    model: &SystemModel,
    weights: &CostWeights,
    cand: &LmiCandidate,
    rank_tol: RankTol,
    tol: f64,
) -> Result<MembershipReport> {
    let block = lmi_block(model, weights, cand)?;
    let lmi_min_eig = min_eig_sym(&block)?;
    let lmi_psd = lmi_min_eig >= -tol;
    let r_shift = weights.r.as_matrix() + model.d.transpose() * cand.p_hat.as_matrix() * &model.d;
    let kernel_ok = kernel_included(&r_shift, &[&model.b, &model.d], rank_tol, tol)?;
    Ok(MembershipReport {
        lmi_min_eig,
        lmi_psd,
        kernel_ok,
        member: lmi_psd && kernel_ok,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityOptions {
    pub max_iter: usize,
    /// Initial ascent step; iteration `k` after a (re)start uses `step / sqrt(k + 1)`.
    pub step: f64,
    /// Membership tolerance on the smallest LMI eigenvalue.
    pub tol: f64,
    /// The search stops early once the smallest LMI eigenvalue reaches this value.
    pub margin: f64,
    /// Iterations without improvement before restarting from a perturbed best point.
    pub stall_window: usize,
    pub seed: u64,
    pub rank_tol: RankTol,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            step: 1.0,
            tol: 1e-8,
            margin: 1e-3,
            stall_window: 500,
            seed: 0,
            rank_tol: RankTol::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleReport {
    pub best: LmiCandidate,
    pub best_min_eig: f64,
    pub kernel_ok: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityOutcome {
    Feasible {
        candidate: LmiCandidate,
        report: MembershipReport,
        iterations: usize,
    },
    Infeasible(InfeasibleReport),
}

impl FeasibilityOutcome {
    pub fn candidate(&self) -> Option<&LmiCandidate> {
        match self {
            FeasibilityOutcome::Feasible { candidate, .. } => Some(candidate),
            FeasibilityOutcome::Infeasible(_) => None,
        }
    }
}

/// Subgradient of `P -> v' block(P) v` with `v = (x, u)`:
/// `(Ax + Bu) x' + x (Ax + Bu)' + (Cx + Du)(Cx + Du)'`.
fn block_subgradient(model: &SystemModel, v: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    let n = model.n();
    let x = v.rows(0, n);
    let u = v.rows(n, model.m());
    let drift = &model.a * x + &model.b * u;
    let diffusion = &model.c * x + &model.d * u;
    &drift * x.transpose() + x * drift.transpose() + &diffusion * diffusion.transpose()
}

/// Search for a member of the LMI set by projected subgradient ascent on the
/// smallest eigenvalue of the LMI block, starting at `P = 0`.
///
/// The kernel condition is verified on the returned point. Restarts after a
/// stall perturb the best point with a `ChaCha8` stream seeded by `opts.seed`.
pub fn find_feasible(
    model: &SystemModel,
    weights: &CostWeights,
    opts: &FeasibilityOptions,
) -> Result<FeasibilityOutcome> {
    let n = model.n();
    let start = LmiCandidate::zero(n);
    let report = membership(model, weights, &start, opts.rank_tol, opts.tol)?;
    if report.member {
        return Ok(FeasibilityOutcome::Feasible {
            candidate: start,
            report,
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = start.p_hat.as_matrix().clone();
    let mut best_val = report.lmi_min_eig;
    let mut current = best.clone();
    let mut since_restart = 0usize;
    let mut since_improve = 0usize;

    for it in 1..=opts.max_iter {
        let cand = LmiCandidate::new(SymMatrix::symmetrize(current.clone()));
        let block = lmi_block(model, weights, &cand)?;
        let (lambda, v) = min_eigenpair(&block)?;

        if lambda > best_val {
            best_val = lambda;
            best.copy_from(&current);
            since_improve = 0;
        } else {
            since_improve += 1;
        }

        if lambda >= opts.margin {
            let report = membership(model, weights, &cand, opts.rank_tol, opts.tol)?;
            if report.member {
                return Ok(FeasibilityOutcome::Feasible {
                    candidate: cand,
                    report,
                    iterations: it,
                });
            }
        }

        let g = SymMatrix::symmetrize(block_subgradient(model, &v)).into_inner();
        let g_norm = g.norm();
        if g_norm == 0.0 || since_improve >= opts.stall_window {
            let noise = DMatrix::from_fn(n, n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * opts.step
            });
            current = SymMatrix::symmetrize(&best + noise).into_inner();
            since_restart = 0;
            since_improve = 0;
            continue;
        }

        let alpha = opts.step / ((since_restart + 1) as f64).sqrt();
        current += g * (alpha / g_norm);
        since_restart += 1;
    }

    let best = LmiCandidate::new(SymMatrix::symmetrize(best));
    let report = membership(model, weights, &best, opts.rank_tol, opts.tol)?;
    if report.member {
        Ok(FeasibilityOutcome::Feasible {
            candidate: best,
            report,
            iterations: opts.max_iter,
        })
    } else {
        Ok(FeasibilityOutcome::Infeasible(InfeasibleReport {
            best,
            best_min_eig: report.lmi_min_eig,
            kernel_ok: report.kernel_ok,
            iterations: opts.max_iter,
        }))
    }
}
