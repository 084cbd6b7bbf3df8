//! `feasible`, `solve` and `simulate`.
//!
//! Each command returns a [`Report`] whose `exit_code` is the process exit
//! code. Only unreadable or invalid input surfaces as `Err`.

use std::path::{Path, PathBuf};

use ilq_core::lmi::shifted_weights;
use ilq_core::matops::{sqrt_psd, sup_norm};
use ilq_core::riccati::integrate_gdre;
use ilq_core::simulate::{estimate_cost_vs_value, simulate_closedloop};
use ilq_core::stability::{detectability_preserved, exact_detectable, mean_square_stable};
use ilq_core::{
    find_feasible, membership, solve_gare, Error, FeasibilityOptions, FeasibilityOutcome, Feedback, GareSolution,
    LmiCandidate,
};
use nalgebra::DMatrix;

use crate::problem::{matrix, rows_of, Problem, Rows};
use crate::report::{
    gdre_csv, trajectory_csv, DetectabilitySection, DivergenceInfo, FeasibilitySection, GdreSection, Report,
    SimulationSection, SolutionSection, StabilitySection,
};
use crate::{CliError, Outcome};

/// Null-space tolerance of the detectability eigen-test.
const DETECT_TOL: f64 = 1e-9;

/// Which feedback `simulate` applies.
#[derive(Debug, Clone, PartialEq)]
pub enum GainMode {
    Optimal,
    Zero,
    File(PathBuf),
}

impl std::str::FromStr for GainMode {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "optimal" => GainMode::Optimal,
            "zero" => GainMode::Zero,
            path => GainMode::File(PathBuf::from(path)),
        })
    }
}

impl std::fmt::Display for GainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GainMode::Optimal => f.write_str("optimal"),
            GainMode::Zero => f.write_str("zero"),
            GainMode::File(p) => write!(f, "{}", p.display()),
        }
    }
}

fn outcome_of(e: &Error) -> Outcome {
    match e {
        Error::ContractViolation(_) => Outcome::Invalid,
        Error::Unstable { .. } => Outcome::Unstable,
        Error::Divergence { .. } => Outcome::Divergence,
        _ => Outcome::Numerical,
    }
}

/// Records a failure; the first one decides the exit code.
fn fail(report: &mut Report, outcome: Outcome, message: impl Into<String>) {
    if report.exit_code != 0 {
        return;
    }
    report.status = outcome.status();
    report.exit_code = outcome.code();
    report.message = Some(message.into());
}

fn fail_with(report: &mut Report, e: &Error) {
    fail(report, outcome_of(e), e.to_string());
}

fn check_feasibility(problem: &Problem, report: &mut Report) -> Option<LmiCandidate> {
    let rank_tol = problem.tols.rank_tol;
    let tol = problem.tols.psd_tol;
    let result = match &problem.p_hat {
        Some(cand) => membership(&problem.model, &problem.weights, cand, rank_tol, tol).map(|r| {
            let section = FeasibilitySection {
                source: "supplied",
                feasible: r.member,
                candidate: rows_of(cand.p_hat.as_matrix()),
                lmi_min_eig: r.lmi_min_eig,
                kernel_ok: r.kernel_ok,
                iterations: None,
            };
            (section, r.member.then(|| cand.clone()))
        }),
        None => {
            let opts = FeasibilityOptions {
                tol,
                rank_tol,
                ..FeasibilityOptions::default()
            };
            find_feasible(&problem.model, &problem.weights, &opts).map(|out| match out {
                FeasibilityOutcome::Feasible {
                    candidate,
                    report,
                    iterations,
                } => (
                    FeasibilitySection {
                        source: "search",
                        feasible: true,
                        candidate: rows_of(candidate.p_hat.as_matrix()),
                        lmi_min_eig: report.lmi_min_eig,
                        kernel_ok: report.kernel_ok,
                        iterations: Some(iterations),
                    },
                    Some(candidate),
                ),
                FeasibilityOutcome::Infeasible(inf) => (
                    FeasibilitySection {
                        source: "search",
                        feasible: false,
                        candidate: rows_of(inf.best.p_hat.as_matrix()),
                        lmi_min_eig: inf.best_min_eig,
                        kernel_ok: inf.kernel_ok,
                        iterations: Some(inf.iterations),
                    },
                    None,
                ),
            })
        }
    };
    match result {
        Ok((section, cand)) => {
            if cand.is_none() {
                fail(report, Outcome::Infeasible, "no member of the LMI set was found");
            }
            report.feasibility = Some(section);
            cand
        }
        Err(e) => {
            fail_with(report, &e);
            None
        }
    }
}

pub fn feasible(problem: &Problem) -> Report {
    let mut report = Report::new("feasible", problem.file.clone());
    check_feasibility(problem, &mut report);
    report
}

/// Feasibility, GARE limit, detectability and stability. Returns the solution
/// whenever the GARE limit was found; later failures are recorded in `report`.
fn synthesize(problem: &Problem, report: &mut Report) -> Option<GareSolution> {
    let cand = check_feasibility(problem, report)?;
    let (model, weights) = (&problem.model, &problem.weights);
    let sol = match solve_gare(model, weights, &cand, &problem.gare) {
        Ok(sol) => sol,
        Err(e) => {
            fail_with(report, &e);
            return None;
        }
    };
    report.solution = Some(SolutionSection {
        p_bar: rows_of(sol.p_bar.as_matrix()),
        k_gain: rows_of(&sol.k_gain),
        z_bar: rows_of(sol.z_bar.as_matrix()),
        p_hat_used: rows_of(sol.p_hat_used.p_hat.as_matrix()),
        residual: sol.residual,
        regularity_defect: sol.regularity_defect,
        omega_min_eig: sol.omega_min_eig,
        horizon: sol.horizon,
        iterations: sol.iterations,
        window_diff: sol.window_diff,
    });
    if let Some(sim) = &problem.sim {
        report.value = Some(sol.p_bar.as_matrix().dot(&(&sim.x0 * sim.x0.transpose())));
    }

    let detect = (|| {
        let sw = shifted_weights(model, weights, &sol.p_hat_used)?;
        let scale = sup_norm(sw.q_shift.as_matrix()).max(1.0);
        let q_half = sqrt_psd(&sw.q_shift, problem.tols.psd_tol * scale)?;
        let open = exact_detectable(&model.a, &model.c, &q_half, DETECT_TOL)?;
        let closed = if open.detectable {
            Some(detectability_preserved(model, &sw, &sol.z_bar, DETECT_TOL)?)
        } else {
            None
        };
        Ok::<_, Error>(DetectabilitySection {
            open_loop: open.detectable,
            closed_loop: closed,
            witness_eigenvalue: open.witness.map(|w| [w.eigenvalue.re, w.eigenvalue.im]),
        })
    })();
    match detect {
        Ok(section) => report.detectability = Some(section),
        Err(e) => fail_with(report, &e),
    }

    let a_cl = &model.a + &model.b * &sol.k_gain;
    let c_cl = &model.c + &model.d * &sol.k_gain;
    match mean_square_stable(&a_cl, &c_cl) {
        Ok(s) => {
            report.stability = Some(StabilitySection {
                spectral_abscissa: s.spectral_abscissa,
                stable: s.stable,
                decay_rate: s.decay_rate,
            });
            if !s.stable {
                fail(
                    report,
                    Outcome::Unstable,
                    format!("closed loop is not mean-square stable (spectral abscissa {:e})", s.spectral_abscissa),
                );
            }
        }
        Err(e) => fail_with(report, &e),
    }
    Some(sol)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn solve(problem: &Problem, gdre_csv_path: Option<&Path>) -> Result<Report, CliError> {
    let mut report = Report::new("solve", problem.file.clone());
    let sol = synthesize(problem, &mut report);
    let Some(path) = gdre_csv_path else {
        return Ok(report);
    };
    // The finite-horizon trajectory needs a member (or P_T) as terminal value.
    let (terminal, source) = match (&problem.weights.terminal, &sol) {
        (Some(p_t), _) => (p_t.clone(), "P_T"),
        (None, Some(sol)) => (sol.p_hat_used.p_hat.clone(), "p_hat"),
        (None, None) => return Ok(report),
    };
    let horizon = problem.file.horizon.gdre_horizon;
    match integrate_gdre(&problem.model, &problem.weights, &terminal, horizon, problem.gare.step, &problem.tols) {
        Ok(gdre) => {
            write_file(path, &gdre_csv(&gdre))?;
            report.gdre = Some(GdreSection {
                csv: path.display().to_string(),
                horizon,
                terminal: source,
                stamps: gdre.grid.len(),
                p_initial: rows_of(gdre.initial().as_matrix()),
            });
        }
        Err(e) => fail_with(&mut report, &e),
    }
    Ok(report)
}

fn load_gain(path: &Path, m: usize, n: usize) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let rows: Rows = serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("gain: {e}")))?;
    let k = matrix("gain", &rows)?;
    if k.shape() != (m, n) {
        return Err(CliError::Invalid(format!("gain: expected {m}x{n}, got {}x{}", k.nrows(), k.ncols())));
    }
    Ok(k)
}

/// Runs the Monte Carlo stage and writes `trajectory.csv` and `report.json`
/// into `out_dir` (created if missing).
pub fn simulate(problem: &Problem, mode: &GainMode, out_dir: &Path) -> Result<Report, CliError> {
    let cfg = problem.require_sim()?.clone();
    let (model, weights) = (&problem.model, &problem.weights);
    let mut report = Report::new("simulate", problem.file.clone());

    let (gain, p_bar) = match mode {
        GainMode::Optimal => match synthesize(problem, &mut report) {
            Some(sol) if report.exit_code == 0 => (sol.k_gain, Some(sol.p_bar)),
            _ => return finish(report, out_dir, None),
        },
        GainMode::Zero => (DMatrix::zeros(model.m(), model.n()), None),
        GainMode::File(path) => (load_gain(path, model.m(), model.n())?, None),
    };

    let mut section = SimulationSection {
        gain_mode: mode.to_string(),
        gain: rows_of(&gain),
        dt: cfg.dt,
        t_end: cfg.t_end,
        paths: cfg.paths,
        seed: cfg.seed,
        cost_estimate: None,
        cost_se: None,
        discretization_bias: None,
        combined_se: None,
        value_target: None,
        tail_bound: None,
        deviation: None,
        consistent: None,
        mean_sq_initial: None,
        mean_sq_final: None,
        trajectory_csv: None,
        divergence: None,
    };
    if report.stability.is_none() {
        let a_cl = &model.a + &model.b * &gain;
        let c_cl = &model.c + &model.d * &gain;
        if let Ok(s) = mean_square_stable(&a_cl, &c_cl) {
            report.stability = Some(StabilitySection {
                spectral_abscissa: s.spectral_abscissa,
                stable: s.stable,
                decay_rate: s.decay_rate,
            });
        }
    }

    let result = match &p_bar {
        Some(p) => estimate_cost_vs_value(model, weights, &gain, p, &cfg).map(|c| {
            section.value_target = Some(c.target);
            section.tail_bound = Some(c.tail_bound);
            section.deviation = Some(c.deviation());
            section.consistent = Some(c.consistent(3.0));
            c.stats
        }),
        None => simulate_closedloop(model, weights, &Feedback::Constant(gain.clone()), &cfg),
    };
    let csv = match result {
        Ok(stats) => {
            section.cost_estimate = Some(stats.cost_estimate);
            section.cost_se = Some(stats.cost_se);
            section.discretization_bias = Some(stats.discretization_bias);
            section.combined_se = Some(stats.combined_se());
            section.mean_sq_initial = stats.mean_sq.first().copied();
            section.mean_sq_final = stats.mean_sq.last().copied();
            let path = out_dir.join("trajectory.csv");
            section.trajectory_csv = Some(path.display().to_string());
            Some((path, trajectory_csv(&stats)))
        }
        Err(e) => {
            if let Error::Divergence { time, path } = e {
                section.divergence = Some(DivergenceInfo { time, path });
            }
            fail_with(&mut report, &e);
            None
        }
    };
    report.simulation = Some(section);
    finish(report, out_dir, csv)
}

fn finish(report: Report, out_dir: &Path, csv: Option<(PathBuf, String)>) -> Result<Report, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    if let Some((path, text)) = csv {
        write_file(&path, &text)?;
    }
    write_file(&out_dir.join("report.json"), &report.to_json())?;
    Ok(report)
}
