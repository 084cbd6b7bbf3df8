//! The JSON report and the trajectory CSV.

use std::fmt::Write as _;

use ilq_core::TrajectoryStats;
use serde::Serialize;

use crate::problem::{ProblemFile, Rows};

/// Every command emits the same key set; sections that do not apply are `null`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub status: &'static str,
    pub exit_code: i32,
    pub message: Option<String>,
    pub feasibility: Option<FeasibilitySection>,
    pub solution: Option<SolutionSection>,
    pub detectability: Option<DetectabilitySection>,
    pub stability: Option<StabilitySection>,
    /// `x0' P_bar x0`, when a simulation section provides `x0`.
    pub value: Option<f64>,
    pub gdre: Option<GdreSection>,
    pub simulation: Option<SimulationSection>,
    pub problem: ProblemFile,
}

impl Report {
    pub fn new(command: &'static str, problem: ProblemFile) -> Self {
        Self {
            command,
            status: "ok",
            exit_code: 0,
            message: None,
            feasibility: None,
            solution: None,
            detectability: None,
            stability: None,
            value: None,
            gdre: None,
            simulation: None,
            problem,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilitySection {
    /// `"supplied"` when the problem file carries `p_hat`, else `"search"`.
    pub source: &'static str,
    pub feasible: bool,
    /// The member found, or the best point of a failed search.
    pub candidate: Rows,
    pub lmi_min_eig: f64,
    pub kernel_ok: bool,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSection {
    pub p_bar: Rows,
    pub k_gain: Rows,
    pub z_bar: Rows,
    pub p_hat_used: Rows,
    pub residual: f64,
    pub regularity_defect: f64,
    pub omega_min_eig: f64,
    pub horizon: f64,
    pub iterations: usize,
    pub window_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectabilitySection {
    /// `(A, C, Q_P^{1/2})` for the shifted weight of the member used.
    pub open_loop: bool,
    /// Closed loop under the optimal gain; only checked when `open_loop` holds.
    pub closed_loop: Option<bool>,
    /// `[re, im]` of an unobserved non-decaying mode, if any.
    pub witness_eigenvalue: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySection {
    pub spectral_abscissa: f64,
    pub stable: bool,
    pub decay_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GdreSection {
    pub csv: String,
    pub horizon: f64,
    /// `"P_T"` or `"p_hat"`: which matrix served as terminal value.
    pub terminal: &'static str,
    pub stamps: usize,
    pub p_initial: Rows,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceInfo {
    pub time: f64,
    pub path: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSection {
    pub gain_mode: String,
    pub gain: Rows,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    pub cost_estimate: Option<f64>,
    pub cost_se: Option<f64>,
    pub discretization_bias: Option<f64>,
    pub combined_se: Option<f64>,
    pub value_target: Option<f64>,
    pub tail_bound: Option<f64>,
    pub deviation: Option<f64>,
    /// `|cost - target| <= 3 combined SE + tail`.
    pub consistent: Option<bool>,
    pub mean_sq_initial: Option<f64>,
    pub mean_sq_final: Option<f64>,
    pub trajectory_csv: Option<String>,
    pub divergence: Option<DivergenceInfo>,
}

pub const TRAJECTORY_HEADER: &str = "t,mean_sq,mean_sq_se,u0";

/// One row per stamp; `u0` is the first control component of path 0.
/// Floats use Rust's `Display`, which is locale-free and round-trips.
pub fn trajectory_csv(stats: &TrajectoryStats) -> String {
    let mut out = String::with_capacity(64 * stats.grid.len());
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for k in 0..stats.grid.len() {
        let u0 = stats.control_sample[k].get(0).copied().unwrap_or(0.0);
        writeln!(out, "{},{},{},{}", stats.grid[k], stats.mean_sq[k], stats.mean_sq_se[k], u0).unwrap();
    }
    out
}

/// `t, P[i][j]..., K[i][j]..., omega_min_eig, reg_defect`, rows in increasing `t`.
pub fn gdre_csv(sol: &ilq_core::GdreSolution) -> String {
    let n = sol.p_of_t.first().map_or(0, |p| p.dim());
    let m = sol.k_of_t.first().map_or(0, |k| k.nrows());
    let mut out = String::from("t");
    for i in 0..n {
        for j in 0..n {
            write!(out, ",P_{i}_{j}").unwrap();
        }
    }
    for i in 0..m {
        for j in 0..n {
            write!(out, ",K_{i}_{j}").unwrap();
        }
    }
    out.push_str(",omega_min_eig,reg_defect\n");
    for k in (0..sol.grid.len()).rev() {
        write!(out, "{}", sol.grid[k]).unwrap();
        let p = sol.p_of_t[k].as_matrix();
        for i in 0..n {
            for j in 0..n {
                write!(out, ",{}", p[(i, j)]).unwrap();
            }
        }
        let gain = &sol.k_of_t[k];
        for i in 0..m {
            for j in 0..n {
                write!(out, ",{}", gain[(i, j)]).unwrap();
            }
        }
        let d = &sol.constraint_log[k];
        writeln!(out, ",{},{}", d.omega_min_eig, d.reg_defect).unwrap();
    }
    out
}
