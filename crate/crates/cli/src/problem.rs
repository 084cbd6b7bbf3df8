//! Problem files: one JSON document, matrices as arrays of rows.
//!
//! ```json
//! {
//!   "model":   { "A": [[..]], "B": [[..]], "C": [[..]], "D": [[..]] },
//!   "weights": { "Q": [[..]], "R": [[..]], "P_T": [[..]] },
//!   "p_hat":   [[..]],
//!   "sim":     { "dt": 0.001, "t_end": 60, "paths": 2000, "seed": 1, "x0": [..] },
//!   "tolerances": { "psd_tol": 1e-8, "reg_tol": 1e-7, "rank_tol": null, "conv_tol": 1e-9 },
//!   "horizon": { "step": 0.001, "initial_horizon": 50, "max_horizon": 6400, "window": 1, "gdre_horizon": 10 }
//! }
//! ```
//!
//! `P_T`, `p_hat`, `sim`, `tolerances` and `horizon` are optional.

use std::path::Path;

use ilq_core::riccati::Tolerances;
use ilq_core::{CostWeights, GareOptions, LmiCandidate, RankTol, SimConfig, SymMatrix, SystemModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "P_T", default, skip_serializing_if = "Option::is_none")]
    pub p_t: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesSpec {
    pub psd_tol: f64,
    pub reg_tol: f64,
    /// Absolute singular-value cutoff; `null` selects the relative default.
    pub rank_tol: Option<f64>,
    pub conv_tol: f64,
}

impl Default for TolerancesSpec {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            psd_tol: t.psd_tol,
            reg_tol: t.reg_tol,
            rank_tol: None,
            conv_tol: GareOptions::default().conv_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSpec {
    /// RK4 step for the Riccati integrations.
    pub step: f64,
    pub initial_horizon: f64,
    pub max_horizon: f64,
    pub window: f64,
    /// Horizon of the finite-horizon GDRE written by `solve --gdre-csv`.
    pub gdre_horizon: f64,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        let o = GareOptions::default();
        Self {
            step: o.step,
            initial_horizon: o.initial_horizon,
            max_horizon: o.max_horizon,
            window: o.window,
            gdre_horizon: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub model: ModelSpec,
    pub weights: WeightsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default)]
    pub horizon: HorizonSpec,
}

/// A validated problem in solver types.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub model: SystemModel,
    pub weights: CostWeights,
    pub p_hat: Option<LmiCandidate>,
    pub sim: Option<SimConfig>,
    pub tols: Tolerances,
    pub gare: GareOptions,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{field}: {msg}"))
}

pub fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    if r == 0 {
        return Err(invalid(field, "matrix has no rows"));
    }
    let c = rows[0].len();
    if c == 0 {
        return Err(invalid(field, "row 0 is empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(invalid(field, format!("row {i} has {} entries, expected {c}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(invalid(field, format!("entry ({i}, {j}) is not finite")));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn shaped(field: &str, rows: &Rows, shape: (usize, usize)) -> Result<DMatrix<f64>, CliError> {
    let m = matrix(field, rows)?;
    if m.shape() != shape {
        return Err(invalid(field, format!("expected {}x{}, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn symmetric(field: &str, rows: &Rows, n: usize) -> Result<SymMatrix, CliError> {
    let m = shaped(field, rows, (n, n))?;
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(invalid(field, format!("matrix is not symmetric (max |M - M'| = {asym:e})")));
    }
    Ok(SymMatrix::symmetrize(m))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("problem file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(self) -> Result<Problem, CliError> {
        let a = matrix("model.A", &self.model.a)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(invalid("model.A", format!("must be square, got {}x{}", n, a.ncols())));
        }
        let b = matrix("model.B", &self.model.b)?;
        if b.nrows() != n {
            return Err(invalid("model.B", format!("expected {n} rows, got {}", b.nrows())));
        }
        let m = b.ncols();
        let c = shaped("model.C", &self.model.c, (n, n))?;
        let d = shaped("model.D", &self.model.d, (n, m))?;
        let model = SystemModel::new(a, b, c, d).map_err(|e| invalid("model", e))?;

        let mut weights = CostWeights::new(
            symmetric("weights.Q", &self.weights.q, n)?,
            symmetric("weights.R", &self.weights.r, m)?,
        );
        if let Some(p_t) = &self.weights.p_t {
            weights = weights.with_terminal(symmetric("weights.P_T", p_t, n)?);
        }
        let p_hat = match &self.p_hat {
            Some(rows) => Some(LmiCandidate::new(symmetric("p_hat", rows, n)?)),
            None => None,
        };

        let sim = match &self.sim {
            Some(s) => {
                positive("sim.dt", s.dt)?;
                positive("sim.t_end", s.t_end)?;
                if s.dt > s.t_end {
                    return Err(invalid("sim.dt", format!("must not exceed sim.t_end ({} > {})", s.dt, s.t_end)));
                }
                if s.paths == 0 {
                    return Err(invalid("sim.paths", "must be at least 1"));
                }
                if s.x0.len() != n {
                    return Err(invalid("sim.x0", format!("expected {n} entries, got {}", s.x0.len())));
                }
                if s.x0.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("sim.x0", "entries must be finite"));
                }
                Some(SimConfig {
                    dt: s.dt,
                    t_end: s.t_end,
                    paths: s.paths,
                    seed: s.seed,
                    x0: DVector::from_column_slice(&s.x0),
                })
            }
            None => None,
        };

        let t = &self.tolerances;
        positive("tolerances.psd_tol", t.psd_tol)?;
        positive("tolerances.reg_tol", t.reg_tol)?;
        positive("tolerances.conv_tol", t.conv_tol)?;
        if let Some(r) = t.rank_tol {
            positive("tolerances.rank_tol", r)?;
        }
        let h = &self.horizon;
        positive("horizon.step", h.step)?;
        positive("horizon.initial_horizon", h.initial_horizon)?;
        positive("horizon.max_horizon", h.max_horizon)?;
        positive("horizon.window", h.window)?;
        positive("horizon.gdre_horizon", h.gdre_horizon)?;
        if h.step > h.window {
            return Err(invalid("horizon.step", "must not exceed horizon.window"));
        }
        if h.step > h.gdre_horizon {
            return Err(invalid("horizon.step", "must not exceed horizon.gdre_horizon"));
        }

        let tols = Tolerances {
            psd_tol: t.psd_tol,
            reg_tol: t.reg_tol,
            rank_tol: RankTol::from_option(t.rank_tol),
        };
        let gare = GareOptions {
            conv_tol: t.conv_tol,
            step: h.step,
            initial_horizon: h.initial_horizon,
            max_horizon: h.max_horizon,
            window: h.window,
            tols,
        };
        Ok(Problem {
            file: self,
            model,
            weights,
            p_hat,
            sim,
            tols,
            gare,
        })
    }
}

impl Problem {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        ProblemFile::load(path)?.validate()
    }

    /// Replace the simulation seed (used for the `ILQ_SEED` override).
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = self.sim.as_mut() {
            s.seed = seed;
        }
        if let Some(s) = self.file.sim.as_mut() {
            s.seed = seed;
        }
    }

    pub fn require_sim(&self) -> Result<&SimConfig, CliError> {
        self.sim.as_ref().ok_or_else(|| invalid("sim", "section is required for this command"))
    }
}
