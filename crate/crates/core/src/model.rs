use nalgebra::DMatrix;

use crate::error::{contract, Result};
use crate::matops::SymMatrix;

/// Constant coefficients of `dx = (Ax + Bu) dt + (Cx + Du) dw` with scalar `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(contract(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if c.shape() != (n, n) {
            return Err(contract(format!("C must be {n}x{n}, got {:?}", c.shape())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(contract(format!("B must be {n}xm with m >= 1, got {:?}", b.shape())));
        }
        if d.shape() != b.shape() {
            return Err(contract(format!(
                "D must have the shape of B {:?}, got {:?}",
                b.shape(),
                d.shape()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Symmetric, possibly indefinite weights of `E ∫ (x'Qx + u'Ru) dt [+ x(T)' P_T x(T)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub terminal: Option<SymMatrix>,
}

impl CostWeights {
    pub fn new(q: SymMatrix, r: SymMatrix) -> Self {
        Self { q, r, terminal: None }
    }

    pub fn with_terminal(mut self, p_t: SymMatrix) -> Self {
        self.terminal = Some(p_t);
        self
    }

    pub fn check_against(&self, model: &SystemModel) -> Result<()> {
        if self.q.dim() != model.n() {
            return Err(contract(format!("Q must be {0}x{0}, got dim {1}", model.n(), self.q.dim())));
        }
        if self.r.dim() != model.m() {
            return Err(contract(format!("R must be {0}x{0}, got dim {1}", model.m(), self.r.dim())));
        }
        if let Some(t) = &self.terminal {
            if t.dim() != model.n() {
                return Err(contract(format!("P_T must be {0}x{0}, got dim {1}", model.n(), t.dim())));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(contract(format!("{name} must be {n}x{n}, got {:?}", m.shape())));
    }
    Ok(())
}

pub(crate) fn check_gain(k: &DMatrix<f64>, model: &SystemModel) -> Result<()> {
    if k.shape() != (model.m(), model.n()) {
        return Err(contract(format!(
            "gain must be {}x{}, got {:?}",
            model.m(),
            model.n(),
            k.shape()
        )));
    }
    Ok(())
}
