//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use ilq_core::{CostWeights, LmiCandidate, SystemModel};

/// Solve `A'Z + Z A + C'Z C + W = 0` by a dense Kronecker linear solve.
pub fn lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let ct = c.transpose();
    let op = i.kronecker(&at) + at.kronecker(&i) + ct.kronecker(&ct);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let sol = op.lu().solve(&rhs).expect("Lyapunov operator is invertible");
    let z = DMatrix::from_column_slice(n, n, sol.as_slice());
    (&z + z.transpose()) * 0.5
}

/// Maximal GARE solution by Kleinman–Newton iteration on the shifted equation,
/// started from `K = 0` (requires a mean-square stable open loop and a
/// positive definite shifted control weight along the iteration).
pub fn kleinman(model: &SystemModel, weights: &CostWeights, member: &LmiCandidate) -> DMatrix<f64> {
    let (a, b, c, d) = (&model.a, &model.b, &model.c, &model.d);
    let p = member.p_hat.as_matrix();
    let q_p = a.transpose() * p + p * a + c.transpose() * p * c + weights.q.as_matrix();
    let l_p = p * b + c.transpose() * p * d;
    let r_p = weights.r.as_matrix() + d.transpose() * p * d;

    let mut k = DMatrix::zeros(model.m(), model.n());
    let mut z = DMatrix::zeros(model.n(), model.n());
    for _ in 0..200 {
        let a_cl = a + b * &k;
        let c_cl = c + d * &k;
        let lk = &l_p * &k;
        let w = &q_p + &lk + lk.transpose() + k.transpose() * &r_p * &k;
        let next = lyapunov(&a_cl, &c_cl, &w);
        let omega = &r_p + d.transpose() * &next * d;
        let m = b.transpose() * &next + d.transpose() * &next * c + l_p.transpose();
        k = -omega.lu().solve(&m).expect("shifted control weight is invertible");
        let done = (&next - &z).amax() < 1e-13 * next.amax().max(1.0);
        z = next;
        if done {
            break;
        }
    }
    z + p
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}
