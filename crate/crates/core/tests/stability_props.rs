mod common;

use ilq_core::corpus::random_corpus;
use ilq_core::lmi::shifted_weights;
use ilq_core::matops::sqrt_psd;
use ilq_core::riccati::closedloop_data;
use ilq_core::stability::{
    detectability_preserved, exact_detectable, lyapunov_trace, mean_square_stable, second_moment_trajectory,
};
use ilq_core::{solve_gare, GareOptions, RankTol};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{lyapunov, min_eig};

fn square(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn orthogonal(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n, 1.0)
        .prop_filter("non-singular", |m| m.determinant().abs() > 1e-3)
        .prop_map(|m| m.qr().q())
}

/// Detectability of a diagonal triple: the symmetric eigen-matrices are
/// `e_i e_j' + e_j e_i'` with eigenvalue `a_i + a_j + c_i c_j`, unseen iff
/// `q_i = q_j = 0`.
fn diagonal_oracle(a: &[f64], c: &[f64], q: &[f64]) -> bool {
    let n = a.len();
    for i in 0..n {
        for j in i..n {
            if a[i] + a[j] + c[i] * c[j] >= 0.0 && q[i] == 0.0 && q[j] == 0.0 {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Mean-square stability iff the stochastic Lyapunov equation with `W = I`
    /// has a positive definite solution.
    #[test]
    fn abscissa_agrees_with_lyapunov_oracle((a, c) in (1..=3usize).prop_flat_map(|n| (square(n, 1.5), square(n, 1.0)))) {
        let r = mean_square_stable(&a, &c).unwrap();
        prop_assume!(r.spectral_abscissa.abs() > 1e-3);
        let n = a.nrows();
        let z = lyapunov(&a, &c, &DMatrix::identity(n, n));
        prop_assert_eq!(r.stable, min_eig(&z) > 0.0);
    }

    #[test]
    fn detectability_matches_diagonal_oracle(
        (a, c, mask, t) in (1..=3usize).prop_flat_map(|n| (
            prop::collection::vec(-1.0..1.0_f64, n),
            prop::collection::vec(-1.0..1.0_f64, n),
            prop::collection::vec(prop::bool::ANY, n),
            orthogonal(n),
        ))
    ) {
        let q: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        // Keep eigenvalues away from the imaginary axis so the verdict is robust.
        let n = a.len();
        for i in 0..n {
            for j in i..n {
                prop_assume!((a[i] + a[j] + c[i] * c[j]).abs() > 1e-3);
            }
        }
        let expected = diagonal_oracle(&a, &c, &q);
        let da = DMatrix::from_diagonal(&DVector::from_column_slice(&a));
        let dc = DMatrix::from_diagonal(&DVector::from_column_slice(&c));
        let dq = DMatrix::from_diagonal(&DVector::from_column_slice(&q));
        prop_assert_eq!(exact_detectable(&da, &dc, &dq, 1e-9).unwrap().detectable, expected);
        // Orthogonal change of basis x -> T x maps Q^{1/2} to Q^{1/2} T'.
        let ta = &t * &da * t.transpose();
        let tc = &t * &dc * t.transpose();
        let tq = &t * &dq * t.transpose();
        let rep = exact_detectable(&ta, &tc, &tq, 1e-9).unwrap();
        prop_assert_eq!(rep.detectable, expected);
        if let Some(w) = rep.witness {
            let qw = tq.map(|v| num_complex::Complex64::new(v, 0.0)) * &w.matrix;
            prop_assert!(qw.norm() <= 1e-8);
            prop_assert!((&w.matrix - w.matrix.transpose()).norm() <= 1e-10);
        }
    }

    #[test]
    fn abscissa_is_basis_invariant((a, c, t) in (1..=3usize).prop_flat_map(|n| (square(n, 1.0), square(n, 1.0), orthogonal(n)))) {
        let r1 = mean_square_stable(&a, &c).unwrap();
        let r2 = mean_square_stable(&(&t * &a * t.transpose()), &(&t * &c * t.transpose())).unwrap();
        prop_assert!((r1.spectral_abscissa - r2.spectral_abscissa).abs() <= 1e-9 * (1.0 + r1.spectral_abscissa.abs()));
    }
}

#[test]
fn moment_trajectory_matches_lift_exponential() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, -0.2, -0.4]);
    let c = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.3]);
    let x0 = DVector::from_column_slice(&[1.0, -1.0]);
    let (grid, xs) = second_moment_trajectory(&a, &c, &x0, 1e-3, 2.0).unwrap();
    let lift = ilq_core::matops::moment_lift(&a, &c).unwrap();
    let x_init = ilq_core::matops::vec_of(&(&x0 * x0.transpose()));
    let exact = (lift * 2.0).exp() * x_init;
    assert_eq!(grid.len(), 2001);
    let last = ilq_core::matops::vec_of(xs.last().unwrap());
    assert!((last - exact).amax() < 1e-12);
}

#[test]
fn closed_loop_detectability_is_preserved_on_corpus() {
    let mut checked = 0;
    for inst in random_corpus(2024, 10, 3).unwrap() {
        let sw = shifted_weights(&inst.model, &inst.weights, &inst.member).unwrap();
        let q_half = sqrt_psd(&sw.q_shift, 1e-8).unwrap();
        if !exact_detectable(&inst.model.a, &inst.model.c, &q_half, 1e-9).unwrap().detectable {
            continue;
        }
        let opts = GareOptions { step: 1e-2, ..GareOptions::default() };
        let sol = solve_gare(&inst.model, &inst.weights, &inst.member, &opts).unwrap();
        assert!(detectability_preserved(&inst.model, &sw, &sol.z_bar, 1e-9).unwrap());
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn value_decreases_along_corpus_closed_loops() {
    for inst in random_corpus(2024, 10, 3).unwrap() {
        let opts = GareOptions { step: 1e-2, ..GareOptions::default() };
        let sol = solve_gare(&inst.model, &inst.weights, &inst.member, &opts).unwrap();
        let sw = shifted_weights(&inst.model, &inst.weights, &inst.member).unwrap();
        let cl = closedloop_data(&inst.model, &sw, &sol.z_bar, RankTol::Auto, 1e-6).unwrap();
        assert!(mean_square_stable(&cl.a_cl, &cl.c_cl).unwrap().stable);
        let x0 = DVector::from_element(inst.model.n(), 1.0);
        let tr = lyapunov_trace(&inst.model, &sol.k_gain, &sol.z_bar, &x0, 1e-2, 20.0).unwrap();
        for w in tr.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
        }
    }
}
