use ilq_core::matops::{
    kernel_basis, moment_lift, pinv, psd, sqrt_psd, sup_norm, unvec, vec_of, RankTol, SymMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0..3.0_f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

/// Rank-deficient `U diag(s) V'` with orthonormal `U`, `V` and `s` in `[0.5, 3]`,
/// so conditioning on the range is bounded. Rounding leaves singular values near
/// `eps * |M|` where the exact ones vanish, so these cases use an explicit cutoff.
fn low_rank(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(r, c, k)| {
        let k = k.min(r).min(c).max(1);
        (
            prop::collection::vec(-2.0..2.0_f64, r * k),
            prop::collection::vec(-2.0..2.0_f64, c * k),
            prop::collection::vec(0.5..3.0_f64, k),
        )
            .prop_map(move |(u, v, s)| {
                let u = DMatrix::from_vec(r, k, u).qr().q();
                let v = DMatrix::from_vec(c, k, v).qr().q();
                u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s)) * v.transpose()
            })
    })
}

const DEFICIENT: RankTol = RankTol::Abs(1e-9);

fn square_pair(max: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0..2.0_f64, n * n),
            prop::collection::vec(-2.0..2.0_f64, n * n),
        )
            .prop_map(move |(a, c)| (DMatrix::from_vec(n, n, a), DMatrix::from_vec(n, n, c)))
    })
}

fn penrose_defect(m: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let mx = m * x;
    let xm = x * m;
    [
        sup_norm(&(&mx * m - m)),
        sup_norm(&(&xm * x - x)),
        sup_norm(&(&mx - mx.transpose())),
        sup_norm(&(&xm - xm.transpose())),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn penrose_identities(m in matrix(6)) {
        let x = pinv(&m, RankTol::Auto).unwrap();
        prop_assert_eq!(x.shape(), (m.ncols(), m.nrows()));
        prop_assert!(penrose_defect(&m, &x) <= 1e-10 * sup_norm(&m).max(1.0).powi(2));
    }

    #[test]
    fn penrose_identities_rank_deficient(m in low_rank(6)) {
        let x = pinv(&m, DEFICIENT).unwrap();
        prop_assert!(penrose_defect(&m, &x) <= 1e-9 * sup_norm(&m).max(1.0).powi(2));
    }

    #[test]
    fn pinv_is_an_involution(m in low_rank(5)) {
        let back = pinv(&pinv(&m, DEFICIENT).unwrap(), DEFICIENT).unwrap();
        prop_assert!(sup_norm(&(back - &m)) <= 1e-8 * sup_norm(&m).max(1.0));
    }

    #[test]
    fn kernel_is_orthonormal_and_annihilated(m in low_rank(6)) {
        let k = kernel_basis(&m, DEFICIENT).unwrap();
        let g = k.transpose() * &k;
        prop_assert!(sup_norm(&(g - DMatrix::identity(k.ncols(), k.ncols()))) <= 1e-12);
        prop_assert!(sup_norm(&(&m * &k)) <= 1e-10 * sup_norm(&m).max(1.0));
    }

    #[test]
    fn sqrt_of_gram_squares_back(m in matrix(5)) {
        let s = SymMatrix::new(&m * m.transpose()).unwrap();
        let r = sqrt_psd(&s, 1e-10).unwrap();
        prop_assert!(psd(&r, 1e-10).unwrap());
        prop_assert!(sup_norm(&(r.as_matrix() * r.as_matrix() - s.as_matrix())) <= 1e-10 * sup_norm(&s).max(1.0));
    }

    #[test]
    fn symmetrize_is_idempotent(m in matrix(4).prop_filter("square", |m| m.is_square())) {
        let once = SymMatrix::new(m).unwrap();
        let twice = SymMatrix::new(once.as_matrix().clone()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn moment_lift_is_the_moment_map((a, c) in square_pair(4), x in matrix(4)) {
        let n = a.nrows();
        let x = DMatrix::from_fn(n, n, |i, j| x[(i % x.nrows(), j % x.ncols())]);
        let lifted = unvec(&(moment_lift(&a, &c).unwrap() * vec_of(&x)), n);
        let direct = &a * &x + &x * a.transpose() + &c * &x * c.transpose();
        prop_assert!(sup_norm(&(lifted - direct)) <= 1e-12 * 100.0);
    }

    #[test]
    fn moment_lift_is_linear_in_a((a1, a2) in square_pair(4), s in -2.0..2.0_f64) {
        let c = DMatrix::zeros(a1.nrows(), a1.nrows());
        let lhs = moment_lift(&(&a1 + &a2 * s), &c).unwrap();
        let rhs = moment_lift(&a1, &c).unwrap() + moment_lift(&a2, &c).unwrap() * s;
        prop_assert!(sup_norm(&(lhs - rhs)) <= 1e-12);
    }
}

/// Rank-one input on which an over-tight SVD convergence threshold returns a
/// wrong factorization.
#[test]
fn rank_one_with_zero_row_and_column() {
    let m = DMatrix::from_column_slice(
        3,
        3,
        &[1.2050949229914019, -0.0, -1.7934504092986578, -0.0, 0.0, 0.0, 1.3815483563384432, -0.0, -2.056052529862618],
    );
    let x = pinv(&m, RankTol::Auto).unwrap();
    assert!(penrose_defect(&m, &x) < 1e-10);
    let k = kernel_basis(&m, RankTol::Auto).unwrap();
    assert_eq!(k.ncols(), 2);
}
