use ilq_core::corpus::random_corpus;
use ilq_core::simulate::{estimate_cost_vs_value, simulate_closedloop};
use ilq_core::stability::{mean_square_stable, second_moment_trajectory};
use ilq_core::{solve_gare, CostWeights, Feedback, GareOptions, LmiCandidate, SimConfig, SymMatrix, SystemModel};
use nalgebra::{DMatrix, DVector};

fn benchmark() -> (SystemModel, CostWeights) {
    let model = SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, -0.1]),
        DMatrix::from_row_slice(2, 1, &[0.2, 0.0]),
        DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 0.1]),
        DMatrix::from_row_slice(2, 1, &[0.6, 0.0]),
    )
    .unwrap();
    let weights = CostWeights::new(SymMatrix::from_diagonal(&[0.5, -1.0]), SymMatrix::from_diagonal(&[-0.05]));
    (model, weights)
}

fn decade_indices(dt: f64, steps: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = 10.0 * dt;
    while (t / dt).round() as usize <= steps {
        out.push((t / dt).round() as usize);
        t *= 10.0;
    }
    out
}

/// Monte Carlo `E|x|^2` against the trace of the exact second moment.
fn check_against_moments(model: &SystemModel, weights: &CostWeights, gain: &DMatrix<f64>, cfg: &SimConfig) {
    let stats = simulate_closedloop(model, weights, &Feedback::Constant(gain.clone()), cfg).unwrap();
    let a_cl = &model.a + &model.b * gain;
    let c_cl = &model.c + &model.d * gain;
    let (_, xs) = second_moment_trajectory(&a_cl, &c_cl, &cfg.x0, cfg.dt, cfg.t_end).unwrap();
    for k in decade_indices(cfg.dt, cfg.steps()) {
        let exact = xs[k].trace();
        let (mc, se) = (stats.mean_sq[k], stats.mean_sq_se[k]);
        assert!((mc - exact).abs() <= 4.0 * se, "t = {}: {mc} vs {exact} (se {se})", stats.grid[k]);
    }
}

#[test]
fn monte_carlo_matches_moment_ode_on_benchmark() {
    let (model, weights) = benchmark();
    let p_bar = SymMatrix::from_diagonal(&[20.143054209026, -1.0 / 0.19]);
    let gain = ilq_core::riccati::finite_gain(&model, &weights, &p_bar, Default::default()).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 10.0,
        paths: 2000,
        seed: 3,
        x0: DVector::from_column_slice(&[-0.01, 0.1]),
    };
    check_against_moments(&model, &weights, &gain, &cfg);
}

#[test]
fn monte_carlo_matches_moment_ode_on_corpus() {
    for (i, inst) in random_corpus(2024, 10, 3).unwrap().into_iter().enumerate() {
        let opts = GareOptions { step: 1e-2, ..GareOptions::default() };
        let sol = solve_gare(&inst.model, &inst.weights, &inst.member, &opts).unwrap();
        let cfg = SimConfig {
            dt: 1e-3,
            t_end: 1.0,
            paths: 1000,
            seed: 100 + i as u64,
            x0: DVector::from_element(inst.model.n(), 1.0),
        };
        check_against_moments(&inst.model, &inst.weights, &sol.k_gain, &cfg);
    }
}

#[test]
fn statistics_do_not_depend_on_thread_count() {
    let (model, weights) = benchmark();
    let gain = DMatrix::from_row_slice(1, 2, &[-0.39, 0.0]);
    let cfg = SimConfig {
        dt: 1e-2,
        t_end: 5.0,
        paths: 300,
        seed: 11,
        x0: DVector::from_column_slice(&[-0.01, 0.1]),
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_closedloop(&model, &weights, &Feedback::Constant(gain.clone()), &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}

#[test]
fn optimal_gain_is_not_beaten_by_perturbations() {
    let (model, weights) = benchmark();
    let sol = solve_gare(
        &model,
        &weights,
        &LmiCandidate::new(SymMatrix::from_diagonal(&[0.3, -5.3])),
        &GareOptions { step: 1e-2, ..GareOptions::default() },
    )
    .unwrap();
    let cfg = SimConfig {
        dt: 1e-2,
        t_end: 60.0,
        paths: 1000,
        seed: 5,
        x0: DVector::from_column_slice(&[-0.01, 0.1]),
    };
    let opt = estimate_cost_vs_value(&model, &weights, &sol.k_gain, &sol.p_bar, &cfg).unwrap();
    let deltas = [[0.1, 0.0], [-0.1, 0.0], [0.05, 0.2], [0.0, -0.3], [-0.08, 0.1], [0.15, -0.05]];
    let mut compared = 0;
    for d in deltas {
        let k = &sol.k_gain + DMatrix::from_row_slice(1, 2, &d);
        if !mean_square_stable(&(&model.a + &model.b * &k), &(&model.c + &model.d * &k)).unwrap().stable {
            continue;
        }
        let other = estimate_cost_vs_value(&model, &weights, &k, &sol.p_bar, &cfg).unwrap();
        let se = opt.stats.combined_se().hypot(other.stats.combined_se());
        assert!(
            opt.stats.cost_estimate <= other.stats.cost_estimate + 3.0 * se + opt.tail_bound + other.tail_bound,
            "delta {d:?}: {} vs {}",
            opt.stats.cost_estimate,
            other.stats.cost_estimate
        );
        compared += 1;
    }
    assert!(compared >= 5);
}
