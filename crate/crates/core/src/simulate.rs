//! Euler–Maruyama Monte Carlo for the closed loop `dx = (A + BK)x dt + (C + DK)x dw`.
//!
//! Every path draws its increments from its own ChaCha8 stream: the generator is
//! seeded from the master seed and the stream id is the path index. Paths are
//! processed in fixed chunks (possibly in parallel) and the chunk sums are
//! reduced in chunk order, so results are bit-identical for any thread count.
//!
//! Each path also drives a coupled coarse path with step `2 dt` fed by the
//! summed increments. The mean fine-minus-coarse cost difference estimates the
//! time-discretization bias of the fine estimate (weak order one).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{contract, Error, Result};
use crate::matops::{moment_lift, sup_norm, unvec, vec_of, SymMatrix};
use crate::model::{check_gain, CostWeights, SystemModel};
use crate::riccati::GdreSolution;
use crate::stability::mean_square_stable;

/// Blow-up guard on the state norm.
const DIVERGENCE_NORM: f64 = 1e12;
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: DVector<f64>,
}

impl SimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(contract(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(contract(format!("t_end must be >= dt, got {}", self.t_end)));
        }
        if self.paths == 0 {
            return Err(contract("paths must be >= 1"));
        }
        if self.x0.len() != n {
            return Err(contract(format!("x0 has length {}, expected {n}", self.x0.len())));
        }
        Ok(())
    }

    /// Number of Euler steps; the grid is `k * dt` for `k = 0..=steps`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Piecewise-linear gain table on an increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    grid: Vec<f64>,
    gains: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn new(grid: Vec<f64>, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if grid.is_empty() || grid.len() != gains.len() {
            return Err(contract(format!(
                "gain table has {} stamps and {} gains",
                grid.len(),
                gains.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(contract("gain table grid must be strictly increasing"));
        }
        let shape = gains[0].shape();
        if gains.iter().any(|k| k.shape() != shape) {
            return Err(contract("gain table entries differ in shape"));
        }
        Ok(Self { grid, gains })
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn covers(&self, t0: f64, t1: f64) -> bool {
        let slack = 1e-9 * (1.0 + t1.abs());
        self.start() <= t0 + slack && self.end() >= t1 - slack
    }

    /// Linear interpolation, clamped at the ends.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        interpolate(&self.grid, &self.gains, t)
    }
}

fn interpolate(grid: &[f64], values: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    let i = grid.partition_point(|&s| s <= t);
    if i == 0 {
        return values[0].clone();
    }
    if i == grid.len() {
        return values[i - 1].clone();
    }
    let w = (t - grid[i - 1]) / (grid[i] - grid[i - 1]);
    &values[i - 1] * (1.0 - w) + &values[i] * w
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    Constant(DMatrix<f64>),
    /// Time measured from the start of the simulation.
    Schedule(GainSchedule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub grid: Vec<f64>,
    pub mean_sq: Vec<f64>,
    /// Zero when only one path is simulated.
    pub mean_sq_se: Vec<f64>,
    pub cost_estimate: f64,
    pub cost_se: f64,
    /// Mean fine-minus-coarse cost difference (coupled `2 dt` paths).
    pub discretization_bias: f64,
    /// `u = K x` of path 0 at every stamp.
    pub control_sample: Vec<DVector<f64>>,
}

impl TrajectoryStats {
    /// Statistical and discretization errors combined in quadrature.
    pub fn combined_se(&self) -> f64 {
        self.cost_se.hypot(self.discretization_bias)
    }
}

/// Monte Carlo cost against a value target `x0' P x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostComparison {
    pub stats: TrajectoryStats,
    pub target: f64,
    /// Bound on the magnitude of the cost beyond `t_end`.
    pub tail_bound: f64,
}

impl CostComparison {
    pub fn deviation(&self) -> f64 {
        self.stats.cost_estimate - self.target
    }

    /// `|cost - target| <= k_se * combined SE + tail`.
    pub fn consistent(&self, k_se: f64) -> bool {
        self.deviation().abs() <= k_se * self.stats.combined_se() + self.tail_bound
    }
}

/// Closed-loop matrices at one time step, column-major.
struct StepMats {
    a_cl: Vec<f64>,
    c_cl: Vec<f64>,
    /// `Q + K'RK`.
    w: Vec<f64>,
    k: DMatrix<f64>,
}

struct Plan {
    n: usize,
    dt: f64,
    steps: usize,
    /// One entry for a constant gain, otherwise `steps + 1`.
    mats: Vec<StepMats>,
    terminal: Option<Vec<f64>>,
    x0: Vec<f64>,
    seed: u64,
}

impl Plan {
    fn mats(&self, k: usize) -> &StepMats {
        if self.mats.len() == 1 {
            &self.mats[0]
        } else {
            &self.mats[k]
        }
    }
}

fn step_mats(model: &SystemModel, weights: &CostWeights, k: DMatrix<f64>) -> StepMats {
    let a_cl = &model.a + &model.b * &k;
    let c_cl = &model.c + &model.d * &k;
    let w = weights.q.as_matrix() + k.transpose() * weights.r.as_matrix() * &k;
    StepMats {
        a_cl: a_cl.as_slice().to_vec(),
        c_cl: c_cl.as_slice().to_vec(),
        w: ((&w + w.transpose()) * 0.5).as_slice().to_vec(),
        k,
    }
}

fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    out.fill(0.0);
    for (j, &xj) in x.iter().enumerate() {
        let col = &m[j * n..(j + 1) * n];
        for (o, &mij) in out.iter_mut().zip(col) {
            *o += mij * xj;
        }
    }
}

fn quad(m: &[f64], x: &[f64], scratch: &mut [f64]) -> f64 {
    mat_vec(m, x, scratch);
    x.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum()
}

/// One Euler–Maruyama step in place; returns the running-cost increment.
fn em_step(mats: &StepMats, x: &mut [f64], h: f64, dw: f64, drift: &mut [f64], diff: &mut [f64]) -> f64 {
    let running = quad(&mats.w, x, drift) * h;
    mat_vec(&mats.a_cl, x, drift);
    mat_vec(&mats.c_cl, x, diff);
    for ((xi, d), s) in x.iter_mut().zip(drift.iter()).zip(diff.iter()) {
        *xi += d * h + s * dw;
    }
    running
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Running mean and sum of squared deviations (Welford / Chan merge).
#[derive(Clone, Copy, Default)]
struct Moments {
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, count: f64, v: f64) {
        let delta = v - self.mean;
        self.mean += delta / count;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(&mut self, n_self: f64, other: &Moments, n_other: f64) {
        let total = n_self + n_other;
        let delta = other.mean - self.mean;
        self.mean += delta * n_other / total;
        self.m2 += other.m2 + delta * delta * n_self * n_other / total;
    }

    fn std_err(&self, count: f64) -> f64 {
        if count < 2.0 {
            return 0.0;
        }
        (self.m2.max(0.0) / (count - 1.0) / count).sqrt()
    }
}

struct ChunkSums {
    count: f64,
    sq: Vec<Moments>,
    cost: Moments,
    diff: Moments,
    control: Option<Vec<DVector<f64>>>,
}

struct Blowup {
    step: usize,
    path: usize,
}

fn run_chunk(plan: &Plan, paths: std::ops::Range<usize>) -> std::result::Result<ChunkSums, Blowup> {
    let n = plan.n;
    let limit = DIVERGENCE_NORM * DIVERGENCE_NORM;
    let sqrt_dt = plan.dt.sqrt();
    let mut sums = ChunkSums {
        count: 0.0,
        sq: vec![Moments::default(); plan.steps + 1],
        cost: Moments::default(),
        diff: Moments::default(),
        control: None,
    };
    let (mut x, mut xc) = (plan.x0.clone(), plan.x0.clone());
    let (mut drift, mut diff) = (vec![0.0; n], vec![0.0; n]);

    for path in paths {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(path as u64);
        sums.count += 1.0;
        x.copy_from_slice(&plan.x0);
        xc.copy_from_slice(&plan.x0);
        let (mut cost, mut cost_c) = (0.0, 0.0);
        let mut coarse_dw = 0.0;
        let mut control = (path == 0).then(|| Vec::with_capacity(plan.steps + 1));

        for k in 0..=plan.steps {
            let r = norm_sq(&x);
            if !(r <= limit) || !(norm_sq(&xc) <= limit) {
                return Err(Blowup { step: k, path });
            }
            sums.sq[k].push(sums.count, r);
            let mats = plan.mats(k);
            if let Some(c) = control.as_mut() {
                c.push(&mats.k * DVector::from_column_slice(&x));
            }
            if k == plan.steps {
                break;
            }
            let xi: f64 = StandardNormal.sample(&mut rng);
            let dw = sqrt_dt * xi;
            cost += em_step(mats, &mut x, plan.dt, dw, &mut drift, &mut diff);

            // Coarse path: one 2dt step per pair of fine steps (a lone dt step at an odd end).
            coarse_dw += dw;
            let pair_end = k % 2 == 1;
            if pair_end || k + 1 == plan.steps {
                let start = if pair_end { k - 1 } else { k };
                let h = plan.dt * (k + 1 - start) as f64;
                cost_c += em_step(plan.mats(start), &mut xc, h, coarse_dw, &mut drift, &mut diff);
                coarse_dw = 0.0;
            }
        }
        if let Some(p_t) = &plan.terminal {
            cost += quad(p_t, &x, &mut drift);
            cost_c += quad(p_t, &xc, &mut drift);
        }
        sums.cost.push(sums.count, cost);
        sums.diff.push(sums.count, cost - cost_c);
        if control.is_some() {
            sums.control = control;
        }
    }
    Ok(sums)
}

fn run(plan: &Plan, paths: usize) -> Result<TrajectoryStats> {
    let chunks: Vec<_> = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| run_chunk(plan, c * CHUNK..((c + 1) * CHUNK).min(paths)))
        .collect();

    let mut first: Option<Blowup> = None;
    for b in chunks.iter().filter_map(|r| r.as_ref().err()) {
        if first.as_ref().is_none_or(|f| (b.step, b.path) < (f.step, f.path)) {
            first = Some(Blowup { step: b.step, path: b.path });
        }
    }
    if let Some(b) = first {
        return Err(Error::Divergence {
            time: b.step as f64 * plan.dt,
            path: b.path,
        });
    }

    let mut chunks = chunks.into_iter().map(|r| r.ok().unwrap());
    let mut total = chunks.next().expect("at least one chunk");
    for chunk in chunks {
        for (t, c) in total.sq.iter_mut().zip(&chunk.sq) {
            t.merge(total.count, c, chunk.count);
        }
        total.cost.merge(total.count, &chunk.cost, chunk.count);
        total.diff.merge(total.count, &chunk.diff, chunk.count);
        total.count += chunk.count;
    }

    let np = total.count;
    Ok(TrajectoryStats {
        grid: (0..=plan.steps).map(|k| k as f64 * plan.dt).collect(),
        mean_sq: total.sq.iter().map(|m| m.mean).collect(),
        mean_sq_se: total.sq.iter().map(|m| m.std_err(np)).collect(),
        cost_estimate: total.cost.mean,
        cost_se: total.cost.std_err(np),
        discretization_bias: total.diff.mean,
        control_sample: total.control.expect("path 0 is in the first chunk"),
    })
}

fn plan(
    model: &SystemModel,
    weights: &CostWeights,
    feedback: &Feedback,
    terminal: Option<&SymMatrix>,
    cfg: &SimConfig,
) -> Result<Plan> {
    weights.check_against(model)?;
    cfg.validate(model.n())?;
    let steps = cfg.steps();
    let dt = cfg.dt;
    let mats = match feedback {
        Feedback::Constant(k) => {
            check_gain(k, model)?;
            vec![step_mats(model, weights, k.clone())]
        }
        Feedback::Schedule(s) => {
            check_gain(&s.gains[0], model)?;
            if !s.covers(0.0, steps as f64 * dt) {
                return Err(contract(format!(
                    "gain table covers [{}, {}], simulation needs [0, {}]",
                    s.start(),
                    s.end(),
                    steps as f64 * dt
                )));
            }
            (0..=steps).map(|k| step_mats(model, weights, s.at(k as f64 * dt))).collect()
        }
    };
    Ok(Plan {
        n: model.n(),
        dt,
        steps,
        mats,
        terminal: terminal.map(|p| p.as_slice().to_vec()),
        x0: cfg.x0.as_slice().to_vec(),
        seed: cfg.seed,
    })
}

/// Monte Carlo statistics of the closed loop; the cost is `Σ (x'Qx + u'Ru) dt` per path.
pub fn simulate_closedloop(
    model: &SystemModel,
    weights: &CostWeights,
    feedback: &Feedback,
    cfg: &SimConfig,
) -> Result<TrajectoryStats> {
    let plan = plan(model, weights, feedback, None, cfg)?;
    run(&plan, cfg.paths)
}

/// `tr ∫_{t_end}^∞ X(t) dt` for the exact second moment `X` of the closed
/// loop, via `∫_{t_end}^∞ X = (-L)^{-1} X(t_end)` with `X(t_end) = e^{L t_end} x0 x0'`.
fn moment_tail(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>, x0: &DVector<f64>, t_end: f64) -> Result<f64> {
    let lift = moment_lift(a_cl, c_cl)?;
    let x_end = (&lift * t_end).exp() * vec_of(&(x0 * x0.transpose()));
    let integral = (-lift)
        .lu()
        .solve(&x_end)
        .ok_or_else(|| contract("moment lift is singular"))?;
    Ok(unvec(&integral, x0.len()).trace().max(0.0))
}

/// Infinite-horizon cost of the constant gain `K` against `x0' P x0`.
///
/// The cost beyond `t_end` is bounded by `max |eig(Q + K'RK)| * tr ∫ X` over
/// `[t_end, ∞)`, with `X` the exact second moment. It is computed from the
/// moment lift rather than fitted to `mean_sq`: with multiplicative noise the
/// late samples are dominated by typical paths, which decay faster than the mean.
pub fn estimate_cost_vs_value(
    model: &SystemModel,
    weights: &CostWeights,
    gain: &DMatrix<f64>,
    p_matrix: &SymMatrix,
    cfg: &SimConfig,
) -> Result<CostComparison> {
    check_gain(gain, model)?;
    let a_cl = &model.a + &model.b * gain;
    let c_cl = &model.c + &model.d * gain;
    let report = mean_square_stable(&a_cl, &c_cl)?;
    if !report.stable {
        return Err(Error::Unstable {
            spectral_abscissa: report.spectral_abscissa,
        });
    }
    let stats = simulate_closedloop(model, weights, &Feedback::Constant(gain.clone()), cfg)?;
    let target = p_matrix.as_matrix().dot(&(&cfg.x0 * cfg.x0.transpose()));

    let w = weights.q.as_matrix() + gain.transpose() * weights.r.as_matrix() * gain;
    let w_abs = nalgebra::SymmetricEigen::new((&w + w.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()));
    let tail_bound = w_abs * moment_tail(&a_cl, &c_cl, &cfg.x0, cfg.t_end)?;
    Ok(CostComparison {
        stats,
        target,
        tail_bound,
    })
}

/// Monte Carlo cost of the time-varying optimal gain on `[t0, t0 + t_end]`
/// (`t0` the earliest stamp of `gdre`), terminal weight `P(t0 + t_end)`,
/// against `x0' P(t0) x0`. The reported tail bound is zero.
pub fn simulate_finite_horizon(
    model: &SystemModel,
    weights: &CostWeights,
    gdre: &GdreSolution,
    cfg: &SimConfig,
) -> Result<CostComparison> {
    cfg.validate(model.n())?;
    if gdre.grid.len() < 2 || gdre.p_of_t.len() != gdre.grid.len() || gdre.k_of_t.len() != gdre.grid.len() {
        return Err(contract("GDRE solution needs at least two consistent stamps"));
    }
    let t0 = gdre.initial_time();
    let grid: Vec<f64> = gdre.grid.iter().rev().map(|t| t - t0).collect();
    let gains: Vec<DMatrix<f64>> = gdre.k_of_t.iter().rev().cloned().collect();
    let values: Vec<DMatrix<f64>> = gdre.p_of_t.iter().rev().map(|p| p.as_matrix().clone()).collect();
    let schedule = GainSchedule::new(grid, gains)?;
    let sim_end = cfg.steps() as f64 * cfg.dt;
    if !schedule.covers(0.0, sim_end) {
        return Err(contract(format!(
            "GDRE grid covers [0, {}] from its initial time, simulation needs [0, {sim_end}]",
            schedule.end()
        )));
    }
    let terminal = SymMatrix::symmetrize(interpolate(&schedule.grid, &values, sim_end));
    let plan = plan(model, weights, &Feedback::Schedule(schedule), Some(&terminal), cfg)?;
    let stats = run(&plan, cfg.paths)?;
    let target = gdre.initial().as_matrix().dot(&(&cfg.x0 * cfg.x0.transpose()));
    debug_assert!(sup_norm(&terminal).is_finite());
    Ok(CostComparison {
        stats,
        target,
        tail_bound: 0.0,
    })
}
