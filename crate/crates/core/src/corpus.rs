//! Seeded random problem instances with a known strictly feasible LMI member.
//!
//! An instance is built backwards from its member `P0`: pick positive definite
//! `S11`, `S22`, set `L = P0 B + C'P0 D`, `Q_P = L S22^{-1} L' + S11`, then
//! `Q = Q_P - (A'P0 + P0 A + C'P0 C)` and `R = S22 - D'P0 D`. The LMI block at
//! `P0` is `[[Q_P, L], [L', S22]]`, positive definite by its Schur complement.
//! The open loop is shifted to be mean-square stable so the Riccati flows converge.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::lmi::LmiCandidate;
use crate::matops::{moment_lift, SymMatrix};
use crate::model::{CostWeights, SystemModel};

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: SystemModel,
    pub weights: CostWeights,
    /// Strictly feasible member the instance was built from.
    pub member: LmiCandidate,
}

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// One instance with `n` in `1..=max_n`, `m` in `1..=2`.
pub fn random_instance(seed: u64, max_n: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n.max(1));
    let m = rng.random_range(1..=2usize);

    let c = normal(&mut rng, n, n, 0.3);
    let mut a = normal(&mut rng, n, n, 0.5);
    // Shift until the moment lift has abscissa <= -0.2.
    loop {
        let s = spectral_abscissa(&moment_lift(&a, &c)?);
        if s <= -0.2 {
            break;
        }
        a -= DMatrix::identity(n, n) * (0.5 * (s + 0.2) + 0.05);
    }
    let b = normal(&mut rng, n, m, 1.0);
    let d = normal(&mut rng, n, m, 0.5);

    let p0 = normal(&mut rng, n, n, 1.0);
    let p0 = (&p0 + p0.transpose()) * 0.5;
    let g = normal(&mut rng, n, n, 0.5);
    let s11 = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let h = normal(&mut rng, m, m, 0.5);
    let s22 = &h * h.transpose() + DMatrix::identity(m, m) * 0.5;

    let l = &p0 * &b + c.transpose() * &p0 * &d;
    let s22_inv = s22.clone().try_inverse().expect("S22 is positive definite");
    let q_p = &l * s22_inv * l.transpose() + s11;
    let q = q_p - (a.transpose() * &p0 + &p0 * &a + c.transpose() * &p0 * &c);
    let r = s22 - d.transpose() * &p0 * &d;

    Ok(Instance {
        model: SystemModel::new(a, b, c, d)?,
        weights: CostWeights::new(SymMatrix::symmetrize(q), SymMatrix::symmetrize(r)),
        member: LmiCandidate::new(SymMatrix::symmetrize(p0)),
    })
}

/// `count` instances from consecutive seeds starting at `seed`.
pub fn random_corpus(seed: u64, count: usize, max_n: usize) -> Result<Vec<Instance>> {
    (0..count as u64).map(|i| random_instance(seed.wrapping_add(i), max_n)).collect()
}
