//! Indefinite stochastic linear-quadratic control with multiplicative noise.
//!
//! The system is `dx = (Ax + Bu) dt + (Cx + Du) dw` with a scalar Wiener
//! process and the cost `E ∫ (x'Qx + u'Ru) dt` with symmetric, possibly
//! indefinite `Q` and `R`. The optimal value is `x0' P x0`; the cost is not
//! halved.
//!
//! * [`matops`]: pseudo-inverse, PSD tests, kernels, square roots, moment lift.
//! * [`lmi`]: the LMI feasible set and a first-order search for a member.
//! * [`riccati`]: generalized differential and algebraic Riccati equations.
//! * [`stability`]: mean-square stability and exact detectability.
//! * [`simulate`]: seeded Euler–Maruyama Monte Carlo.
//! * [`corpus`]: seeded random instances with a known LMI member.

pub mod corpus;
pub mod error;
pub mod lmi;
pub mod matops;
pub mod model;
pub mod riccati;
pub mod simulate;
pub mod stability;

pub use error::{Error, Result};
pub use lmi::{find_feasible, membership, FeasibilityOptions, FeasibilityOutcome, LmiCandidate, ShiftedWeights};
pub use matops::{RankTol, SymMatrix};
pub use model::{CostWeights, SystemModel};
pub use riccati::{solve_gare, GareOptions, GareSolution, GdreSolution, Tolerances};
pub use simulate::{Feedback, GainSchedule, SimConfig, TrajectoryStats};
