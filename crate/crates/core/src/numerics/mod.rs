//! Self-contained numerical kernel: real Lambert W, bracketed root finding,
//! adaptive Runge-Kutta integration, quadrature on graded grids and a
//! seedable random stream.

mod lambert;
mod ode;
mod quadrature;
mod rng;
mod root;

pub use lambert::{lambert_w, Branch};
pub use ode::{
    integrate_ode, integrate_system, IntegrateOptions, OdeError, OdeTolerances, RhsFailure, Sampling, StopBelow,
    Trajectory,
};
pub use quadrature::{quadrature, Grid};
pub use rng::SeededRng;
pub use root::{find_root, RootBracket};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("argument {x} outside the domain of Lambert W branch {branch}")]
    LambertDomain { branch: i32, x: f64 },
    #[error("Lambert W branch {0} is not real-valued (use 0 or -1)")]
    LambertBranch(i32),
    #[error("invalid root bracket [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi}")]
    InvalidBracket {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },
    #[error("length mismatch: {values} values for {nodes} grid nodes")]
    LengthMismatch { values: usize, nodes: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}
