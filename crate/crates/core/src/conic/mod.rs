//! Cone programs over the nonnegative orthant and second-order cones, with a
//! self-contained interior-point solver.

mod cones;
pub mod dump;
mod ipm;
mod ldl;
mod program;
pub mod sparse;
mod stats;

pub use ipm::{ConicSolution, IpmSettings, SolveStatus};
pub use program::{ConeLayout, ConicProgram, LinExpr, ProgramBuilder};
pub use sparse::CscMatrix;
pub use stats::{kkt_stats, KktStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConicError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("KKT factorization failed: {0}")]
    Factorization(String),
    #[error("program dump: {0}")]
    Dump(String),
}

/// A conic solver that can stand in for the built-in one.
pub trait ConicBackend {
    fn name(&self) -> &str;
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution, ConicError>;
}

/// The built-in homogeneous interior-point solver.
#[derive(Debug, Clone, Default)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl InteriorPoint {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            settings: IpmSettings {
                tol,
                max_iter,
                ..IpmSettings::default()
            },
        }
    }
}

impl ConicBackend for InteriorPoint {
    fn name(&self) -> &str {
        "ipm"
    }

    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution, ConicError> {
        ipm::solve(prog, &self.settings)
    }
}

/// Solves with the built-in backend.
pub fn solve(prog: &ConicProgram, tol: f64, max_iter: usize) -> Result<ConicSolution, ConicError> {
    if !(tol > 0.0) {
        return Err(ConicError::InvalidProgram(format!("tolerance must be positive, got {tol}")));
    }
    InteriorPoint::new(tol, max_iter).solve(prog)
}
