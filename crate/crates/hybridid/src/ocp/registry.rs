//! Horizon-solver registry: algorithm variants behind one trait, selected by
//! name (CLI `--solver`).

use super::{MpccProblem, MpccSolution, SolveOpts};
use crate::error::{Error, Result};

pub trait HorizonSolver: Send + Sync {
    fn name(&self) -> &'static str;
    /// Solve the horizon problem, optionally warm-started from a previous
    /// solution (shifted internally by the solver if it can use it).
    fn solve(&self, problem: &MpccProblem, opts: &SolveOpts, warm: Option<&MpccSolution>) -> Result<MpccSolution>;
}

pub fn registry() -> Vec<Box<dyn HorizonSolver>> {
    vec![
        Box::new(super::sqp::SqpMpccSolver),
        Box::new(super::shooting::ShootingSolver),
        Box::new(super::direct::DirectSolver),
    ]
}

pub fn solver_names() -> Vec<&'static str> {
    registry().iter().map(|s| s.name()).collect()
}

pub fn solver_by_name(name: &str) -> Result<Box<dyn HorizonSolver>> {
    registry()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown solver {name:?}; available: {}", solver_names().join(", "))))
}
