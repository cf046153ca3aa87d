//! Uniform-grid discretization of the ε-scale obstacle problem and the homogenized penalty
//! problem on the unit cube (n = 3).
//!
//! Energies are `∫|∇u|²` without the factor ½: a link of length h carries weight
//! `c = h·(dual-face factors)` and contributes `c (u_p − u_q)²`. Σ is the face `z = 0`, Γ the
//! top face plus the lateral faces unless those are periodic.

mod grid;
mod oracle;
mod problem;
mod solvers;

pub use grid::{Grid, NodeClass};
pub use oracle::{solve_vi_oracle, Candidate, OracleReport, MAX_CONSTRAINED, MAX_NODES_PER_AXIS};
pub use problem::{
    energy_report, l2_distance, trace_mean, EnergyReport, GridFunction, NodalSystem, NodeRule,
    PenaltyProblem, ProblemRef, VIProblem,
};
pub use solvers::{
    solve_limit, solve_vi, solver_registry, NodalSolver, Relaxation, SolveOptions, SolveOutcome,
    SolveReport,
};

#[cfg(test)]
mod tests;
