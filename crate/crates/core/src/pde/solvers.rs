//! Relaxation solvers behind a name-keyed registry.

use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::solve_vi_oracle;
use super::problem::{
    energy_report, nodal_update, GridFunction, NodalSystem, NodeRule, PenaltyProblem, ProblemRef,
    VIProblem,
};
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Relaxation {
    Fixed(f64),
    /// `2/(1 + sqrt(1 − ρ_J²))` from the Jacobi radius of the unconstrained operator.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub solver: String,
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: Relaxation,
    /// Record the energy after every sweep (small instances only).
    pub record_energy: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            solver: "projected-sor".into(),
            tol: 1e-9,
            max_iter: 200_000,
            relaxation: Relaxation::Fixed(1.5),
            record_energy: false,
        }
    }
}

impl SolveOptions {
    pub fn omega(&self, sys: &NodalSystem) -> Result<f64> {
        match self.relaxation {
            Relaxation::Fixed(w) if w > 0.0 && w < 2.0 => Ok(w),
            Relaxation::Fixed(w) => Err(Error::invalid(format!("relaxation {w} outside (0, 2)"))),
            Relaxation::Auto => {
                let theta = std::f64::consts::PI * sys.grid.h();
                let lateral = if sys.grid.is_periodic() { 1.0 } else { theta.cos() };
                let rho = (4.0 * lateral + 2.0 * (theta / 2.0).cos()) / 6.0;
                Ok(2.0 / (1.0 + (1.0 - rho * rho).sqrt()))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub omega: f64,
    pub energy_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub iterations: usize,
    /// Largest nodal correction relative to the data magnitude.
    pub residual: f64,
    pub converged: bool,
    pub omega: f64,
    pub dirichlet_energy: f64,
    pub penalty_energy: Option<f64>,
    pub total_energy: f64,
    pub kkt_residual: Option<f64>,
    pub trace_mean: f64,
    pub wall_secs: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub energy_history: Vec<f64>,
}

pub trait NodalSolver: Send + Sync {
    fn solve(&self, sys: &NodalSystem, opts: &SolveOptions) -> Result<SolveOutcome>;
}

/// Lexicographic projected SOR; the deterministic reference.
pub struct ProjectedSor;

/// Red-black projected SOR with each colour updated in parallel.
pub struct RedBlackSor;

/// Exhaustive active-set enumeration (obstacle problems on tiny grids only).
pub struct Enumeration;

fn unknowns(sys: &NodalSystem) -> Vec<u32> {
    (0..sys.grid.len())
        .filter(|&p| sys.rules[p] != NodeRule::Fixed)
        .map(|p| p as u32)
        .collect()
}

fn iterate(
    sys: &NodalSystem,
    opts: &SolveOptions,
    mut sweep: impl FnMut(&mut Vec<f64>, f64) -> f64,
) -> Result<SolveOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let omega = opts.omega(sys)?;
    let mut u = sys.init.clone();
    let mut history = Vec::new();
    if opts.record_energy {
        history.push(sys.energy(&u));
    }
    let tol = opts.tol * sys.scale;
    let mut iterations = 0;
    let mut residual = sys.residual(&u);
    while residual > tol && iterations < opts.max_iter {
        let r = sweep(&mut u, omega);
        iterations += 1;
        if opts.record_energy {
            sys.grid.sync_images(&mut u);
            history.push(sys.energy(&u));
        }
        if r <= tol {
            residual = sys.residual(&u);
        }
    }
    sys.grid.sync_images(&mut u);
    Ok(SolveOutcome {
        values: u,
        iterations,
        residual: residual / sys.scale,
        converged: residual <= tol,
        omega,
        energy_history: history,
    })
}

impl NodalSolver for ProjectedSor {
    fn solve(&self, sys: &NodalSystem, opts: &SolveOptions) -> Result<SolveOutcome> {
        let nodes = unknowns(sys);
        let g = &sys.grid;
        iterate(sys, opts, |u, omega| {
            let mut r: f64 = 0.0;
            for &p in &nodes {
                let p = p as usize;
                let [i, j, k] = g.ijk(p);
                let (s, d) = g.stencil(u, i, j, k);
                let (v, res) = nodal_update(sys.rules[p], u[p], s, d, omega);
                u[p] = v;
                r = r.max(res);
            }
            r
        })
    }
}

impl NodalSolver for RedBlackSor {
    fn solve(&self, sys: &NodalSystem, opts: &SolveOptions) -> Result<SolveOutcome> {
        let g = &sys.grid;
        if g.is_periodic() && (g.n() - 1) % 2 == 1 {
            return Err(Error::Unsupported(
                "red-black ordering needs an even periodic period (odd N)".into(),
            ));
        }
        let all = unknowns(sys);
        let colour = |p: &u32| {
            let [i, j, k] = g.ijk(*p as usize);
            (i + j + k) % 2
        };
        let red: Vec<u32> = all.iter().copied().filter(|p| colour(p) == 0).collect();
        let black: Vec<u32> = all.iter().copied().filter(|p| colour(p) == 1).collect();
        let mut buf: Vec<(f64, f64)> = Vec::with_capacity(red.len().max(black.len()));
        iterate(sys, opts, |u, omega| {
            let mut r: f64 = 0.0;
            for nodes in [&red, &black] {
                nodes
                    .par_iter()
                    .with_min_len(4096)
                    .map(|&p| {
                        let p = p as usize;
                        let [i, j, k] = g.ijk(p);
                        let (s, d) = g.stencil(u, i, j, k);
                        nodal_update(sys.rules[p], u[p], s, d, omega)
                    })
                    .collect_into_vec(&mut buf);
                for (&p, &(v, res)) in nodes.iter().zip(&buf) {
                    u[p as usize] = v;
                    r = r.max(res);
                }
            }
            r
        })
    }
}

impl NodalSolver for Enumeration {
    fn solve(&self, sys: &NodalSystem, _opts: &SolveOptions) -> Result<SolveOutcome> {
        if sys.rules.iter().any(|r| matches!(r, NodeRule::Penalty { .. })) {
            return Err(Error::Unsupported("enumeration solves obstacle problems only".into()));
        }
        let phi: Vec<f64> = sys
            .rules
            .iter()
            .map(|r| if let NodeRule::Lower(f) = r { *f } else { 0.0 })
            .collect();
        let constrained: Vec<bool> = sys.rules.iter().map(|r| matches!(r, NodeRule::Lower(_))).collect();
        let p = VIProblem::new(sys.grid.clone(), sys.init.clone(), phi, constrained)?;
        let (u, _) = solve_vi_oracle(&p)?;
        let residual = sys.residual(&u.values) / sys.scale;
        Ok(SolveOutcome {
            values: u.values,
            iterations: 1,
            residual,
            converged: true,
            omega: 1.0,
            energy_history: Vec::new(),
        })
    }
}

pub fn solver_registry() -> &'static Registry<dyn NodalSolver> {
    static REG: OnceLock<Registry<dyn NodalSolver>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn NodalSolver> = Registry::new("VI solver");
        r.register("projected-sor", Box::new(ProjectedSor)).unwrap();
        r.register("projected-sor-redblack", Box::new(RedBlackSor)).unwrap();
        r.register("active-set-enumeration", Box::new(Enumeration)).unwrap();
        r
    })
}

fn finish(
    outcome: SolveOutcome,
    opts: &SolveOptions,
    problem: ProblemRef<'_>,
    start: Instant,
) -> Result<(GridFunction, SolveReport)> {
    let u = GridFunction::new(problem.grid().clone(), outcome.values)?;
    let e = energy_report(&u, problem)?;
    let report = SolveReport {
        solver: opts.solver.clone(),
        iterations: outcome.iterations,
        residual: outcome.residual,
        converged: outcome.converged,
        omega: outcome.omega,
        dirichlet_energy: e.dirichlet_energy,
        penalty_energy: e.penalty_energy,
        total_energy: e.total_energy,
        kkt_residual: e.kkt_residual,
        trace_mean: e.trace_mean,
        wall_secs: start.elapsed().as_secs_f64(),
        energy_history: outcome.energy_history,
    };
    Ok((u, report))
}

/// Solves the obstacle problem with the configured strategy, optionally warm-started.
pub fn solve_vi(
    p: &VIProblem,
    opts: &SolveOptions,
    warm: Option<&GridFunction>,
) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let solver = solver_registry().get(&opts.solver)?;
    let mut sys = p.nodal();
    if let Some(w) = warm {
        sys.warm_start(&w.values)?;
    }
    let out = solver.solve(&sys, opts)?;
    finish(out, opts, ProblemRef::Vi(p), start)
}

/// Solves the homogenized penalty problem by nonlinear relaxation.
pub fn solve_limit(p: &PenaltyProblem, opts: &SolveOptions) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let solver = solver_registry().get(&opts.solver)?;
    let out = solver.solve(&p.nodal(), opts)?;
    if !out.converged {
        return Err(Error::NotConverged(format!(
            "penalty problem: residual {:.3e} after {} sweeps",
            out.residual, out.iterations
        )));
    }
    finish(out, opts, ProblemRef::Penalty(p), start)
}
