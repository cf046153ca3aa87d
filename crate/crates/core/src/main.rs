use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use signorini_homog::capacity::shape_registry;
use signorini_homog::harness::{
    all_pass, emit_outputs, run_capacity, run_corrector_suite, run_density_limit, run_solve,
    run_sweep, sweep_checks, write_grid_outputs, ExperimentConfig, Lab, RunReport,
};
use signorini_homog::pde::solver_registry;
use signorini_homog::{Error, Result};

#[derive(Parser)]
#[command(name = "signorini-homog", version, about = "Homogenization experiments for boundary obstacle problems")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the VI solver by registry name.
    #[arg(long)]
    solver: Option<String>,
    /// Single-threaded lexicographic sweeps (reference mode).
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Patch capacities, closed-form comparisons and potential decay.
    Capacity(Common),
    /// Corrector-lemma suite: norms, boundary terms, stitching.
    CorrectorCheck(Common),
    /// Convergence of the rescaled obstacle densities.
    DensityLimit(Common),
    /// One obstacle solve and one homogenized solve at the first (ε, N).
    Solve(Common),
    /// Homogenization sweep over the configured (ε, N) pairs.
    Sweep(Common),
    /// Registered solvers and patch shapes.
    List,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = &common.solver {
        solver_registry().get(s)?;
        cfg.solver.solver = s.clone();
    }
    if common.serial {
        cfg.solver.solver = "projected-sor".into();
    }
    Ok(cfg)
}

fn execute(verb: &str, common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let lab = Lab::new(cfg.clone())?;
    let dir = cfg.output_dir.clone();
    let mut report = RunReport { verb: verb.into(), ..Default::default() };
    match verb {
        "capacity" => {
            let (rows, extra) = run_capacity(&lab)?;
            report.checks = rows;
            report.extra = extra;
        }
        "corrector-check" => report.checks = run_corrector_suite(&lab)?,
        "density-limit" => report.checks = run_density_limit(&lab)?,
        "solve" => {
            let out = run_solve(&lab)?;
            write_grid_outputs(&out.u_eps, "u_eps", &dir)?;
            write_grid_outputs(&out.u_bar, "u_bar", &dir)?;
            report.checks = out.rows;
            report.extra = serde_json::json!({ "vi": out.vi, "limit": out.limit });
        }
        "sweep" => {
            let sweep = run_sweep(&lab)?;
            report.checks = sweep_checks(&sweep, &cfg.assertions);
            report.sweep = Some(sweep);
        }
        _ => unreachable!("verb table is closed"),
    }
    report.pass = all_pass(&report.checks);
    for c in &report.checks {
        let tag = match c.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "info",
        };
        let eps = c.eps.map(|e| format!(" eps={e:.5}")).unwrap_or_default();
        let target = c.target.map(|t| format!(" target={t:.6e}")).unwrap_or_default();
        println!("{tag} {}.{}{eps} value={:.6e}{target}", c.suite, c.check, c.value);
    }
    emit_outputs(&report, &cfg, &dir)?;
    println!("wrote {}", dir.display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (verb, common) = match &cli.verb {
        Verb::Capacity(c) => ("capacity", c),
        Verb::CorrectorCheck(c) => ("corrector-check", c),
        Verb::DensityLimit(c) => ("density-limit", c),
        Verb::Solve(c) => ("solve", c),
        Verb::Sweep(c) => ("sweep", c),
        Verb::List => {
            println!("solvers: {}", solver_registry().names().join(", "));
            println!("shapes: {}", shape_registry().names().join(", "));
            return ExitCode::SUCCESS;
        }
    };
    let run = || execute(verb, common);
    let result = if common.serial {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Unsupported(e.to_string()))
            .and_then(|pool| pool.install(run))
    } else {
        run()
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Json(_) | Error::InvalidInput(_) | Error::Unsupported(_) | Error::Resolution(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
