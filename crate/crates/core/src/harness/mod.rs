//! Experiment driver: corrector-lemma suite, density-limit checks, capacity checks, single
//! solves and homogenization sweeps, plus report emission.

pub mod config;
mod output;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    Assertions, ExperimentConfig, FieldSpec, LayoutConfig, LimitDensity, SuiteConfig,
};
pub use output::{emit_outputs, write_grid_outputs, RunReport};

use crate::capacity::{check_potential_decay, BallPotential, PotentialField};
use crate::corrector::{
    boundary_terms, corrector_norms, second_term_rate, stitch_gap, stitched_diagnostics,
    third_term_reduced, Coverage, CorrectorField, StitchedCorrector, SurfaceOrder,
};
use crate::error::{Error, Result};
use crate::geometry::{
    make_domain, place_sites, DomainSpec, LateralBc, PlacementScheme, ShellOrder, SiteLayout,
};
use crate::numerics::{loglog_slope, smoothstep5};
use crate::obstacle_field::{
    analytic_limit_density, build_obstacle, critical_scale, density_field, hminus_proxy,
    pair_density, DensityField, GridCapacity, Normalization, ObstacleSet, ObstacleSpec,
};
use crate::pde::{
    l2_distance, solve_limit, solve_vi, Grid, GridFunction, PenaltyProblem, SolveOptions,
    SolveReport, VIProblem,
};

/// One pass/fail (or informational) line of a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub suite: String,
    pub check: String,
    pub eps: Option<f64>,
    pub value: f64,
    /// Threshold or reference value the check compares against.
    pub target: Option<f64>,
    /// `None` for informational rows.
    pub pass: Option<bool>,
}

impl CheckRow {
    fn info(suite: &str, check: &str, eps: Option<f64>, value: f64) -> Self {
        CheckRow { suite: suite.into(), check: check.into(), eps, value, target: None, pass: None }
    }

    fn test(suite: &str, check: &str, eps: Option<f64>, value: f64, target: f64, pass: bool) -> Self {
        CheckRow {
            suite: suite.into(),
            check: check.into(),
            eps,
            value,
            target: Some(target),
            pass: Some(pass),
        }
    }
}

/// Shared state of a run: the validated config, its domain, and the capacity cache.
pub struct Lab {
    pub config: ExperimentConfig,
    pub domain: DomainSpec,
    pub capacities: GridCapacity,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let domain = make_domain(config.domain.clone(), config.n, config.lateral_bc)?;
        let capacities = GridCapacity::new(config.capacity.clone());
        Ok(Lab { config, domain, capacities })
    }

    pub fn layout(&self, eps: f64) -> Result<SiteLayout> {
        let l = &self.config.layout;
        place_sites(&self.domain, eps, l.scheme, l.s, l.seed)
    }

    pub fn obstacle(&self, eps: f64) -> Result<ObstacleSet> {
        let layout = self.layout(eps)?;
        build_obstacle(&self.config.obstacle, &layout, &self.domain, &self.capacities, self.config.r_tilde_bounds)
    }

    /// Normalized per-site weight γ (all sites share one patch description).
    pub fn gamma(&self) -> Result<f64> {
        match &self.config.obstacle {
            ObstacleSpec::ModelBalls { r_tilde } => crate::capacity::capacity_of_ball(*r_tilde, self.config.n),
            ObstacleSpec::SurfacePatches { shape, size, .. } => {
                Ok(self.capacities.unit_potential(shape, size, self.config.n)?.0.cap)
            }
        }
    }

    /// Capacitary potential of one site at scale ε, centred at the origin.
    pub fn template(&self, eps: f64) -> Result<Arc<dyn PotentialField>> {
        let n = self.config.n;
        let scale = critical_scale(eps, n);
        Ok(match &self.config.obstacle {
            ObstacleSpec::ModelBalls { r_tilde } => {
                Arc::new(BallPotential { center: [0.0; 3], radius: r_tilde * scale })
            }
            ObstacleSpec::SurfacePatches { shape, size, .. } => {
                let (_, unit) = self.capacities.unit_potential(shape, size, n)?;
                Arc::new(unit.transformed(scale, [0.0; 3])?)
            }
        })
    }

    /// μ̂ used by the homogenized problem.
    pub fn limit_density(&self) -> Result<f64> {
        let c = &self.config;
        let fitted = match c.limit_density {
            LimitDensity::Analytic => false,
            LimitDensity::Fitted => true,
            LimitDensity::Auto => c.layout.scheme != PlacementScheme::Grid,
        };
        if !fitted {
            return Ok(analytic_limit_density(c.layout.s, self.gamma()?, c.n));
        }
        let eps = *c.epsilons.last().expect("validated non-empty");
        let obs = self.obstacle(eps)?;
        fit_limit_density(&density_field(&obs, &self.domain, Normalization::Effective), c.lateral_bc, 4)
    }

    fn shell_order(&self) -> ShellOrder {
        let s = &self.config.suite;
        ShellOrder { radial: s.shell_radial, polar: s.shell_polar, azimuthal: s.shell_azimuthal }
    }

    fn surface_order(&self) -> SurfaceOrder {
        let s = &self.config.suite;
        SurfaceOrder { radial: s.surface_radial, polar: s.surface_polar, azimuthal: s.surface_azimuthal }
    }
}

/// Least-squares constant μ with `∫ φ_j dμ̂_ε ≈ μ ∫_Σ φ_j dS` over a partition of unity of Σ made
/// of `m × m` tensor hats (times a cutoff in z).
pub fn fit_limit_density(df: &DensityField, lateral: LateralBc, m: usize) -> Result<f64> {
    let periodic = lateral == LateralBc::Periodic;
    let count = if periodic { m } else { m + 1 };
    let h = 1.0 / m as f64;
    let hat = |i: usize, t: f64| -> f64 {
        let c = i as f64 * h;
        let mut d = (t - c).abs();
        if periodic {
            d = d.min(1.0 - d);
        }
        (1.0 - d / h).max(0.0)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..count {
        for i in 0..count {
            let mass = pair_density(df, &|x: &[f64]| {
                hat(i, x[0]) * hat(j, x[1]) * (1.0 - smoothstep5(x[2] / 0.5).0)
            })?;
            let edge = |k: usize| if !periodic && (k == 0 || k == m) { 0.5 } else { 1.0 };
            let area = h * h * edge(i) * edge(j);
            num += mass * area;
            den += area * area;
        }
    }
    Ok(num / den)
}

fn factor_spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi / lo
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Indices of the ε values used for "at ε = 0.05"-type checks: every ε ≤ 0.05, or the
/// smallest ε when none is that small.
fn small_eps(eps: &[f64]) -> Vec<usize> {
    let v: Vec<usize> = (0..eps.len()).filter(|&i| eps[i] <= 0.05 + 1e-12).collect();
    if v.is_empty() {
        vec![eps.len() - 1]
    } else {
        v
    }
}

/// Corrector-lemma checks across the ε list.
pub fn run_corrector_suite(lab: &Lab) -> Result<Vec<CheckRow>> {
    const S: &str = "corrector";
    let c = &lab.config;
    let a = &c.assertions;
    let window = c.suite.window.clone();
    let test = c.suite.test_field.clone();
    let phi = move |x: [f64; 3]| window.eval(x);
    let v = move |x: [f64; 3]| test.eval(x);
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    let (mut l2, mut energy, mut weighted, mut third) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &eps in &c.epsilons {
        let obs = lab.obstacle(eps)?;
        let field = CorrectorField::from_obstacle(&obs, &lab.domain)?;
        let norms = corrector_norms(&field, Some(&phi), Coverage::Clipped, lab.shell_order())?;
        rows.push(CheckRow::info(S, "sites", Some(eps), field.len() as f64));
        rows.push(CheckRow::info(S, "l2_sq", Some(eps), norms.l2_sq));
        rows.push(CheckRow::info(S, "l2_sq_over_eps3", Some(eps), norms.l2_sq / eps.powi(3)));
        rows.push(CheckRow::info(S, "energy", Some(eps), norms.energy));
        rows.push(CheckRow::info(S, "weighted_energy", Some(eps), norms.weighted_energy));
        l2.push(norms.l2_sq);
        energy.push(norms.energy);
        weighted.push(norms.weighted_energy);
        let mut min_term_r = f64::INFINITY;
        for k in 0..field.len() {
            min_term_r = min_term_r.min(boundary_terms(&field, k, &phi, &v, lab.surface_order())?.term_r);
        }
        if !field.is_empty() {
            let v_nonneg = c.suite.test_field.eval([0.5, 0.5, 0.0]) >= 0.0;
            rows.push(CheckRow::test(S, "term_r_min", Some(eps), min_term_r, 0.0, !v_nonneg || min_term_r >= 0.0));
        }
        let df = density_field(&obs, &lab.domain, Normalization::Effective);
        let t = third_term_reduced(&field, &df, &phi, &v, lab.surface_order())?;
        rows.push(CheckRow::info(S, "third_term_lhs", Some(eps), t.lhs));
        rows.push(CheckRow::info(S, "third_term_rhs", Some(eps), t.rhs));
        third.push(t.relative);
        fields.push(field);
    }
    let eps = &c.epsilons;
    if fields.iter().all(|f| f.is_empty()) {
        rows.push(CheckRow::test(S, "empty_layout_zero", None, energy.iter().sum(), 0.0, energy.iter().all(|e| *e == 0.0)));
        return Ok(rows);
    }
    if eps.len() >= 2 {
        let slope = loglog_slope(eps, &l2).unwrap_or(f64::NAN);
        rows.push(CheckRow::test(S, "l2_slope", None, slope, a.l2_slope, (slope - a.l2_slope).abs() <= a.l2_slope_tol));
        let var = factor_spread(&energy) - 1.0;
        rows.push(CheckRow::test(S, "energy_variation", None, var, a.energy_variation, var <= a.energy_variation));
    }
    let gamma = lab.gamma()?;
    let mu = lab.limit_density()?;
    let target = mu * c.suite.window.sigma_integral();
    rows.push(CheckRow::info(S, "gamma", None, gamma));
    rows.push(CheckRow::info(S, "mu_limit", None, mu));
    let last = *weighted.last().unwrap();
    let rel = (last - target).abs() / target;
    rows.push(CheckRow::test(S, "concentration_relative", eps.last().copied(), rel, a.concentration_tol, rel <= a.concentration_tol));
    if eps.len() >= 3 {
        let rate = second_term_rate(&fields, &phi, &v, lab.surface_order())?;
        for (e, t) in rate.epsilons.iter().zip(&rate.totals) {
            rows.push(CheckRow::info(S, "second_term_total", Some(*e), *t));
        }
        if rate.identically_zero {
            rows.push(CheckRow::test(S, "second_term_zero", None, 0.0, 0.0, lab.domain.is_flat()));
        } else {
            let slope = rate.slope.unwrap_or(f64::NAN);
            rows.push(CheckRow::test(S, "second_term_slope", None, slope, a.second_term_slope, slope >= a.second_term_slope));
        }
    }
    for &i in &small_eps(eps) {
        rows.push(CheckRow::test(S, "third_term_relative", Some(eps[i]), third[i], a.third_term_relative, third[i] <= a.third_term_relative));
    }
    if eps.len() >= 2 {
        rows.push(CheckRow::test(S, "third_term_decreasing", None, *third.last().unwrap(), third[0], strictly_decreasing(&third)));
    }
    if c.suite.stitching && c.n == 3 {
        rows.extend(stitching_rows(lab, &phi, &v)?);
    }
    Ok(rows)
}

fn stitching_rows(lab: &Lab, phi: &(dyn Fn([f64; 3]) -> f64 + Sync), v: &(dyn Fn([f64; 3]) -> f64 + Sync)) -> Result<Vec<CheckRow>> {
    const S: &str = "stitching";
    let c = &lab.config;
    let a = &c.assertions;
    let eps = &c.epsilons;
    let mut rows = Vec::new();
    let (mut gaps, mut grads, mut laps) = (Vec::new(), Vec::new(), Vec::new());
    let mut energy_rel = Vec::new();
    for &e in eps {
        let layout = lab.layout(e)?;
        let sc = match StitchedCorrector::new(&layout, &lab.domain, lab.template(e)?) {
            Ok(sc) => sc,
            Err(err @ (Error::NotEvaluable(_) | Error::InvalidInput(_))) => {
                rows.push(CheckRow {
                    suite: S.into(),
                    check: format!("constructible ({err})"),
                    eps: Some(e),
                    value: 0.0,
                    target: None,
                    pass: Some(false),
                });
                return Ok(rows);
            }
            Err(err) => return Err(err),
        };
        let g = stitch_gap(&sc, c.suite.gap_radii, c.suite.gap_directions)?;
        rows.push(CheckRow::info(S, "sup_gap", Some(e), g.sup_gap));
        rows.push(CheckRow::info(S, "sup_gap_over_eps", Some(e), g.gap_scaled));
        rows.push(CheckRow::info(S, "sup_grad_gap_scaled", Some(e), g.grad_gap_scaled));
        gaps.push(g.gap_scaled);
        grads.push(g.grad_gap_scaled);
        match stitched_diagnostics(&sc, phi, v, lab.shell_order(), lab.surface_order()) {
            Ok(d) => {
                rows.push(CheckRow::info(S, "stitched_energy", Some(e), d.energy));
                rows.push(CheckRow::info(S, "model_energy", Some(e), d.model_energy));
                rows.push(CheckRow::info(S, "laplacian_scaled", Some(e), d.laplacian_scaled));
                rows.push(CheckRow::info(S, "dd_bridge_term", Some(e), d.dd_bridge_term));
                rows.push(CheckRow::info(S, "dd_cap_term", Some(e), d.dd_cap_term));
                laps.push(d.laplacian_scaled);
                energy_rel.push(Some(((d.energy - d.model_energy) / d.model_energy).abs()));
            }
            Err(Error::Unsupported(_)) => energy_rel.push(None),
            Err(err) => return Err(err),
        }
    }
    if eps.len() >= 2 {
        let f = factor_spread(&gaps);
        rows.push(CheckRow::test(S, "gap_spread", None, f, a.stitch_factor, f <= a.stitch_factor));
        let f = factor_spread(&grads);
        rows.push(CheckRow::test(S, "grad_gap_spread", None, f, a.stitch_factor, f <= a.stitch_factor));
        if laps.len() == eps.len() {
            let f = factor_spread(&laps);
            rows.push(CheckRow::test(S, "laplacian_spread", None, f, a.stitch_factor, f <= a.stitch_factor));
        }
    }
    if matches!(c.obstacle, ObstacleSpec::ModelBalls { .. }) {
        for i in small_eps(eps) {
            if let Some(r) = energy_rel[i] {
                rows.push(CheckRow::test(S, "stitched_vs_model_energy", Some(eps[i]), r, a.stitched_energy_tol, r <= a.stitched_energy_tol));
            }
        }
    }
    Ok(rows)
}

/// Density totals, window pairings and the H⁻¹ proxy across the ε list.
pub fn run_density_limit(lab: &Lab) -> Result<Vec<CheckRow>> {
    const S: &str = "density";
    let c = &lab.config;
    let mu = lab.limit_density()?;
    let window = c.suite.window.clone();
    let target = mu * window.sigma_integral();
    let mut rows = vec![CheckRow::info(S, "mu_limit", None, mu)];
    let mut hm = Vec::new();
    let mut rel = Vec::new();
    for (i, &eps) in c.epsilons.iter().enumerate() {
        let obs = lab.obstacle(eps)?;
        let df = density_field(&obs, &lab.domain, Normalization::Effective);
        rows.push(CheckRow::info(S, "total_mass", Some(eps), df.total_mass()?));
        let paired = pair_density(&df, &|x: &[f64]| window.eval([x[0], x[1], x[2]]))?;
        rows.push(CheckRow::info(S, "window_pairing", Some(eps), paired));
        rel.push((paired - target).abs() / target);
        if let Some(&n) = c.grid_n.get(i) {
            let grid = Grid::new(n, c.lateral_bc)?;
            let h = hminus_proxy(&df, mu, &grid)?;
            rows.push(CheckRow::info(S, "hminus", Some(eps), h));
            hm.push(h);
        }
    }
    let last = *rel.last().unwrap();
    let tol = c.assertions.concentration_tol;
    rows.push(CheckRow::test(S, "pairing_relative", c.epsilons.last().copied(), last, tol, last <= tol));
    if hm.len() >= 2 {
        rows.push(CheckRow::test(S, "hminus_decreasing", None, *hm.last().unwrap(), hm[0], strictly_decreasing(&hm)));
    }
    Ok(rows)
}

/// Homogenized density, capacities and potential decay of the configured obstacle.
pub fn run_capacity(lab: &Lab) -> Result<(Vec<CheckRow>, serde_json::Value)> {
    const S: &str = "capacity";
    let c = &lab.config;
    let mut rows = Vec::new();
    let mut extra = serde_json::Map::new();
    let gamma = lab.gamma()?;
    rows.push(CheckRow::info(S, "gamma", None, gamma));
    if let ObstacleSpec::SurfacePatches { shape, size, .. } = &c.obstacle {
        let (res, _) = lab.capacities.unit_potential(shape, size, c.n)?;
        let closed = match (shape.as_str(), size.as_slice()) {
            ("flat_disk", [a]) => Some((8.0 * a, 0.05)),
            ("ball", [r]) => Some((4.0 * std::f64::consts::PI * r, 0.02)),
            _ => None,
        };
        if let Some((exact, tol)) = closed {
            let rel = (res.cap - exact).abs() / exact;
            rows.push(CheckRow::test(S, "closed_form_relative", None, rel, tol, rel <= tol));
        }
        extra.insert("unit_capacity".into(), serde_json::to_value(&res)?);
    }
    for &eps in &c.epsilons {
        let tpl = lab.template(eps)?;
        let cap = tpl.capacity();
        let r = tpl.patch_radius();
        rows.push(CheckRow::info(S, "cap", Some(eps), cap));
        let containment = match &c.obstacle {
            ObstacleSpec::SurfacePatches { containment_m, .. } => containment_m * critical_scale(eps, c.n),
            ObstacleSpec::ModelBalls { .. } => r,
        };
        let base = 5.0 * r.max(containment) / 1.0;
        let inner = check_potential_decay(tpl.as_ref(), cap, containment, (base, 2.0 * base))?;
        let outer = check_potential_decay(tpl.as_ref(), cap, containment, (2.0 * base, 4.0 * base))?;
        rows.push(CheckRow::info(S, "decay_ratio_inner", Some(eps), inner));
        rows.push(CheckRow::info(S, "decay_ratio_outer", Some(eps), outer));
        let ok = inner.is_finite() && outer <= inner + 1e-9;
        rows.push(CheckRow::test(S, "decay_not_increasing", Some(eps), outer - inner, 0.0, ok));
    }
    Ok((rows, serde_json::Value::Object(extra)))
}

/// One row of the homogenization sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub n: usize,
    /// `ok`, `rejected: …` (resolution rule) or `failed: …`.
    pub status: String,
    pub l2_dist: f64,
    pub limit_l2: f64,
    pub j_eps: f64,
    pub j_mu: f64,
    pub gap: f64,
    pub trace_mean: f64,
    pub limit_trace_mean: f64,
    pub hminus: f64,
    /// `𝒥(ū + (φ − ū)_+ w_ε)`, the admissible competitor of the energy sandwich.
    pub sandwich_energy: f64,
    pub sandwich_ok: bool,
    pub secs: f64,
    pub vi: Option<SolveReport>,
    pub limit: Option<SolveReport>,
}

impl SweepRow {
    fn empty(eps: f64, n: usize, status: String) -> Self {
        SweepRow {
            eps,
            n,
            status,
            l2_dist: f64::NAN,
            limit_l2: f64::NAN,
            j_eps: f64::NAN,
            j_mu: f64::NAN,
            gap: f64::NAN,
            trace_mean: f64::NAN,
            limit_trace_mean: f64::NAN,
            hminus: f64::NAN,
            sandwich_energy: f64::NAN,
            sandwich_ok: false,
            secs: 0.0,
            vi: None,
            limit: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mu_limit: f64,
    pub rows: Vec<SweepRow>,
}

/// The ε-problem and homogenized problem for one (ε, N).
pub struct RowProblems {
    pub obstacle: ObstacleSet,
    pub vi: VIProblem,
    pub limit: PenaltyProblem,
}

pub fn row_problems(lab: &Lab, eps: f64, n: usize, mu: f64) -> Result<RowProblems> {
    let c = &lab.config;
    if !lab.domain.is_flat() || c.n != 3 {
        return Err(Error::Unsupported("grid solves need a flat domain in n = 3".into()));
    }
    let obstacle = lab.obstacle(eps)?;
    let grid = Grid::new(n, c.lateral_bc)?;
    let g = |x: [f64; 3]| c.g.eval(x);
    let phi = |x: [f64; 3]| c.phi.eval(x);
    let vi = VIProblem::from_obstacle(grid.clone(), &obstacle, &g, &phi)?;
    let limit = PenaltyProblem::from_fns(grid, &g, &phi, &|_| mu)?;
    Ok(RowProblems { obstacle, vi, limit })
}

fn sweep_row(lab: &Lab, eps: f64, n: usize, mu: f64) -> Result<SweepRow> {
    let c = &lab.config;
    let start = Instant::now();
    let p = row_problems(lab, eps, n, mu)?;
    let opts: &SolveOptions = &c.solver;
    let (ubar, limit_rep) = solve_limit(&p.limit, opts)?;
    let (ueps, vi_rep) = solve_vi(&p.vi, opts, Some(&ubar))?;
    if !vi_rep.converged {
        return Err(Error::NotConverged(format!(
            "obstacle problem: residual {:.3e} after {} sweeps",
            vi_rep.residual, vi_rep.iterations
        )));
    }
    let l2 = l2_distance(&ueps, &ubar)?;
    let df = density_field(&p.obstacle, &lab.domain, Normalization::Effective);
    let hminus = hminus_proxy(&df, mu, &ubar.grid)?;
    let sandwich = sandwich_competitor(&p.obstacle, &lab.domain, &ubar, &p.vi)?;
    let sandwich_energy = ubar.grid.dirichlet_energy(&sandwich.values);
    let j_eps = vi_rep.dirichlet_energy;
    let j_mu = limit_rep.total_energy;
    Ok(SweepRow {
        eps,
        n,
        status: "ok".into(),
        l2_dist: l2,
        limit_l2: ubar.l2_norm(),
        j_eps,
        j_mu,
        gap: (j_eps - j_mu).abs(),
        trace_mean: vi_rep.trace_mean,
        limit_trace_mean: limit_rep.trace_mean,
        hminus,
        sandwich_energy,
        sandwich_ok: j_eps <= sandwich_energy * (1.0 + 1e-9) + 1e-12,
        secs: if c.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        vi: Some(vi_rep),
        limit: Some(limit_rep),
    })
}

/// `v + (φ − v)_+ w_ε` at the grid nodes: admissible for the obstacle problem, since `w_ε = 1`
/// on the obstacle set.
pub fn sandwich_competitor(obs: &ObstacleSet, domain: &DomainSpec, v: &GridFunction, p: &VIProblem) -> Result<GridFunction> {
    let field = CorrectorField::from_obstacle(obs, domain)?;
    let g = &v.grid;
    let mut out = v.values.clone();
    for node in 0..g.len() {
        if !g.is_unknown(node) {
            continue;
        }
        let x = g.coords(node);
        let lift = (p.phi[node] - v.values[node]).max(0.0);
        if lift > 0.0 {
            let w = if p.constrained[node] { 1.0 } else { field.eval_w(&x).0 };
            out[node] += lift * w;
        }
    }
    g.sync_images(&mut out);
    GridFunction::new(g.clone(), out)
}

/// Solves each (ε, N) row in order; failures mark the row instead of aborting the sweep.
pub fn run_sweep(lab: &Lab) -> Result<SweepReport> {
    let c = &lab.config;
    if c.grid_n.len() != c.epsilons.len() {
        return Err(Error::invalid("a sweep needs one grid size per ε"));
    }
    let mu = lab.limit_density()?;
    let mut rows = Vec::new();
    for (&eps, &n) in c.epsilons.iter().zip(&c.grid_n) {
        let row = match sweep_row(lab, eps, n, mu) {
            Ok(r) => r,
            Err(Error::Resolution(msg)) => SweepRow::empty(eps, n, format!("rejected: {msg}")),
            Err(e @ (Error::InvalidInput(_) | Error::Unsupported(_))) => return Err(e),
            Err(e) => SweepRow::empty(eps, n, format!("failed: {e}")),
        };
        rows.push(row);
    }
    Ok(SweepReport { mu_limit: mu, rows })
}

/// Trend checks of a sweep.
pub fn sweep_checks(report: &SweepReport, assertions: &Assertions) -> Vec<CheckRow> {
    const S: &str = "sweep";
    let mut rows = Vec::new();
    for r in &report.rows {
        rows.push(CheckRow::test(S, "row_ok", Some(r.eps), f64::from(u8::from(r.is_ok())), 1.0, r.is_ok()));
        if r.is_ok() {
            rows.push(CheckRow::test(S, "sandwich", Some(r.eps), r.j_eps, r.sandwich_energy, r.sandwich_ok));
        }
    }
    let ok: Vec<&SweepRow> = report.rows.iter().filter(|r| r.is_ok()).collect();
    if ok.len() >= 2 {
        let l2: Vec<f64> = ok.iter().map(|r| r.l2_dist).collect();
        let gap: Vec<f64> = ok.iter().map(|r| r.gap).collect();
        let hm: Vec<f64> = ok.iter().map(|r| r.hminus).collect();
        let zero = |v: &[f64]| v.iter().all(|x| *x <= 1e-12);
        rows.push(CheckRow::test(S, "l2_decreasing", None, *l2.last().unwrap(), l2[0], zero(&l2) || strictly_decreasing(&l2)));
        rows.push(CheckRow::test(S, "gap_decreasing", None, *gap.last().unwrap(), gap[0], zero(&gap) || strictly_decreasing(&gap)));
        rows.push(CheckRow::test(S, "hminus_decreasing", None, *hm.last().unwrap(), hm[0], zero(&hm) || strictly_decreasing(&hm)));
    }
    if let Some(last) = ok.last() {
        let frac = if last.limit_l2 > 0.0 { last.l2_dist / last.limit_l2 } else { last.l2_dist };
        rows.push(CheckRow::test(S, "l2_fraction", Some(last.eps), frac, assertions.l2_fraction, frac <= assertions.l2_fraction));
    }
    rows
}

/// Single solve at the first (ε, N): both problems, with their grid functions.
pub struct SolveOutput {
    pub rows: Vec<CheckRow>,
    pub u_eps: GridFunction,
    pub u_bar: GridFunction,
    pub vi: SolveReport,
    pub limit: SolveReport,
}

pub fn run_solve(lab: &Lab) -> Result<SolveOutput> {
    const S: &str = "solve";
    let c = &lab.config;
    let (&eps, &n) = c
        .epsilons
        .first()
        .zip(c.grid_n.first())
        .ok_or_else(|| Error::invalid("solve needs at least one (ε, N) pair"))?;
    let mu = lab.limit_density()?;
    let p = row_problems(lab, eps, n, mu)?;
    let (u_bar, limit) = solve_limit(&p.limit, &c.solver)?;
    let (u_eps, vi) = solve_vi(&p.vi, &c.solver, Some(&u_bar))?;
    let kkt = vi.kkt_residual.unwrap_or(f64::NAN);
    let data = p.vi.g.iter().chain(&p.vi.phi);
    let lo = data.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.cloned().fold(f64::NEG_INFINITY, f64::max);
    let inside = u_eps.values.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9);
    let rows = vec![
        CheckRow::test(S, "vi_converged", Some(eps), vi.residual, c.solver.tol, vi.converged),
        CheckRow::test(S, "kkt_residual", Some(eps), kkt, c.assertions.kkt_tol, kkt <= c.assertions.kkt_tol),
        CheckRow::test(S, "maximum_principle", Some(eps), f64::from(u8::from(inside)), 1.0, inside),
        CheckRow::info(S, "constrained_nodes", Some(eps), p.vi.constrained_count() as f64),
        CheckRow::info(S, "j_eps", Some(eps), vi.dirichlet_energy),
        CheckRow::info(S, "j_mu", Some(eps), limit.total_energy),
        CheckRow::info(S, "l2_dist", Some(eps), l2_distance(&u_eps, &u_bar)?),
    ];
    Ok(SolveOutput { rows, u_eps, u_bar, vi, limit })
}

pub fn all_pass(rows: &[CheckRow]) -> bool {
    rows.iter().all(|r| r.pass != Some(false))
}
