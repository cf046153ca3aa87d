//! Capacities, capacitary potentials, equivalent radii, and the far-field decay check.
//!
//! Capacity is the infimum of the Dirichlet energy over functions that are at least one on the
//! set, taken in all of ℝⁿ. The fundamental solution is normalized as
//! `N(x) = |x|^{2−n} / ((n−2)σ_{n−1})`, so a set of capacity `cap` has potential `≈ cap·N` far away.

mod octant;
pub mod shapes;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::unit_sphere_area;
use octant::{OctantGrid, OctantProblem, OctantSolution};
pub use shapes::{shape_registry, PatchShape, PatchSpec};

/// `(n−2)·σ_{n−1}·r^{n−2}`.
pub fn capacity_of_ball(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::invalid(format!("capacity needs n >= 3, got {n}")));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::invalid(format!("ball radius must be positive, got {r}")));
    }
    Ok((n as f64 - 2.0) * unit_sphere_area(n) * r.powi(n as i32 - 2))
}

/// Radius of the ball with the given capacity, and its rescaling `r·ε^{−(n−1)/(n−2)}`.
pub fn equivalent_radius(cap: f64, n: usize, epsilon: f64) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::invalid(format!("capacity needs n >= 3, got {n}")));
    }
    if !(cap.is_finite() && cap > 0.0) {
        return Err(Error::invalid(format!("capacity must be positive, got {cap}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let nf = n as f64;
    let r = (cap / ((nf - 2.0) * unit_sphere_area(n))).powf(1.0 / (nf - 2.0));
    Ok((r, r * epsilon.powf(-(nf - 1.0) / (nf - 2.0))))
}

/// `N(x)` for `|x| = rho`.
pub fn fundamental_solution(rho: f64, n: usize) -> f64 {
    let nf = n as f64;
    rho.powf(2.0 - nf) / ((nf - 2.0) * unit_sphere_area(n))
}

/// Parameters of the graded-grid exterior solver, in units of the patch circumradius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacitySolverParams {
    /// Uniform spacings near the patch, coarse to fine.
    pub levels: Vec<f64>,
    /// Radius of the Dirichlet sphere.
    pub truncation: f64,
    /// Growth ratio of the spacing beyond the uniform block.
    pub grading: f64,
    /// The uniform block covers `margin ×` the patch bounding box plus `margin − 1` in every axis.
    pub margin: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Relative disagreement between fitted and analytic truncation coefficients that gets flagged.
    pub truncation_tolerance: f64,
}

impl Default for CapacitySolverParams {
    fn default() -> Self {
        CapacitySolverParams {
            levels: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            truncation: 100.0,
            grading: 1.2,
            margin: 1.25,
            tol: 1e-8,
            max_iter: 50_000,
            truncation_tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub h: f64,
    pub nodes: usize,
    pub iterations: usize,
    /// Energy with the Dirichlet sphere at the truncation radius.
    pub cap_truncated: f64,
    /// Energy after the truncation correction.
    pub cap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub levels: Vec<LevelRecord>,
    pub truncation_radius: f64,
    /// Fitted `k` in `1/cap = 1/cap_R + k/R^{n−2}` (unit scale).
    pub truncation_fit: f64,
    pub truncation_analytic: f64,
    pub order: f64,
    pub extrapolated: f64,
    pub error_estimate: f64,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub cap: f64,
    pub epsilon: f64,
    /// `cap / ε^{n−1}`.
    pub gamma: f64,
    pub r_equiv: f64,
    pub r_tilde: f64,
    pub trace: RefinementTrace,
}

impl CapacityResult {
    fn new(cap: f64, epsilon: f64, n: usize, trace: RefinementTrace) -> Result<Self> {
        let (r_equiv, r_tilde) = equivalent_radius(cap, n, epsilon)?;
        Ok(CapacityResult {
            cap,
            epsilon,
            gamma: cap / epsilon.powi(n as i32 - 1),
            r_equiv,
            r_tilde,
            trace,
        })
    }
}

/// Capacitary potential of one patch, evaluable in ℝ³ outside the patch.
pub trait PotentialField: Send + Sync {
    /// Value and gradient; 1 and 0 on the patch.
    fn eval(&self, x: [f64; 3]) -> Result<(f64, [f64; 3])>;
    fn capacity(&self) -> f64;
    fn center(&self) -> [f64; 3];
    /// Radius of a ball about the centre containing the patch.
    fn patch_radius(&self) -> f64;
    /// Radius below which (outside the patch) values are not trusted.
    fn evaluable_from(&self) -> f64;
    /// Truncation radius of the underlying solve, if any.
    fn truncation_radius(&self) -> Option<f64>;
    fn grid_levels(&self) -> Vec<f64>;
    /// True when the potential is an exact radial function about its centre.
    fn is_radial(&self) -> bool {
        false
    }
}

/// Exact potential `(r/|x−c|)^{n−2}` of a ball in ℝ³.
#[derive(Clone, Debug, PartialEq)]
pub struct BallPotential {
    pub center: [f64; 3],
    pub radius: f64,
}

impl PotentialField for BallPotential {
    fn eval(&self, x: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let d = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        let rho = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if rho <= self.radius {
            return Ok((1.0, [0.0; 3]));
        }
        let v = self.radius / rho;
        let g = -self.radius / (rho * rho * rho);
        Ok((v, [g * d[0], g * d[1], g * d[2]]))
    }
    fn capacity(&self) -> f64 {
        4.0 * PI * self.radius
    }
    fn center(&self) -> [f64; 3] {
        self.center
    }
    fn patch_radius(&self) -> f64 {
        self.radius
    }
    fn evaluable_from(&self) -> f64 {
        self.radius
    }
    fn truncation_radius(&self) -> Option<f64> {
        None
    }
    fn grid_levels(&self) -> Vec<f64> {
        Vec::new()
    }
    fn is_radial(&self) -> bool {
        true
    }
}

/// Free-space representation `ψ(x) = Σ q_i N(x − y_i)` of the computed potential, with charges
/// taken from the discrete capacitary distribution of the finest grid level and normalized to
/// the extrapolated capacity.
#[derive(Clone, Debug)]
pub struct ChargePotential {
    patch: PatchSpec,
    charges: Vec<([f64; 3], f64)>,
    cap: f64,
    scale: f64,
    finest_h: f64,
    truncation: f64,
    levels: Vec<f64>,
}

impl ChargePotential {
    pub fn charges(&self) -> &[([f64; 3], f64)] {
        &self.charges
    }

    pub fn patch(&self) -> &PatchSpec {
        &self.patch
    }

    /// The potential of the patch dilated by `factor` about its centre and moved to `center`.
    /// Exact in n = 3, where capacity scales linearly with length.
    pub fn transformed(&self, factor: f64, center: [f64; 3]) -> Result<ChargePotential> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid("dilation factor must be positive"));
        }
        let c0 = self.patch.center;
        let patch = PatchSpec::new(
            &self.patch.shape,
            self.patch.size.iter().map(|s| s * factor).collect(),
            center,
            self.patch.containment_m,
        )?;
        let charges = self
            .charges
            .iter()
            .map(|(y, q)| {
                let p = [0, 1, 2].map(|a| center[a] + (y[a] - c0[a]) * factor);
                (p, q * factor)
            })
            .collect();
        Ok(ChargePotential {
            patch,
            charges,
            cap: self.cap * factor,
            scale: self.scale * factor,
            ..self.clone()
        })
    }

    fn sum(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for (y, q) in &self.charges {
            let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let r = r2.sqrt();
            let c = q / (4.0 * PI * r);
            v += c;
            let gc = -c / r2;
            g[0] += gc * d[0];
            g[1] += gc * d[1];
            g[2] += gc * d[2];
        }
        (v, g)
    }
}

impl PotentialField for ChargePotential {
    fn eval(&self, x: [f64; 3]) -> Result<(f64, [f64; 3])> {
        if self.patch.contains(x)? {
            return Ok((1.0, [0.0; 3]));
        }
        let c = self.patch.center;
        let rho = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
        if rho < self.evaluable_from() {
            return Err(Error::NotEvaluable(format!(
                "point at distance {rho:.3e} from the patch centre is inside the near field \
                 (representation valid from {:.3e})",
                self.evaluable_from()
            )));
        }
        let (v, g) = self.sum(x);
        Ok((v.clamp(0.0, 1.0), g))
    }
    fn capacity(&self) -> f64 {
        self.cap
    }
    fn center(&self) -> [f64; 3] {
        self.patch.center
    }
    fn patch_radius(&self) -> f64 {
        self.scale
    }
    fn evaluable_from(&self) -> f64 {
        self.scale * (1.0 + 4.0 * self.finest_h)
    }
    fn truncation_radius(&self) -> Option<f64> {
        Some(self.truncation * self.scale)
    }
    fn grid_levels(&self) -> Vec<f64> {
        self.levels.iter().map(|h| h * self.scale).collect()
    }
}

/// Solves the exterior potential problem of `patch` (n = 3) on nested graded grids, corrects the
/// truncation bias in `1/R`, and Richardson-extrapolates in `h`.
pub fn compute_capacity(
    patch: &PatchSpec,
    n: usize,
    epsilon: f64,
    params: &CapacitySolverParams,
) -> Result<(CapacityResult, ChargePotential)> {
    if n != 3 {
        return Err(Error::Unsupported(format!("grid capacity solver is n = 3 only, got {n}")));
    }
    if params.levels.is_empty() || params.levels.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::invalid("capacity levels must be positive spacings"));
    }
    if params.truncation < 50.0 * 2.0 {
        return Err(Error::invalid("truncation radius must be at least 50 patch diameters"));
    }
    let shape = patch.shape()?;
    let scale = shape.circumradius(&patch.size);
    let unit: Vec<f64> = patch.size.iter().map(|s| s / scale).collect();
    let ext = shape.half_extents(&unit);
    let uniform = ext.map(|e| params.margin * e + (params.margin - 1.0));
    let mut levels = params.levels.clone();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let problem = |r: f64| OctantProblem {
        shape,
        size: &unit,
        truncation: r,
        tol: params.tol,
        max_iter: params.max_iter,
    };
    let radial_guess = |y: [f64; 3]| {
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        (1.0 / r.max(1.0)).min(1.0)
    };
    let r_trunc = params.truncation;

    // Truncation coefficient from R and 2R on the coarsest level.
    let h0 = levels[0];
    let coarse_2r = problem(2.0 * r_trunc)
        .solve(OctantGrid::new(h0, uniform, 2.0 * r_trunc, params.grading), &radial_guess)?;

    let mut records = Vec::new();
    let mut prev: Option<OctantSolution> = None;
    let mut truncation_fit = f64::NAN;
    for &h in &levels {
        let grid = OctantGrid::new(h, uniform, r_trunc, params.grading);
        let sol = match &prev {
            Some(p) => {
                let (pg, pv) = (&p.grid, &p.psi);
                problem(r_trunc).solve(grid, &|y| pg.interpolate(pv, y))?
            }
            None => problem(r_trunc).solve(grid, &radial_guess)?,
        };
        if prev.is_none() {
            truncation_fit = (1.0 / coarse_2r.cap - 1.0 / sol.cap) * 2.0 * r_trunc;
        }
        records.push(LevelRecord {
            h,
            nodes: sol.grid.len(),
            iterations: sol.iterations,
            cap_truncated: sol.cap,
            cap: 0.0,
        });
        prev = Some(sol);
    }
    let finest = prev.expect("at least one level");

    let analytic = 1.0 / (4.0 * PI);
    let mut flags = Vec::new();
    let rel = (truncation_fit - analytic).abs() / analytic;
    if !(rel <= params.truncation_tolerance) {
        flags.push(format!(
            "truncation coefficient fit {truncation_fit:.5} disagrees with analytic {analytic:.5} \
             by {:.1}%",
            100.0 * rel
        ));
    }
    for rec in &mut records {
        rec.cap = 1.0 / (1.0 / rec.cap_truncated + truncation_fit / r_trunc);
    }

    let caps: Vec<f64> = records.iter().map(|r| r.cap).collect();
    let hs: Vec<f64> = records.iter().map(|r| r.h).collect();
    let (order, extrapolated, error_estimate) = richardson(&hs, &caps, &mut flags);

    let trace = RefinementTrace {
        levels: records,
        truncation_radius: r_trunc * scale,
        truncation_fit,
        truncation_analytic: analytic,
        order,
        extrapolated: extrapolated * scale,
        error_estimate: error_estimate * scale,
        flags,
    };
    let cap = extrapolated * scale;
    let result = CapacityResult::new(cap, epsilon, n, trace)?;
    let potential = charge_potential(patch, &finest, cap, scale, &levels, r_trunc);
    Ok((result, potential))
}

/// Returns (order, extrapolated value, error estimate) for values on levels coarse to fine.
fn richardson(hs: &[f64], caps: &[f64], flags: &mut Vec<String>) -> (f64, f64, f64) {
    let k = caps.len();
    if k == 1 {
        flags.push("single level: no extrapolation".into());
        return (f64::NAN, caps[0], f64::NAN);
    }
    let ratio = hs[k - 2] / hs[k - 1];
    let mut order = 1.0;
    if k >= 3 {
        let q = (caps[k - 3] - caps[k - 2]) / (caps[k - 2] - caps[k - 1]);
        let r0 = hs[k - 3] / hs[k - 2];
        if q > 0.0 && (r0 - ratio).abs() < 1e-9 {
            let p = q.ln() / ratio.ln();
            if (0.5..=4.0).contains(&p) {
                order = p;
            } else {
                flags.push(format!("estimated order {p:.2} outside [0.5, 4]; using 1"));
            }
        } else {
            flags.push("non-monotone refinement; using order 1".into());
        }
    } else {
        flags.push("two levels: assuming order 1".into());
    }
    let corr = (caps[k - 1] - caps[k - 2]) / (ratio.powf(order) - 1.0);
    (order, caps[k - 1] + corr, corr.abs())
}

fn charge_potential(
    patch: &PatchSpec,
    sol: &OctantSolution,
    cap: f64,
    scale: f64,
    levels: &[f64],
    truncation: f64,
) -> ChargePotential {
    let d = sol.grid.dims();
    let mut charges = Vec::new();
    for &(node, flux) in &sol.fluxes {
        let idx = [node % d[0], (node / d[0]) % d[1], node / (d[0] * d[1])];
        let y = sol.grid.point(idx);
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        let q = flux * (1u32 << zeros) as f64;
        for signs in 0..8u32 {
            // Skip reflections that would duplicate a node on a symmetry plane.
            if (0..3).any(|a| (signs >> a) & 1 == 1 && y[a] == 0.0) {
                continue;
            }
            let mut p = patch.center;
            for a in 0..3 {
                let s = if (signs >> a) & 1 == 1 { -1.0 } else { 1.0 };
                p[a] += s * y[a] * scale;
            }
            charges.push((p, q));
        }
    }
    let total: f64 = charges.iter().map(|c| c.1).sum();
    for c in &mut charges {
        c.1 *= cap / total;
    }
    ChargePotential {
        patch: patch.clone(),
        charges,
        cap,
        scale,
        finest_h: *levels.last().unwrap(),
        truncation,
        levels: levels.to_vec(),
    }
}

/// Sup over sampled points of the shell `inner ≤ |x − c| ≤ outer` of `|ψ − cap·N|·|x|/N`.
pub fn check_potential_decay(
    pot: &dyn PotentialField,
    cap: f64,
    containment_radius: f64,
    annulus: (f64, f64),
) -> Result<f64> {
    let (inner, outer) = annulus;
    if !(outer > inner && inner > 0.0) {
        return Err(Error::invalid("decay annulus must satisfy 0 < inner < outer"));
    }
    if inner <= containment_radius.max(pot.patch_radius()) || inner < pot.evaluable_from() {
        return Err(Error::invalid(format!(
            "decay annulus inner radius {inner} intersects the patch containment ball"
        )));
    }
    if let Some(r) = pot.truncation_radius() {
        if outer >= r {
            return Err(Error::invalid("decay annulus reaches the truncation shell"));
        }
    }
    let c = pot.center();
    let dirs = fibonacci_sphere(400);
    let shells = 9;
    let mut sup: f64 = 0.0;
    for s in 0..shells {
        let rho = inner * (outer / inner).powf(s as f64 / (shells - 1) as f64);
        let nval = fundamental_solution(rho, 3);
        for d in &dirs {
            let x = [c[0] + rho * d[0], c[1] + rho * d[1], c[2] + rho * d[2]];
            let (psi, _) = pot.eval(x)?;
            sup = sup.max((psi - cap * nval).abs() * rho / nval);
        }
    }
    Ok(sup)
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}
