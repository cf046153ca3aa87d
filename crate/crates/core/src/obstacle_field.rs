//! Obstacle sets on Σ (model balls or surface patches), their densities, and weak-convergence
//! diagnostics.
//!
//! Weights are capacity-normalized, `γ_k = cap_k / ε^{n−1}`, and the effective density is
//! `μ̂_ε = Σ_k γ_k / (ω_n ε) · χ_{B_ε(x_k) ∩ D}`. With this normalization a ball carries mass
//! `γ_k ε^{n−1} / 2` in flat mode, which matches its corrector energy as ε → 0, so the limit
//! penalty `∫_Σ (v − φ)_−² μ̂ dS` needs no extra constant.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::capacity::{
    self, capacity_of_ball, compute_capacity, CapacityResult, CapacitySolverParams, ChargePotential,
    PatchSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{
    volume_quadrature, BoundaryGraph, DomainSpec, LateralBc, ShellOrder, SiteIndex, SiteLayout,
};
use crate::numerics::unit_ball_volume;
use crate::pde::{Grid, NodeClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleSpec {
    /// Balls of radius `r̃·ε^{(n−1)/(n−2)}` about every site.
    ModelBalls { r_tilde: f64 },
    /// Patches on Σ; `size` is in units of `ε^{(n−1)/(n−2)}`.
    SurfacePatches {
        shape: String,
        size: Vec<f64>,
        containment_m: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    ModelBalls,
    SurfacePatches,
}

/// Capacity of a patch at unit scale (`ε = 1`), which is its normalized weight γ.
pub trait CapacityProvider: Send + Sync {
    fn unit_capacity(&self, shape: &str, size: &[f64], n: usize) -> Result<CapacityResult>;
}

type CacheKey = (String, Vec<u64>, usize);

/// Grid solver with a cache keyed on (shape, size, n).
pub struct GridCapacity {
    params: CapacitySolverParams,
    cache: Mutex<Vec<(CacheKey, CapacityResult, Arc<ChargePotential>)>>,
}

impl GridCapacity {
    pub fn new(params: CapacitySolverParams) -> Self {
        GridCapacity { params, cache: Mutex::new(Vec::new()) }
    }

    /// Unit-scale capacity and potential of a patch centred at the origin.
    pub fn unit_potential(
        &self,
        shape: &str,
        size: &[f64],
        n: usize,
    ) -> Result<(CapacityResult, Arc<ChargePotential>)> {
        let key = (shape.to_string(), size.iter().map(|s| s.to_bits()).collect(), n);
        if let Some((_, res, pot)) = self.cache.lock().unwrap().iter().find(|(k, _, _)| *k == key) {
            return Ok((res.clone(), pot.clone()));
        }
        let patch = PatchSpec::new(shape, size.to_vec(), [0.0; 3], 1.0)?;
        let (res, pot) = compute_capacity(&patch, n, 1.0, &self.params)?;
        let pot = Arc::new(pot);
        self.cache.lock().unwrap().push((key, res.clone(), pot.clone()));
        Ok((res, pot))
    }
}

impl CapacityProvider for GridCapacity {
    fn unit_capacity(&self, shape: &str, size: &[f64], n: usize) -> Result<CapacityResult> {
        Ok(self.unit_potential(shape, size, n)?.0)
    }
}

/// Closed forms for balls and disks (disk of radius a: 8a); for cheap tests and cross-checks.
pub struct ClosedFormCapacity;

impl CapacityProvider for ClosedFormCapacity {
    fn unit_capacity(&self, shape: &str, size: &[f64], n: usize) -> Result<CapacityResult> {
        let cap = match (shape, size) {
            ("ball", [r]) => capacity_of_ball(*r, n)?,
            ("flat_disk", [a]) if n == 3 => 8.0 * a,
            _ => {
                return Err(Error::Unsupported(format!(
                    "no closed-form capacity for {shape} in n = {n}"
                )))
            }
        };
        let (r_equiv, r_tilde) = capacity::equivalent_radius(cap, n, 1.0)?;
        Ok(CapacityResult {
            cap,
            epsilon: 1.0,
            gamma: cap,
            r_equiv,
            r_tilde,
            trace: capacity::RefinementTrace {
                levels: Vec::new(),
                truncation_radius: f64::INFINITY,
                truncation_fit: f64::NAN,
                truncation_analytic: f64::NAN,
                order: f64::NAN,
                extrapolated: cap,
                error_estimate: 0.0,
                flags: vec!["closed form".into()],
            },
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObstacleSet {
    pub kind: ObstacleKind,
    pub epsilon: f64,
    pub dim: usize,
    pub lateral_bc: LateralBc,
    pub layout: SiteLayout,
    /// Model radii in rescaled units; for patches, the equivalent rescaled radius.
    pub r_tilde: Vec<f64>,
    pub patches: Vec<PatchSpec>,
    pub gamma: Vec<f64>,
    /// Capacity solve behind the patch weights.
    pub capacity: Option<CapacityResult>,
    #[serde(skip)]
    index: Option<SiteIndex>,
}

/// `ε^{(n−1)/(n−2)}`.
pub fn critical_scale(epsilon: f64, n: usize) -> f64 {
    let nf = n as f64;
    epsilon.powf((nf - 1.0) / (nf - 2.0))
}

pub fn build_obstacle(
    spec: &ObstacleSpec,
    layout: &SiteLayout,
    domain: &DomainSpec,
    provider: &dyn CapacityProvider,
    r_tilde_bounds: (f64, f64),
) -> Result<ObstacleSet> {
    let n = domain.dim;
    let eps = layout.epsilon;
    let scale = critical_scale(eps, n);
    let (c1, c2) = r_tilde_bounds;
    let k = layout.len();
    let check_rt = |rt: f64| -> Result<()> {
        if !(rt >= c1 && rt <= c2) {
            return Err(Error::invalid(format!("r̃ = {rt} outside [{c1}, {c2}]")));
        }
        if rt * scale >= eps {
            return Err(Error::invalid(format!(
                "obstacle radius {} is not below ε = {eps}",
                rt * scale
            )));
        }
        Ok(())
    };
    let (kind, r_tilde, patches, gamma, capacity) = match spec {
        ObstacleSpec::ModelBalls { r_tilde } => {
            check_rt(*r_tilde)?;
            let g = capacity_of_ball(*r_tilde, n)?;
            (ObstacleKind::ModelBalls, vec![*r_tilde; k], Vec::new(), vec![g; k], None)
        }
        ObstacleSpec::SurfacePatches { shape, size, containment_m } => {
            if n != 3 {
                return Err(Error::Unsupported("surface patches are n = 3 only".into()));
            }
            let res = provider.unit_capacity(shape, size, n)?;
            check_rt(res.r_tilde)?;
            let phys: Vec<f64> = size.iter().map(|s| s * scale).collect();
            let mut patches = Vec::with_capacity(k);
            for p in &layout.points {
                let spec = PatchSpec::new(shape, phys.clone(), [p[0], p[1], p[2]], *containment_m)?;
                spec.check_containment(eps, n)?;
                patches.push(spec);
            }
            (
                ObstacleKind::SurfacePatches,
                vec![res.r_tilde; k],
                patches,
                vec![res.cap; k],
                Some(res),
            )
        }
    };
    Ok(ObstacleSet {
        kind,
        epsilon: eps,
        dim: n,
        lateral_bc: domain.lateral_bc,
        layout: layout.clone(),
        r_tilde,
        patches,
        gamma,
        capacity,
        index: Some(SiteIndex::with_lateral(&layout.points, eps, domain.lateral_bc)),
    })
}

impl ObstacleSet {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn site_index(&self) -> &SiteIndex {
        self.index.as_ref().expect("obstacle sets are built with an index")
    }

    /// Physical radius: the model radius, or the equivalent radius of a patch.
    pub fn radius(&self, k: usize) -> f64 {
        self.r_tilde[k] * critical_scale(self.epsilon, self.dim)
    }

    /// Smallest obstacle length scale, for the grid resolution rule.
    pub fn min_feature(&self) -> Result<f64> {
        let mut m = f64::INFINITY;
        for k in 0..self.len() {
            let len = match self.kind {
                ObstacleKind::ModelBalls => self.radius(k),
                ObstacleKind::SurfacePatches => {
                    let p = &self.patches[k];
                    p.size.iter().cloned().fold(f64::INFINITY, f64::min)
                }
            };
            m = m.min(len);
        }
        Ok(m)
    }

    /// Exact membership in T_ε (closed balls ∩ {x_n ≥ 0}) or S_ε (patches on the face x_n = 0).
    pub fn contains(&self, x: &[f64]) -> bool {
        let n = self.dim;
        if self.is_empty() || x[n - 1] < 0.0 {
            return false;
        }
        let idx = self.site_index();
        let probe = self.epsilon;
        let Some(k) = idx.site_within(x, probe) else { return false };
        let d = idx.offset(x, k);
        match self.kind {
            ObstacleKind::ModelBalls => {
                let r = self.radius(k);
                d.iter().map(|c| c * c).sum::<f64>() <= r * r * (1.0 + 1e-12)
            }
            ObstacleKind::SurfacePatches => {
                if x[n - 1] != 0.0 {
                    return false;
                }
                let p = &self.patches[k];
                let shape = p.shape().expect("validated at construction");
                shape.contains(&p.size, [d[0], d[1], d[2]])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `μ_ε = Σ γ_k/ε · χ`.
    Raw,
    /// `μ̂_ε = μ_ε / ω_n`.
    Effective,
}

#[derive(Clone, Debug)]
pub struct DensityField {
    pub epsilon: f64,
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub normalization: Normalization,
    graph: BoundaryGraph,
    index: SiteIndex,
}

pub fn density_field(obs: &ObstacleSet, domain: &DomainSpec, normalization: Normalization) -> DensityField {
    DensityField {
        epsilon: obs.epsilon,
        dim: obs.dim,
        gamma: obs.gamma.clone(),
        normalization,
        graph: domain.chart_graph(),
        index: obs.site_index().clone(),
    }
}

impl DensityField {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        self.index.points()
    }

    /// Density value on `B_ε(x_k)` for site k.
    pub fn level(&self, k: usize) -> f64 {
        let raw = self.gamma[k] / self.epsilon;
        match self.normalization {
            Normalization::Raw => raw,
            Normalization::Effective => raw / unit_ball_volume(self.dim),
        }
    }

    /// Pointwise density at a point of D.
    pub fn value(&self, x: &[f64]) -> f64 {
        let Some(k) = self.index.site_within(x, self.epsilon) else { return 0.0 };
        let d = self.index.offset(x, k);
        let n = self.dim;
        let floor = if n == 3 { self.graph.height([d[0], d[1]]) } else { 0.0 };
        if d[n - 1] < floor {
            return 0.0;
        }
        self.level(k)
    }

    /// Mass on `B_ε(x_k) ∩ D`: exact half-ball in flat mode, clipped quadrature otherwise.
    pub fn ball_mass(&self, k: usize) -> Result<f64> {
        let n = self.dim;
        let eps = self.epsilon;
        if self.graph.is_flat() {
            return Ok(self.level(k) * 0.5 * unit_ball_volume(n) * eps.powi(n as i32));
        }
        let vol: f64 = volume_quadrature(&self.graph, 0.0, eps, ShellOrder::default())?
            .iter()
            .map(|q| q.weight)
            .sum();
        Ok(self.level(k) * vol)
    }

    pub fn total_mass(&self) -> Result<f64> {
        (0..self.len()).map(|k| self.ball_mass(k)).sum()
    }
}

/// `∫_D φ dμ̂_ε` by per-ball quadrature, summed in site order (n = 3).
pub fn pair_density(df: &DensityField, phi: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    if df.dim != 3 {
        return Err(Error::Unsupported("pair_density quadrature is n = 3 only".into()));
    }
    if df.is_empty() {
        return Ok(0.0);
    }
    let nodes = volume_quadrature(&df.graph, 0.0, df.epsilon, ShellOrder::default())?;
    let mut total = 0.0;
    for (k, site) in df.sites().iter().enumerate() {
        let mut s = 0.0;
        for q in &nodes {
            let x = [site[0] + q.offset[0], site[1] + q.offset[1], site[2] + q.offset[2]];
            s += q.weight * phi(&x);
        }
        total += df.level(k) * s;
    }
    Ok(total)
}

/// Limit surface density `γ / (2 s^{n−1})` of a lattice layout with pitch `sε` in flat mode.
pub fn analytic_limit_density(spacing_factor: f64, gamma: f64, n: usize) -> f64 {
    gamma / (2.0 * spacing_factor.powi(n as i32 - 1))
}

/// `H^{-1}` distance proxy: with `v = 0` on Γ and natural conditions on Σ, solves
/// `−Δv = μ̂_ε − μ̂ δ_Σ` on the grid and returns `‖∇v‖_{L²(D)}`.
pub fn hminus_proxy(df: &DensityField, mu_limit: f64, grid: &Grid) -> Result<f64> {
    let loads = hminus_loads(df, mu_limit, grid)?;
    hminus_indicator(grid, &loads)
}

/// Nodal loads: each ball's volume density lumped with dual volumes and rescaled to the exact
/// ball mass, minus the limit density lumped on Σ with trapezoid face weights.
pub fn hminus_loads(df: &DensityField, mu_limit: f64, grid: &Grid) -> Result<Vec<f64>> {
    if df.dim != 3 {
        return Err(Error::Unsupported("grid problems are n = 3 only".into()));
    }
    if df.epsilon < 4.0 * grid.h() {
        return Err(Error::Resolution(format!(
            "ε = {} is below 4h = {}",
            df.epsilon,
            4.0 * grid.h()
        )));
    }
    let mut loads = vec![0.0; grid.len()];
    let mut per_ball: Vec<Vec<(usize, f64)>> = vec![Vec::new(); df.len()];
    for node in 0..grid.len() {
        if !grid.is_unknown(node) {
            continue;
        }
        let x = grid.coords(node);
        if mu_limit != 0.0 && grid.class(node) == NodeClass::Sigma {
            loads[node] -= mu_limit * grid.face_area(node);
        }
        if let Some(k) = df.index.site_within(&x, df.epsilon) {
            let d = df.index.offset(&x, k);
            if d[2] >= 0.0 {
                per_ball[k].push((node, grid.dual_volume(node)));
            }
        }
    }
    for (k, nodes) in per_ball.iter().enumerate() {
        let vol: f64 = nodes.iter().map(|(_, v)| v).sum();
        if vol == 0.0 {
            continue;
        }
        let scale = df.ball_mass(k)? / vol;
        for &(node, v) in nodes {
            loads[node] += scale * v;
        }
    }
    Ok(loads)
}

/// `sqrt(fᵀ A⁻¹ f)` for the grid Laplacian with zero data on Γ.
pub fn hminus_indicator(grid: &Grid, loads: &[f64]) -> Result<f64> {
    if loads.iter().all(|f| *f == 0.0) {
        return Ok(0.0);
    }
    let (v, _) = grid.poisson_solve(loads, 1e-10, 100_000)?;
    let e: f64 = v.iter().zip(loads).map(|(a, b)| a * b).sum();
    Ok(e.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{place_sites, PlacementScheme};
    use std::f64::consts::PI;

    fn flat3() -> DomainSpec {
        DomainSpec::flat(3).unwrap()
    }

    #[test]
    fn model_weights_are_ball_capacities() {
        let d = flat3();
        let l = place_sites(&d, 0.1, PlacementScheme::Grid, 2.0, 0).unwrap();
        let o = build_obstacle(
            &ObstacleSpec::ModelBalls { r_tilde: 1.0 },
            &l,
            &d,
            &ClosedFormCapacity,
            (0.5, 2.0),
        )
        .unwrap();
        assert!(o.gamma.iter().all(|g| (g - 4.0 * PI).abs() < 1e-12));
        assert!((o.radius(0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn disk_patch_weights_are_scale_free() {
        let d = flat3();
        for eps in [0.1, 0.05] {
            let l = place_sites(&d, eps, PlacementScheme::Grid, 2.0, 0).unwrap();
            let o = build_obstacle(
                &ObstacleSpec::SurfacePatches {
                    shape: "flat_disk".into(),
                    size: vec![0.02],
                    containment_m: 1.0,
                },
                &l,
                &d,
                &ClosedFormCapacity,
                (0.01, 2.0),
            )
            .unwrap();
            assert!(o.gamma.iter().all(|g| (g - 0.16).abs() < 1e-12));
            assert!((o.patches[0].size[0] - 0.02 * eps * eps).abs() < 1e-15);
        }
    }

    #[test]
    fn r_tilde_bounds_enforced() {
        let d = flat3();
        let l = place_sites(&d, 0.1, PlacementScheme::Grid, 2.0, 0).unwrap();
        let spec = ObstacleSpec::ModelBalls { r_tilde: 3.0 };
        assert!(build_obstacle(&spec, &l, &d, &ClosedFormCapacity, (0.5, 2.0)).is_err());
        // r = r̃ε² must stay below ε.
        let spec = ObstacleSpec::ModelBalls { r_tilde: 10.0 };
        assert!(build_obstacle(&spec, &l, &d, &ClosedFormCapacity, (0.5, 20.0)).is_err());
    }

    #[test]
    fn empty_layout_has_zero_density() {
        let d = flat3();
        let l = SiteLayout::empty(0.1);
        let o = build_obstacle(
            &ObstacleSpec::ModelBalls { r_tilde: 1.0 },
            &l,
            &d,
            &ClosedFormCapacity,
            (0.5, 2.0),
        )
        .unwrap();
        assert!(o.is_empty());
        let df = density_field(&o, &d, Normalization::Effective);
        assert_eq!(df.total_mass().unwrap(), 0.0);
        assert_eq!(pair_density(&df, &|_| 1.0).unwrap(), 0.0);
        assert!(!o.contains(&[0.5, 0.5, 0.0]));
    }

    #[test]
    fn single_ball_mass() {
        let d = flat3();
        let l = SiteLayout::from_points(0.1, vec![vec![0.5, 0.5, 0.0]]).unwrap();
        let o = build_obstacle(
            &ObstacleSpec::ModelBalls { r_tilde: 1.0 },
            &l,
            &d,
            &ClosedFormCapacity,
            (0.5, 2.0),
        )
        .unwrap();
        let df = density_field(&o, &d, Normalization::Effective);
        // (1/ω₃)·4π·(1/0.1)·(ω₃/2)(0.1)³ = 2π·10⁻².
        let m = df.ball_mass(0).unwrap();
        assert!((m - 0.0628319).abs() < 1e-6);
        let q = pair_density(&df, &|_| 1.0).unwrap();
        assert!((q - m).abs() < 1e-12);
        let lin = pair_density(&df, &|x| x[0]).unwrap();
        assert!((lin - 0.5 * m).abs() < 1e-12);
        assert_eq!(df.value(&[0.5, 0.5, 0.05]), df.level(0));
        assert_eq!(df.value(&[0.7, 0.5, 0.0]), 0.0);
        let raw = density_field(&o, &d, Normalization::Raw);
        assert!((raw.ball_mass(0).unwrap() / m - unit_ball_volume(3)).abs() < 1e-12);
    }

    #[test]
    fn lattice_mass_matches_cell_formula() {
        let d = flat3();
        for eps in [0.1, 0.05, 0.025] {
            let l = place_sites(&d, eps, PlacementScheme::Grid, 2.0, 0).unwrap();
            let o = build_obstacle(
                &ObstacleSpec::ModelBalls { r_tilde: 1.0 },
                &l,
                &d,
                &ClosedFormCapacity,
                (0.5, 2.0),
            )
            .unwrap();
            let df = density_field(&o, &d, Normalization::Effective);
            let per_cell = analytic_limit_density(2.0, 4.0 * PI, 3) * (2.0 * eps).powi(2);
            let expected = per_cell * l.len() as f64;
            assert!((df.total_mass().unwrap() - expected).abs() < 1e-10 * expected);
        }
    }

    #[test]
    fn analytic_limit_values() {
        assert!((analytic_limit_density(2.0, 4.0 * PI, 3) - PI / 2.0).abs() < 1e-15);
        assert!((analytic_limit_density(2.0, 8.0 * PI, 3) - PI).abs() < 1e-15);
        assert_eq!(analytic_limit_density(2.0, 0.0, 3), 0.0);
    }

    #[test]
    fn membership_model_and_patch() {
        let d = flat3();
        let l = SiteLayout::from_points(0.1, vec![vec![0.5, 0.5, 0.0]]).unwrap();
        let o = build_obstacle(
            &ObstacleSpec::ModelBalls { r_tilde: 1.0 },
            &l,
            &d,
            &ClosedFormCapacity,
            (0.5, 2.0),
        )
        .unwrap();
        assert!(o.contains(&[0.5, 0.5, 0.0099]));
        assert!(!o.contains(&[0.5, 0.5, 0.0101]));
        let p = build_obstacle(
            &ObstacleSpec::SurfacePatches {
                shape: "flat_square".into(),
                size: vec![1.0],
                containment_m: 1.5,
            },
            &l,
            &d,
            &ClosedFormCapacity,
            (0.01, 2.0),
        );
        // No closed form for squares.
        assert!(p.is_err());
    }
}
