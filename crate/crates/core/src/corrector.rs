//! Model corrector `w_ε`, auxiliary field `q_ε`, bridge `η_ε`, stitched corrector `ŵ_ε`, and the
//! quadrature checks of the corrector lemmas.
//!
//! Closed-form evaluators work in any dimension n ≥ 3; every integral is n = 3. Per-site
//! integrals are taken in the site chart, where Σ is `{y_3 = h(y')}` with `h(0) = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::capacity::{equivalent_radius, PotentialField};
use crate::error::{Error, Result};
use crate::geometry::{
    sphere_cap_quadrature, surface_quadrature, volume_quadrature, BoundaryGraph, ChartRegion,
    DomainSpec, LateralBc, ShellOrder, SiteIndex, SiteLayout, VolumeNode,
};
use crate::numerics::{dot3, loglog_slope, norm3, smoothstep5, sub3};
use crate::obstacle_field::{critical_scale, pair_density, DensityField, ObstacleSet};

/// A scalar field on ℝ³ (windows φ and test fields v).
pub type Field3<'a> = &'a (dyn Fn([f64; 3]) -> f64 + Sync);

/// Radial profile `w(ρ)` and `w'(ρ)` of one model corrector.
pub fn model_profile(n: usize, epsilon: f64, r: f64, rho: f64) -> (f64, f64) {
    let e = 2.0 - n as f64;
    if rho <= r {
        return (1.0, 0.0);
    }
    if rho >= epsilon {
        return (0.0, 0.0);
    }
    let den = r.powf(e) - epsilon.powf(e);
    ((rho.powf(e) - epsilon.powf(e)) / den, e * rho.powf(e - 1.0) / den)
}

#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub epsilon: f64,
    pub dim: usize,
    pub r_tilde: Vec<f64>,
    /// `r̃_k · ε^{(n−1)/(n−2)}`.
    pub radii: Vec<f64>,
    graph: BoundaryGraph,
    lateral: LateralBc,
    index: SiteIndex,
}

impl CorrectorField {
    pub fn new(layout: &SiteLayout, r_tilde: &[f64], domain: &DomainSpec) -> Result<Self> {
        let n = domain.dim;
        let eps = layout.epsilon;
        if r_tilde.len() != layout.len() {
            return Err(Error::invalid("one r̃ per site required"));
        }
        let scale = critical_scale(eps, n);
        let radii: Vec<f64> = r_tilde.iter().map(|t| t * scale).collect();
        if let Some(k) = radii.iter().position(|r| !(*r > 0.0 && *r < eps)) {
            return Err(Error::invalid(format!(
                "site {k}: radius {} is not in (0, ε = {eps})",
                radii[k]
            )));
        }
        if let Some(sep) = layout.separation {
            if sep < 2.0 * eps * (1.0 - 1e-12) {
                return Err(Error::invalid("sites closer than 2ε: corrector supports overlap"));
            }
        }
        Ok(CorrectorField {
            epsilon: eps,
            dim: n,
            r_tilde: r_tilde.to_vec(),
            radii,
            graph: domain.chart_graph(),
            lateral: domain.lateral_bc,
            index: SiteIndex::with_lateral(&layout.points, eps, domain.lateral_bc),
        })
    }

    pub fn uniform(layout: &SiteLayout, r_tilde: f64, domain: &DomainSpec) -> Result<Self> {
        Self::new(layout, &vec![r_tilde; layout.len()], domain)
    }

    /// Model correctors at the obstacle set's (equivalent) radii.
    pub fn from_obstacle(obs: &ObstacleSet, domain: &DomainSpec) -> Result<Self> {
        Self::new(&obs.layout, &obs.r_tilde, domain)
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        self.index.points()
    }

    pub fn graph(&self) -> &BoundaryGraph {
        &self.graph
    }

    fn locate(&self, x: &[f64]) -> Option<(usize, Vec<f64>)> {
        let k = self.index.site_within(x, self.epsilon)?;
        Some((k, self.index.offset(x, k)))
    }

    /// Value and gradient of `w_ε`.
    pub fn eval_w(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.dim;
        let Some((k, d)) = self.locate(x) else { return (0.0, vec![0.0; n]) };
        let rho = d.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (w, dw) = model_profile(n, self.epsilon, self.radii[k], rho);
        let g = if dw == 0.0 { vec![0.0; n] } else { d.iter().map(|c| dw * c / rho).collect() };
        (w, g)
    }

    fn site_radial(&self, k: usize, rho: f64) -> (f64, f64) {
        model_profile(self.dim, self.epsilon, self.radii[k], rho)
    }

    /// Global point of a chart offset at site k (lateral coordinates wrapped when periodic).
    fn point(&self, k: usize, offset: [f64; 3]) -> [f64; 3] {
        let s = &self.sites()[k];
        let mut x = [s[0] + offset[0], s[1] + offset[1], s[2] + offset[2]];
        if self.lateral == LateralBc::Periodic {
            for c in x.iter_mut().take(2) {
                *c = c.rem_euclid(1.0);
            }
        }
        x
    }

    fn require_3d(&self) -> Result<()> {
        if self.dim != 3 {
            return Err(Error::Unsupported(format!(
                "corrector quadrature is n = 3 only, got n = {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn aux_q(&self) -> AuxQField {
        let e = 2.0 - self.dim as f64;
        AuxQField {
            epsilon: self.epsilon,
            dim: self.dim,
            kappa: self.r_tilde.iter().map(|t| e / (t.powf(e) - self.epsilon)).collect(),
            index: self.index.clone(),
        }
    }
}

/// `q_ε = κ_k (|x − x_k|² − ε²)/(2ε)` on `B_ε(x_k)`, zero elsewhere.
#[derive(Clone, Debug)]
pub struct AuxQField {
    pub epsilon: f64,
    pub dim: usize,
    pub kappa: Vec<f64>,
    index: SiteIndex,
}

impl AuxQField {
    /// Value, gradient and Laplacian.
    pub fn eval_q(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let n = self.dim;
        let Some(k) = self.index.site_within(x, self.epsilon) else {
            return (0.0, vec![0.0; n], 0.0);
        };
        let d = self.index.offset(x, k);
        let eps = self.epsilon;
        let kap = self.kappa[k];
        let r2: f64 = d.iter().map(|c| c * c).sum();
        (
            kap * (r2 - eps * eps) / (2.0 * eps),
            d.iter().map(|c| kap * c / eps).collect(),
            kap * n as f64 / eps,
        )
    }
}

/// `η(ρ) = 1 − s((ρ − a)/a)` with the quintic smoothstep s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeProfile {
    pub a: f64,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeBounds {
    /// `sup|η'|·a`.
    pub gradient: f64,
    /// `sup|η''|·a²`.
    pub second: f64,
    /// `sup|Δη|·a²`, including the `(n−1)η'/ρ` term.
    pub laplacian: f64,
}

impl BridgeProfile {
    /// `a_ε = ε^{(n−3/2)/(n−2)}`.
    pub fn new(epsilon: f64, n: usize) -> Self {
        let nf = n as f64;
        BridgeProfile { a: epsilon.powf((nf - 1.5) / (nf - 2.0)), dim: n }
    }

    pub fn radial(&self, rho: f64) -> (f64, f64, f64) {
        let (s, ds, dds) = smoothstep5((rho - self.a) / self.a);
        (1.0 - s, -ds / self.a, -dds / (self.a * self.a))
    }

    /// Value, gradient and Laplacian at offset `d = x − x_k`.
    pub fn eval_bridge(&self, d: &[f64]) -> (f64, Vec<f64>, f64) {
        let rho = d.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (e, de, dde) = self.radial(rho);
        if de == 0.0 && dde == 0.0 {
            return (e, vec![0.0; d.len()], 0.0);
        }
        let lap = dde + (self.dim as f64 - 1.0) * de / rho;
        (e, d.iter().map(|c| de * c / rho).collect(), lap)
    }

    /// Sup norms on `[a, 2a]` from `samples` equispaced points.
    pub fn measured_bounds(&self, samples: usize) -> BridgeBounds {
        let mut b = BridgeBounds { gradient: 0.0, second: 0.0, laplacian: 0.0 };
        let a = self.a;
        for i in 0..=samples {
            let rho = a * (1.0 + i as f64 / samples as f64);
            let (_, de, dde) = self.radial(rho);
            b.gradient = b.gradient.max(de.abs() * a);
            b.second = b.second.max(dde.abs() * a * a);
            let lap = dde + (self.dim as f64 - 1.0) * de / rho;
            b.laplacian = b.laplacian.max(lap.abs() * a * a);
        }
        b
    }
}

/// Which part of each ball a norm integrates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// `B_ε(x_k) ∩ D`.
    #[default]
    Clipped,
    /// The whole ball, ignoring D.
    FullBall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorNorms {
    pub l2_sq: f64,
    pub energy: f64,
    pub weighted_energy: f64,
}

fn ball_rule(graph: &BoundaryGraph, lo: f64, hi: f64, coverage: Coverage, order: ShellOrder) -> Result<Vec<VolumeNode>> {
    match coverage {
        Coverage::Clipped => volume_quadrature(graph, lo, hi, order),
        Coverage::FullBall => {
            let upper = volume_quadrature(&BoundaryGraph::flat(), lo, hi, order)?;
            let lower: Vec<VolumeNode> = upper
                .iter()
                .map(|q| VolumeNode { offset: [q.offset[0], q.offset[1], -q.offset[2]], weight: q.weight })
                .collect();
            Ok(upper.into_iter().chain(lower).collect())
        }
    }
}

/// `‖w_ε‖²_{L²}`, `‖∇w_ε‖²_{L²}` and `∫ φ|∇w_ε|²` by per-ball quadrature, summed over sites.
pub fn corrector_norms(
    field: &CorrectorField,
    window: Option<Field3<'_>>,
    coverage: Coverage,
    order: ShellOrder,
) -> Result<CorrectorNorms> {
    field.require_3d()?;
    let mut out = CorrectorNorms { l2_sq: 0.0, energy: 0.0, weighted_energy: 0.0 };
    let eps = field.epsilon;
    let mut cached: Option<(f64, Vec<VolumeNode>, Vec<VolumeNode>)> = None;
    for k in 0..field.len() {
        let r = field.radii[k];
        if cached.as_ref().map_or(true, |c| c.0 != r) {
            cached = Some((
                r,
                ball_rule(&field.graph, 0.0, r, coverage, order)?,
                ball_rule(&field.graph, r, eps, coverage, order)?,
            ));
        }
        let (_, inner, shell) = cached.as_ref().unwrap();
        out.l2_sq += inner.iter().map(|q| q.weight).sum::<f64>();
        for q in shell {
            let rho = norm3(q.offset);
            let (w, dw) = field.site_radial(k, rho);
            out.l2_sq += q.weight * w * w;
            let e = q.weight * dw * dw;
            out.energy += e;
            out.weighted_energy += match window {
                Some(phi) => e * phi(field.point(k, q.offset)),
                None => e,
            };
        }
    }
    Ok(out)
}

/// Flux integrals `∫ φ v ∂_ν w_ε` over the three boundary portions of `(B_ε ∖ B_r) ∩ D`,
/// with ν the outward normal of that region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTerms {
    /// `∂B_r ∩ D`.
    pub term_r: f64,
    /// `∂D ∩ (B_ε ∖ B_r)`.
    pub term_dd: f64,
    /// `∂B_ε ∩ D`.
    pub term_db: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceOrder {
    pub radial: usize,
    pub polar: usize,
    pub azimuthal: usize,
}

impl Default for SurfaceOrder {
    fn default() -> Self {
        SurfaceOrder { radial: 24, polar: 16, azimuthal: 32 }
    }
}

pub fn boundary_terms(
    field: &CorrectorField,
    k: usize,
    phi: Field3<'_>,
    v: Field3<'_>,
    order: SurfaceOrder,
) -> Result<BoundaryTerms> {
    field.require_3d()?;
    if k >= field.len() {
        return Err(Error::invalid(format!("no site {k}")));
    }
    let (r, eps) = (field.radii[k], field.epsilon);
    let g = &field.graph;
    let weight = |x: [f64; 3]| phi(x) * v(x);
    let inner_flux = -field.site_radial(k, r * (1.0 + 1e-12)).1;
    let term_r: f64 = sphere_cap_quadrature(g, r, order.polar, order.azimuthal)
        .iter()
        .map(|q| q.weight * weight(field.point(k, q.point)) * inner_flux)
        .sum();
    let outer_flux = field.site_radial(k, eps * (1.0 - 1e-12)).1;
    let term_db: f64 = sphere_cap_quadrature(g, eps, order.polar, order.azimuthal)
        .iter()
        .map(|q| q.weight * weight(field.point(k, q.point)) * outer_flux)
        .sum();
    let term_dd = if g.is_flat() {
        0.0
    } else {
        surface_quadrature(g, ChartRegion::Shell { inner: r, outer: eps }, order.radial)?
            .iter()
            .map(|q| {
                let rho = norm3(q.point);
                let dw = field.site_radial(k, rho).1;
                let radial_dot_nu = -dot3(q.point, q.normal) / rho;
                q.weight * weight(field.point(k, q.point)) * dw * radial_dot_nu
            })
            .sum()
    };
    Ok(BoundaryTerms { term_r, term_dd, term_db })
}

/// `Σ_k |term_dD(k)|`.
pub fn second_term_total(field: &CorrectorField, phi: Field3<'_>, v: Field3<'_>, order: SurfaceOrder) -> Result<f64> {
    if field.graph.is_flat() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for k in 0..field.len() {
        s += boundary_terms(field, k, phi, v, order)?.term_dd.abs();
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub epsilons: Vec<f64>,
    pub totals: Vec<f64>,
    /// Log-log slope; `None` when every total is exactly zero.
    pub slope: Option<f64>,
    pub identically_zero: bool,
}

/// Second-term totals across an ε sweep (one field per ε) and their log-log slope.
pub fn second_term_rate(
    fields: &[CorrectorField],
    phi: Field3<'_>,
    v: Field3<'_>,
    order: SurfaceOrder,
) -> Result<RateEstimate> {
    if fields.len() < 3 {
        return Err(Error::invalid("a rate needs at least 3 values of ε"));
    }
    let epsilons: Vec<f64> = fields.iter().map(|f| f.epsilon).collect();
    let totals = fields
        .iter()
        .map(|f| second_term_total(f, phi, v, order))
        .collect::<Result<Vec<f64>>>()?;
    let identically_zero = totals.iter().all(|t| *t == 0.0);
    let slope = if identically_zero { None } else { loglog_slope(&epsilons, &totals) };
    Ok(RateEstimate { epsilons, totals, slope, identically_zero })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThirdTerm {
    /// `Σ_k term_dB(k)`.
    pub lhs: f64,
    /// `−∫ φ v dμ̂_ε`.
    pub rhs: f64,
    pub gap: f64,
    /// `gap/|rhs|` (0 when both sides vanish).
    pub relative: f64,
}

pub fn third_term_reduced(
    field: &CorrectorField,
    density: &DensityField,
    phi: Field3<'_>,
    v: Field3<'_>,
    order: SurfaceOrder,
) -> Result<ThirdTerm> {
    if density.len() != field.len() {
        return Err(Error::invalid("density and corrector have different sites"));
    }
    let mut lhs = 0.0;
    for k in 0..field.len() {
        lhs += boundary_terms(field, k, phi, v, order)?.term_db;
    }
    let rhs = -pair_density(density, &|x: &[f64]| {
        let p = [x[0], x[1], x[2]];
        phi(p) * v(p)
    })?;
    let gap = (lhs - rhs).abs();
    let relative = if rhs == 0.0 { if gap == 0.0 { 0.0 } else { f64::INFINITY } } else { gap / rhs.abs() };
    Ok(ThirdTerm { lhs, rhs, gap, relative })
}

/// `ŵ_ε = η ψ + (1 − η) w` per site, with ψ a translated capacitary potential and w the model
/// corrector at the equivalent radius.
#[derive(Clone)]
pub struct StitchedCorrector {
    pub model: CorrectorField,
    pub bridge: BridgeProfile,
    template: Arc<dyn PotentialField>,
}

struct Pieces {
    psi: f64,
    gpsi: [f64; 3],
    w: f64,
    gw: [f64; 3],
    eta: f64,
    geta: [f64; 3],
    lap_eta: f64,
}

impl StitchedCorrector {
    /// `template` is the potential of one patch centred at the origin; every site carries a
    /// translated copy.
    pub fn new(layout: &SiteLayout, domain: &DomainSpec, template: Arc<dyn PotentialField>) -> Result<Self> {
        if domain.dim != 3 {
            return Err(Error::Unsupported("stitched correctors are n = 3 only".into()));
        }
        if norm3(template.center()) > 1e-14 {
            return Err(Error::invalid("template potential must be centred at the origin"));
        }
        let eps = layout.epsilon;
        let bridge = BridgeProfile::new(eps, 3);
        let a = bridge.a;
        if 2.0 * a > eps {
            return Err(Error::invalid(format!("bridge needs 2a_ε ≤ ε (a_ε = {a}, ε = {eps})")));
        }
        if template.patch_radius() >= a || template.evaluable_from() > a {
            return Err(Error::NotEvaluable(format!(
                "potential trusted only beyond {:.3e}, bridge starts at a_ε = {a:.3e}",
                template.evaluable_from().max(template.patch_radius())
            )));
        }
        if let Some(t) = template.truncation_radius() {
            if t < 4.0 * a {
                return Err(Error::NotEvaluable("potential truncated inside 4a_ε".into()));
            }
        }
        let (_, r_tilde) = equivalent_radius(template.capacity(), 3, eps)?;
        let model = CorrectorField::uniform(layout, r_tilde, domain)?;
        Ok(StitchedCorrector { model, bridge, template })
    }

    pub fn a(&self) -> f64 {
        self.bridge.a
    }

    pub fn template(&self) -> &dyn PotentialField {
        self.template.as_ref()
    }

    fn pieces(&self, d: [f64; 3]) -> Result<Pieces> {
        let rho = norm3(d);
        let (psi, gpsi) = self.template.eval(d)?;
        let (w, dw) = model_profile(3, self.model.epsilon, self.model.radii[0], rho);
        let (eta, de, dde) = self.bridge.radial(rho);
        let u = if rho > 0.0 { d.map(|c| c / rho) } else { [0.0; 3] };
        Ok(Pieces {
            psi,
            gpsi,
            w,
            gw: u.map(|c| dw * c),
            eta,
            geta: u.map(|c| de * c),
            lap_eta: if de == 0.0 && dde == 0.0 { 0.0 } else { dde + 2.0 * de / rho },
        })
    }

    fn eval_offset(&self, d: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let rho = norm3(d);
        let a = self.bridge.a;
        if rho >= 2.0 * a {
            let (w, dw) = model_profile(3, self.model.epsilon, self.model.radii[0], rho);
            return Ok((w, d.map(|c| dw * c / rho)));
        }
        if rho <= a {
            return self.template.eval(d);
        }
        let p = self.pieces(d)?;
        let v = p.eta * p.psi + (1.0 - p.eta) * p.w;
        let g = [0, 1, 2]
            .map(|i| p.eta * p.gpsi[i] + (1.0 - p.eta) * p.gw[i] + (p.psi - p.w) * p.geta[i]);
        Ok((v, g))
    }

    /// Value and gradient of `ŵ_ε`.
    pub fn eval_stitched(&self, x: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let Some((_, d)) = self.model.locate(&x) else { return Ok((0.0, [0.0; 3])) };
        self.eval_offset([d[0], d[1], d[2]])
    }

    /// Sample offsets in `{a ≤ ρ ≤ 2a} ∩ D` (chart coordinates).
    fn bridge_samples(&self, radii: usize, directions: usize) -> Vec<[f64; 3]> {
        let a = self.bridge.a;
        let g = &self.model.graph;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut out = Vec::new();
        for i in 0..=radii {
            let rho = a * (1.0 + i as f64 / radii as f64);
            for j in 0..directions {
                // Fibonacci points on the whole sphere, keeping those inside D.
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / directions as f64;
                let s = (1.0 - z * z).sqrt();
                let t = golden * j as f64;
                let d = [rho * s * t.cos(), rho * s * t.sin(), rho * z];
                if d[2] >= g.height([d[0], d[1]]) {
                    out.push(d);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchGap {
    pub sup_gap: f64,
    pub sup_grad_gap: f64,
    /// `sup_gap / ε`.
    pub gap_scaled: f64,
    /// `sup_grad_gap · ε^{1/(2(n−2))}`.
    pub grad_gap_scaled: f64,
}

/// Sup of `|ψ − w|` and `|∇ψ − ∇w|` over sampled points of the bridge annulus.
pub fn stitch_gap(sc: &StitchedCorrector, radii: usize, directions: usize) -> Result<StitchGap> {
    let mut sup_gap: f64 = 0.0;
    let mut sup_grad: f64 = 0.0;
    for d in sc.bridge_samples(radii, directions) {
        let p = sc.pieces(d)?;
        sup_gap = sup_gap.max((p.psi - p.w).abs());
        sup_grad = sup_grad.max(norm3(sub3(p.gpsi, p.gw)));
    }
    let eps = sc.model.epsilon;
    Ok(StitchGap {
        sup_gap,
        sup_grad_gap: sup_grad,
        gap_scaled: sup_gap / eps,
        grad_gap_scaled: sup_grad * eps.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchedDiagnostics {
    /// `∫_D |∇ŵ_ε|²`.
    pub energy: f64,
    /// `∫_D |∇w_ε|²` of the model corrector at the equivalent radius.
    pub model_energy: f64,
    /// Sup of `|Δŵ_ε|` over the bridge annulus.
    pub laplacian_sup: f64,
    /// `laplacian_sup · a_ε² / ε`.
    pub laplacian_scaled: f64,
    pub dd_bridge_term: f64,
    pub dd_cap_term: f64,
}

/// Per-site integrals are translation invariant (same template and chart at every site), so
/// the energies are computed once and multiplied by the site count.
pub fn stitched_diagnostics(
    sc: &StitchedCorrector,
    phi: Field3<'_>,
    v: Field3<'_>,
    order: ShellOrder,
    surface: SurfaceOrder,
) -> Result<StitchedDiagnostics> {
    let m = &sc.model;
    let g = &m.graph;
    let a = sc.bridge.a;
    let eps = m.epsilon;
    let sites = m.len() as f64;
    let tpl = sc.template.as_ref();
    if m.is_empty() {
        return Ok(StitchedDiagnostics {
            energy: 0.0,
            model_energy: 0.0,
            laplacian_sup: 0.0,
            laplacian_scaled: 0.0,
            dd_bridge_term: 0.0,
            dd_cap_term: 0.0,
        });
    }

    let inner = if g.is_flat() {
        // ½·cap + ∫_{S_a⁺} ψ ∂_r ψ, from Green's identity and the mirror symmetry of ψ.
        let mut s = 0.5 * tpl.capacity();
        for q in sphere_cap_quadrature(g, a, surface.polar, surface.azimuthal) {
            let (psi, gpsi) = tpl.eval(q.point)?;
            s += q.weight * psi * dot3(gpsi, q.normal);
        }
        s
    } else if tpl.is_radial() {
        let mut s = 0.0;
        for q in volume_quadrature(g, tpl.patch_radius(), a, order)? {
            let (_, gpsi) = tpl.eval(q.offset)?;
            s += q.weight * dot3(gpsi, gpsi);
        }
        s
    } else {
        return Err(Error::Unsupported(
            "graph-mode stitched energy needs a radial potential (ball patches)".into(),
        ));
    };
    let mut bridge = 0.0;
    for q in volume_quadrature(g, a, 2.0 * a, order)? {
        let (_, grad) = sc.eval_offset(q.offset)?;
        bridge += q.weight * dot3(grad, grad);
    }
    let mut outer = 0.0;
    for q in volume_quadrature(g, 2.0 * a, eps, order)? {
        let (_, grad) = sc.eval_offset(q.offset)?;
        outer += q.weight * dot3(grad, grad);
    }
    let energy = sites * (inner + bridge + outer);
    let model_energy = corrector_norms(m, None, Coverage::Clipped, order)?.energy;

    let mut lap: f64 = 0.0;
    for d in sc.bridge_samples(16, 400) {
        let p = sc.pieces(d)?;
        let cross = 2.0 * dot3(p.geta, sub3(p.gpsi, p.gw)) + (p.psi - p.w) * p.lap_eta;
        lap = lap.max(cross.abs());
    }

    let shell = surface_quadrature(g, ChartRegion::Shell { inner: a, outer: 2.0 * a }, surface.radial)?;
    let lo = tpl.evaluable_from().max(tpl.patch_radius());
    let cap_region = surface_quadrature(g, ChartRegion::Shell { inner: lo, outer: 2.0 * a }, surface.radial)?;
    let (mut dd_bridge, mut dd_cap) = (0.0, 0.0);
    for k in 0..m.len() {
        for q in &shell {
            let p = sc.pieces(q.point)?;
            let x = m.point(k, q.point);
            let nu = q.normal.map(|c| -c);
            dd_bridge += q.weight * phi(x) * v(x) * (p.psi - p.w) * dot3(p.geta, nu);
        }
        for q in &cap_region {
            let (_, gpsi) = tpl.eval(q.point)?;
            let (eta, _, _) = sc.bridge.radial(norm3(q.point));
            let x = m.point(k, q.point);
            dd_cap += q.weight * (phi(x) * v(x) * eta * dot3(gpsi, q.normal)).abs();
        }
    }
    Ok(StitchedDiagnostics {
        energy,
        model_energy,
        laplacian_sup: lap,
        laplacian_scaled: lap * a * a / eps,
        dd_bridge_term: dd_bridge,
        dd_cap_term: dd_cap,
    })
}

#[cfg(test)]
mod tests;
