//! Computational domain, the Γ/Σ split of its boundary, boundary graphs, and obstacle-site placement.
//!
//! The domain is the unit box `[0,1]^n` with Σ the bottom face `{x_n = 0}` and Γ the rest of the
//! boundary (the lateral faces drop out of ∂D when they are periodic). In graph mode Σ is locally
//! the graph `x_n = height(x')` of a C^{1,α} function; every obstacle site is the origin of its own
//! chart, with zero tangent plane there, and the same graph profile is used in every chart.

pub mod quadrature;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quadrature::{
    sphere_cap_quadrature, surface_quadrature, volume_quadrature, ChartRegion, ShellOrder,
    SurfaceNode, VolumeNode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LateralBc {
    #[default]
    Dirichlet,
    Periodic,
}

/// Profile families for the Σ graph in a site chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphFamily {
    Flat,
    /// `height = A (cos(k|x'|) − 1)`; smooth, apex at the chart origin.
    SmoothBump { amplitude: f64, wavenumber: f64 },
    /// `height = A ((|x'|² + δ²)^{(1+α)/2} − δ^{1+α})`; a C^{1,α} cusp smoothed at scale δ.
    PowerCusp {
        amplitude: f64,
        alpha: f64,
        smoothing: f64,
    },
}

/// A C^{1,α} boundary graph over a chart in ℝ², together with its regularity constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGraph {
    pub family: GraphFamily,
    /// Hölder exponent of the gradient.
    pub alpha: f64,
    /// `|∇h(x') − ∇h(y')| ≤ holder_const · |x' − y'|^α`.
    pub holder_const: f64,
    /// `|h(x')| ≤ height_const · |x'|^{1+α}`.
    pub height_const: f64,
}

impl BoundaryGraph {
    pub fn flat() -> Self {
        BoundaryGraph {
            family: GraphFamily::Flat,
            alpha: 1.0,
            holder_const: 0.0,
            height_const: 0.0,
        }
    }

    pub fn new(family: GraphFamily) -> Result<Self> {
        match family {
            GraphFamily::Flat => Ok(Self::flat()),
            GraphFamily::SmoothBump { amplitude, wavenumber } => {
                if !amplitude.is_finite() || !wavenumber.is_finite() || wavenumber < 0.0 {
                    return Err(Error::invalid("bump graph parameters must be finite"));
                }
                let k2 = wavenumber * wavenumber;
                Ok(BoundaryGraph {
                    family,
                    alpha: 1.0,
                    holder_const: amplitude.abs() * k2,
                    height_const: 0.5 * amplitude.abs() * k2,
                })
            }
            GraphFamily::PowerCusp { amplitude, alpha, smoothing } => {
                if !amplitude.is_finite() || !alpha.is_finite() || !smoothing.is_finite() {
                    return Err(Error::invalid("cusp graph parameters must be finite"));
                }
                if !(alpha > 0.0 && alpha <= 1.0) || smoothing < 0.0 {
                    return Err(Error::invalid("cusp needs alpha in (0,1] and smoothing >= 0"));
                }
                // x ↦ |x|^{α−1}x has Hölder-α seminorm 2^{1−α}.
                let a = amplitude.abs();
                Ok(BoundaryGraph {
                    family,
                    alpha,
                    holder_const: a * (1.0 + alpha) * 2f64.powf(1.0 - alpha),
                    height_const: a,
                })
            }
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.family, GraphFamily::Flat)
    }

    pub fn height(&self, xp: [f64; 2]) -> f64 {
        let r2 = xp[0] * xp[0] + xp[1] * xp[1];
        match self.family {
            GraphFamily::Flat => 0.0,
            GraphFamily::SmoothBump { amplitude, wavenumber } => {
                amplitude * ((wavenumber * r2.sqrt()).cos() - 1.0)
            }
            GraphFamily::PowerCusp { amplitude, alpha, smoothing } => {
                let p = 1.0 + alpha;
                let d2 = smoothing * smoothing;
                amplitude * ((r2 + d2).powf(0.5 * p) - d2.powf(0.5 * p))
            }
        }
    }

    pub fn gradient(&self, xp: [f64; 2]) -> [f64; 2] {
        let r2 = xp[0] * xp[0] + xp[1] * xp[1];
        match self.family {
            GraphFamily::Flat => [0.0, 0.0],
            GraphFamily::SmoothBump { amplitude, wavenumber } => {
                let r = r2.sqrt();
                if r == 0.0 {
                    return [0.0, 0.0];
                }
                let s = -amplitude * wavenumber * (wavenumber * r).sin() / r;
                [s * xp[0], s * xp[1]]
            }
            GraphFamily::PowerCusp { amplitude, alpha, smoothing } => {
                let p = 1.0 + alpha;
                let base = r2 + smoothing * smoothing;
                if base == 0.0 {
                    return [0.0, 0.0];
                }
                let s = amplitude * p * base.powf(0.5 * p - 1.0);
                [s * xp[0], s * xp[1]]
            }
        }
    }

    /// Height and unit normal pointing into D at the chart point `xp`.
    pub fn eval(&self, xp: [f64; 2]) -> (f64, [f64; 3]) {
        let g = self.gradient(xp);
        let scale = 1.0 / (1.0 + g[0] * g[0] + g[1] * g[1]).sqrt();
        (self.height(xp), [-g[0] * scale, -g[1] * scale, scale])
    }
}

/// Free function form of [`BoundaryGraph::eval`].
pub fn boundary_graph_eval(graph: &BoundaryGraph, xp: [f64; 2]) -> (f64, [f64; 3]) {
    graph.eval(xp)
}

/// Which part of ∂D a boundary point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPart {
    Gamma,
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub lateral_bc: LateralBc,
    /// `None` in flat mode.
    pub graph: Option<BoundaryGraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DomainMode {
    Flat,
    Graph { graph: GraphFamily },
}

pub fn make_domain(mode: DomainMode, n: usize, lateral_bc: LateralBc) -> Result<DomainSpec> {
    if n < 3 {
        return Err(Error::invalid(format!("dimension must be at least 3, got {n}")));
    }
    let graph = match mode {
        DomainMode::Flat => None,
        DomainMode::Graph { graph } => {
            if n != 3 {
                return Err(Error::Unsupported(
                    "graph boundaries are implemented for n = 3 only".into(),
                ));
            }
            Some(BoundaryGraph::new(graph)?)
        }
    };
    Ok(DomainSpec { dim: n, lateral_bc, graph })
}

impl DomainSpec {
    pub fn flat(n: usize) -> Result<Self> {
        make_domain(DomainMode::Flat, n, LateralBc::Dirichlet)
    }

    pub fn is_flat(&self) -> bool {
        self.graph.as_ref().map_or(true, |g| g.is_flat())
    }

    /// The chart graph, flat when none is configured.
    pub fn chart_graph(&self) -> BoundaryGraph {
        self.graph.clone().unwrap_or_else(BoundaryGraph::flat)
    }

    /// Classify a point of the closed box: `None` for interior points.
    pub fn boundary_part(&self, x: &[f64]) -> Option<BoundaryPart> {
        const TOL: f64 = 1e-14;
        let n = self.dim;
        let last = x[n - 1];
        let lateral: Vec<bool> = x[..n - 1]
            .iter()
            .map(|&c| c <= TOL || c >= 1.0 - TOL)
            .collect();
        let on_lateral = self.lateral_bc == LateralBc::Dirichlet && lateral.iter().any(|&b| b);
        if last >= 1.0 - TOL || on_lateral {
            Some(BoundaryPart::Gamma)
        } else if last <= TOL {
            Some(BoundaryPart::Sigma)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlacementScheme {
    #[default]
    Grid,
    PoissonDisk,
}

/// Obstacle sites on Σ at scale ε. Points are full n-vectors with last coordinate 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteLayout {
    pub epsilon: f64,
    pub points: Vec<Vec<f64>>,
    /// Minimum pairwise Euclidean distance; `None` with fewer than two sites.
    pub separation: Option<f64>,
    pub scheme: PlacementScheme,
    pub seed: Option<u64>,
}

impl SiteLayout {
    /// Build a layout from explicit points, enforcing separation ≥ 2ε.
    pub fn from_points(epsilon: f64, points: Vec<Vec<f64>>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        let separation = min_separation(&points);
        if let Some(sep) = separation {
            if sep < 2.0 * epsilon * (1.0 - 1e-12) {
                return Err(Error::LayoutImpossible(format!(
                    "sites are {sep} apart, need at least 2ε = {}",
                    2.0 * epsilon
                )));
            }
        }
        Ok(SiteLayout {
            epsilon,
            points,
            separation,
            scheme: PlacementScheme::Grid,
            seed: None,
        })
    }

    pub fn empty(epsilon: f64) -> Self {
        SiteLayout {
            epsilon,
            points: Vec::new(),
            separation: None,
            scheme: PlacementScheme::Grid,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

/// O(K²) brute-force minimum distance.
pub fn min_separation(points: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = dist(a, b);
            best = Some(best.map_or(d, |m: f64| m.min(d)));
        }
    }
    best
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn place_sites(
    domain: &DomainSpec,
    epsilon: f64,
    scheme: PlacementScheme,
    spacing_factor: f64,
    seed: u64,
) -> Result<SiteLayout> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if !(spacing_factor >= 2.0) {
        return Err(Error::invalid("spacing factor must be at least 2"));
    }
    let n = domain.dim;
    let pitch = spacing_factor * epsilon;
    if pitch > 1.0 {
        return Err(Error::LayoutImpossible(format!(
            "pitch sε = {pitch} exceeds the Σ extent 1"
        )));
    }
    let points = match scheme {
        PlacementScheme::Grid => grid_points(n, pitch),
        PlacementScheme::PoissonDisk => {
            poisson_disk_points(n, epsilon, domain.lateral_bc == LateralBc::Periodic, seed)
        }
    };
    if points.is_empty() {
        return Err(Error::LayoutImpossible("no site fits on Σ".into()));
    }
    let separation = min_separation(&points);
    Ok(SiteLayout {
        epsilon,
        points,
        separation,
        scheme,
        seed: (scheme == PlacementScheme::PoissonDisk).then_some(seed),
    })
}

fn grid_points(n: usize, pitch: f64) -> Vec<Vec<f64>> {
    let m = ((1.0 / pitch) + 1e-9).floor() as usize;
    let offset = 0.5 * (1.0 - m as f64 * pitch);
    let coords: Vec<f64> = (0..m).map(|i| offset + (i as f64 + 0.5) * pitch).collect();
    let total = m.pow((n - 1) as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut p = vec![0.0; n];
        for c in p.iter_mut().take(n - 1) {
            *c = coords[rest % m];
            rest /= m;
        }
        out.push(p);
    }
    out
}

fn poisson_disk_points(n: usize, epsilon: f64, periodic: bool, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 2.0 * epsilon;
    let chart_dim = n - 1;
    let cell_volume = epsilon.powi(chart_dim as i32);
    let attempts = ((200.0 / cell_volume) as usize).clamp(1000, 2_000_000);
    // Buckets must tile [0,1) exactly so periodic wrap-around probes stay one bucket away.
    let cell = 1.0 / (1.0 / radius).floor().max(1.0);
    let mut index = BucketIndex::new(chart_dim, cell);
    let mut points: Vec<Vec<f64>> = Vec::new();
    for _ in 0..attempts {
        // Without wrap-around, sites keep a distance ε from the lateral faces.
        let cand: Vec<f64> = (0..chart_dim)
            .map(|_| {
                let u = rng.gen::<f64>();
                if periodic {
                    u
                } else {
                    epsilon + (1.0 - 2.0 * epsilon) * u
                }
            })
            .collect();
        let clash = index.neighbours(&cand).into_iter().any(|k| {
            let other = &points[k][..chart_dim];
            chart_distance(&cand, other, periodic) < radius
        });
        if !clash {
            index.insert(&cand, points.len());
            let mut p = cand;
            p.push(0.0);
            points.push(p);
        }
    }
    points
}

fn chart_distance(a: &[f64], b: &[f64], periodic: bool) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = (x - y).abs();
            if periodic {
                d = d.min(1.0 - d);
            }
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Uniform bucket grid over chart coordinates.
#[derive(Clone, Debug)]
struct BucketIndex {
    dim: usize,
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl BucketIndex {
    fn new(dim: usize, cell: f64) -> Self {
        BucketIndex { dim, cell, buckets: HashMap::new() }
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        p[..self.dim].iter().map(|c| (c / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, p: &[f64], id: usize) {
        let key = self.key(p);
        self.buckets.entry(key).or_default().push(id);
    }

    /// Candidates in the 3^dim surrounding buckets; periodic wrap is covered by also probing
    /// the image keys at the box edges.
    fn neighbours(&self, p: &[f64]) -> Vec<usize> {
        let base = self.key(p);
        let wrap = (1.0 / self.cell).round() as i64;
        let mut out = Vec::new();
        let total = 3usize.pow(self.dim as u32);
        for combo in 0..total {
            let mut rest = combo;
            let mut key = base.clone();
            for k in key.iter_mut() {
                *k += (rest % 3) as i64 - 1;
                rest /= 3;
            }
            for candidate in [key.clone(), wrapped(&key, wrap)] {
                if let Some(ids) = self.buckets.get(&candidate) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn wrapped(key: &[i64], wrap: i64) -> Vec<i64> {
    key.iter().map(|&k| k.rem_euclid(wrap.max(1))).collect()
}

/// Spatial lookup of the (unique) site within ε of a point. With periodic lateral faces the
/// lateral coordinates are compared by minimum image.
#[derive(Clone, Debug)]
pub struct SiteIndex {
    epsilon: f64,
    periodic: bool,
    index: BucketIndex,
    points: Vec<Vec<f64>>,
}

impl SiteIndex {
    pub fn new(points: &[Vec<f64>], epsilon: f64) -> Self {
        Self::with_lateral(points, epsilon, LateralBc::Dirichlet)
    }

    pub fn with_lateral(points: &[Vec<f64>], epsilon: f64, lateral: LateralBc) -> Self {
        let dim = points.first().map_or(1, |p| p.len().saturating_sub(1).max(1));
        let mut index = BucketIndex::new(dim, 2.0 * epsilon);
        for (k, p) in points.iter().enumerate() {
            index.insert(p, k);
        }
        SiteIndex {
            epsilon,
            periodic: lateral == LateralBc::Periodic,
            index,
            points: points.to_vec(),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Displacement `x − x_k`, minimum image in the lateral coordinates when periodic.
    pub fn offset(&self, x: &[f64], k: usize) -> Vec<f64> {
        let p = &self.points[k];
        let n = p.len();
        (0..n)
            .map(|a| {
                let d = x[a] - p[a];
                if self.periodic && a + 1 < n {
                    d - d.round()
                } else {
                    d
                }
            })
            .collect()
    }

    /// Index of a site with `|x − x_k| < radius` (radius ≤ ε), if any.
    pub fn site_within(&self, x: &[f64], radius: f64) -> Option<usize> {
        debug_assert!(radius <= self.epsilon * (1.0 + 1e-12));
        if self.points.is_empty() {
            return None;
        }
        let n = x.len();
        let lateral = n - 1;
        let shifts = if self.periodic { 3usize.pow(lateral as u32) } else { 1 };
        for s in 0..shifts {
            let mut y = x.to_vec();
            let mut rest = s;
            let mut skip = false;
            if self.periodic {
                for c in y.iter_mut().take(lateral) {
                    let shift = (rest % 3) as f64 - 1.0;
                    rest /= 3;
                    if shift != 0.0 && (*c + shift < -radius || *c + shift > 1.0 + radius) {
                        skip = true;
                    }
                    *c += shift;
                }
            }
            if skip {
                continue;
            }
            if let Some(k) = self.lookup(&y, radius) {
                return Some(k);
            }
        }
        None
    }

    fn lookup(&self, x: &[f64], radius: f64) -> Option<usize> {
        let base = self.index.key(x);
        let total = 3usize.pow(self.index.dim as u32);
        for combo in 0..total {
            let mut rest = combo;
            let mut key = base.clone();
            for k in key.iter_mut() {
                *k += (rest % 3) as i64 - 1;
                rest /= 3;
            }
            if let Some(ids) = self.index.buckets.get(&key) {
                for &id in ids {
                    if dist(x, &self.points[id]) < radius {
                        return Some(id);
                    }
                }
            }
        }
        None
    }
}
