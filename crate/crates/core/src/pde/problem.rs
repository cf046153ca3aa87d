//! Grid functions, the ε-scale obstacle problem, the homogenized penalty problem, and the
//! nodal form both are solved in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{Grid, NodeClass};
use crate::error::{Error, Result};
use crate::geometry::LateralBc;
use crate::obstacle_field::ObstacleSet;

/// Nodal values on a grid, images included.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"GRDF";
const VERSION: u32 = 1;

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|p| f(grid.coords(p))).collect();
        GridFunction { grid: grid.clone(), values }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::IncompatibleGrids("max-norm needs identical grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Trapezoid-weighted `L²(D)` norm.
    pub fn l2_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|p| self.grid.dual_volume(p) * self.values[p] * self.values[p])
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian binary: magic, version, N, h, ordering flag (0 = x fastest), lateral flag,
    /// then N³ values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.grid.n() as u64).to_le_bytes());
        buf.extend_from_slice(&self.grid.h().to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&u32::from(self.grid.is_periodic()).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::invalid(format!("{} is not a grid function file", path.display()));
        if buf.len() < 32 || &buf[0..4] != MAGIC {
            return Err(bad());
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        if u32_at(4) != VERSION || u32_at(24) != 0 {
            return Err(bad());
        }
        let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let lateral = if u32_at(28) == 1 { LateralBc::Periodic } else { LateralBc::Dirichlet };
        let grid = Grid::new(n, lateral)?;
        if buf.len() != 32 + 8 * grid.len() {
            return Err(bad());
        }
        let values = buf[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridFunction::new(grid, values)
    }

    /// CSV of the plane `axis = index` with columns x, y, z, u.
    pub fn write_csv_slice(&self, path: &Path, axis: usize, index: usize) -> Result<()> {
        let n = self.grid.n();
        if axis > 2 || index >= n {
            return Err(Error::invalid(format!("no slice {index} along axis {axis}")));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{other:?}")),
        })?;
        w.write_record(["x", "y", "z", "u"])?;
        for p in 0..self.grid.len() {
            if self.grid.ijk(p)[axis] != index {
                continue;
            }
            let x = self.grid.coords(p);
            w.write_record(
                [x[0], x[1], x[2], self.values[p]].iter().map(|v| format!("{v:.12e}")),
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trapezoid `L²(D)` distance; a finer argument is injected onto the coarser grid when the node
/// sets nest.
pub fn l2_distance(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    if u.grid.lateral() != v.grid.lateral() {
        return Err(Error::IncompatibleGrids("lateral conditions differ".into()));
    }
    let (coarse, fine) = if u.grid.n() <= v.grid.n() { (u, v) } else { (v, u) };
    let (nc, nf) = (coarse.grid.n(), fine.grid.n());
    if (nf - 1) % (nc - 1) != 0 {
        return Err(Error::IncompatibleGrids(format!(
            "N = {nf} nodes do not nest onto N = {nc}"
        )));
    }
    let stride = (nf - 1) / (nc - 1);
    let g = &coarse.grid;
    let mut s = 0.0;
    for p in 0..g.len() {
        let [i, j, k] = g.ijk(p);
        let q = fine.grid.index(i * stride, j * stride, k * stride);
        let d = coarse.values[p] - fine.values[q];
        s += g.dual_volume(p) * d * d;
    }
    Ok(s.sqrt())
}

/// Boundary obstacle problem: minimize the Dirichlet energy with `u = g` on Γ and `u ≥ φ` at
/// the constrained nodes.
#[derive(Clone, Debug)]
pub struct VIProblem {
    pub grid: Grid,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
    pub constrained: Vec<bool>,
}

impl VIProblem {
    pub fn new(grid: Grid, g: Vec<f64>, phi: Vec<f64>, constrained: Vec<bool>) -> Result<Self> {
        let len = grid.len();
        if g.len() != len || phi.len() != len || constrained.len() != len {
            return Err(Error::invalid("problem data length does not match the grid"));
        }
        if let Some(p) = (0..len).find(|&p| constrained[p] && !grid.is_unknown(p)) {
            return Err(Error::invalid(format!(
                "node {p} is constrained but is not an unknown ({:?})",
                grid.class(p)
            )));
        }
        if g.iter().chain(&phi).any(|v| !v.is_finite()) {
            return Err(Error::invalid("data must be finite"));
        }
        Ok(VIProblem { grid, g, phi, constrained })
    }

    /// Constrains the unknown nodes in T_ε or S_ε; rejects grids with `h > r_ε/3`.
    pub fn from_obstacle(
        grid: Grid,
        obs: &ObstacleSet,
        g: &dyn Fn([f64; 3]) -> f64,
        phi: &dyn Fn([f64; 3]) -> f64,
    ) -> Result<Self> {
        if obs.dim != 3 {
            return Err(Error::Unsupported("grid problems are n = 3 only".into()));
        }
        if obs.lateral_bc != grid.lateral() {
            return Err(Error::invalid("obstacle and grid use different lateral conditions"));
        }
        if !obs.is_empty() {
            let r = obs.min_feature()?;
            if grid.h() > r / 3.0 * (1.0 + 1e-12) {
                return Err(Error::Resolution(format!(
                    "h = {:.5} exceeds r/3 = {:.5} (ε = {})",
                    grid.h(),
                    r / 3.0,
                    obs.epsilon
                )));
            }
        }
        let len = grid.len();
        let mut gv = vec![0.0; len];
        let mut pv = vec![0.0; len];
        let mut cons = vec![false; len];
        for p in 0..len {
            let x = grid.coords(p);
            gv[p] = g(x);
            pv[p] = phi(x);
            cons[p] = grid.is_unknown(p) && obs.contains(&x);
        }
        VIProblem::new(grid, gv, pv, cons)
    }

    pub fn constrained_count(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    pub fn nodal(&self) -> NodalSystem {
        let rules = (0..self.grid.len())
            .map(|p| {
                if !self.grid.is_unknown(p) {
                    NodeRule::Fixed
                } else if self.constrained[p] {
                    NodeRule::Lower(self.phi[p])
                } else {
                    NodeRule::Free
                }
            })
            .collect();
        NodalSystem::assemble(&self.grid, rules, &self.g, &self.phi, &self.constrained)
    }
}

/// Homogenized problem: Dirichlet energy plus `∫_Σ μ̂ (u − φ)_−² dS`, `u = g` on Γ.
#[derive(Clone, Debug)]
pub struct PenaltyProblem {
    pub grid: Grid,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
}

impl PenaltyProblem {
    pub fn new(grid: Grid, g: Vec<f64>, phi: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let len = grid.len();
        if g.len() != len || phi.len() != len || mu.len() != len {
            return Err(Error::invalid("problem data length does not match the grid"));
        }
        if mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("μ̂ must be finite and non-negative"));
        }
        Ok(PenaltyProblem { grid, g, phi, mu })
    }

    pub fn from_fns(
        grid: Grid,
        g: &dyn Fn([f64; 3]) -> f64,
        phi: &dyn Fn([f64; 3]) -> f64,
        mu: &dyn Fn([f64; 3]) -> f64,
    ) -> Result<Self> {
        let len = grid.len();
        let (mut gv, mut pv, mut mv) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for p in 0..len {
            let x = grid.coords(p);
            gv[p] = g(x);
            pv[p] = phi(x);
            if grid.ijk(p)[2] == 0 {
                mv[p] = mu(x);
            }
        }
        PenaltyProblem::new(grid, gv, pv, mv)
    }

    pub fn penalty_energy(&self, u: &[f64]) -> f64 {
        self.grid
            .sigma_face()
            .map(|p| self.grid.face_area(p) * self.mu[p] * (u[p] - self.phi[p]).min(0.0).powi(2))
            .sum()
    }

    pub fn nodal(&self) -> NodalSystem {
        let h = self.grid.h();
        let rules = (0..self.grid.len())
            .map(|p| {
                if !self.grid.is_unknown(p) {
                    NodeRule::Fixed
                } else if self.grid.class(p) == NodeClass::Sigma && self.mu[p] > 0.0 {
                    NodeRule::Penalty { w: self.grid.face_area(p) / h * self.mu[p], phi: self.phi[p] }
                } else {
                    NodeRule::Free
                }
            })
            .collect();
        let sigma: Vec<bool> = (0..self.grid.len()).map(|p| self.mu[p] > 0.0).collect();
        NodalSystem::assemble(&self.grid, rules, &self.g, &self.phi, &sigma)
    }
}

/// How an unknown node is updated, in units of the link weight `c/h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeRule {
    Fixed,
    Free,
    Lower(f64),
    /// Nodal penalty `w·(u − φ)_−²`.
    Penalty { w: f64, phi: f64 },
}

/// Per-node rules plus the initial iterate (Γ values set, constraints satisfied).
#[derive(Clone, Debug)]
pub struct NodalSystem {
    pub grid: Grid,
    pub rules: Vec<NodeRule>,
    pub init: Vec<f64>,
    /// Magnitude of the data, for relative residuals.
    pub scale: f64,
}

impl NodalSystem {
    fn assemble(grid: &Grid, rules: Vec<NodeRule>, g: &[f64], phi: &[f64], active: &[bool]) -> Self {
        let mut scale: f64 = 0.0;
        let mut init = vec![0.0; grid.len()];
        for p in 0..grid.len() {
            match rules[p] {
                NodeRule::Fixed => {
                    if grid.class(p) == NodeClass::Gamma {
                        init[p] = g[p];
                        scale = scale.max(g[p].abs());
                    }
                }
                NodeRule::Lower(f) => init[p] = f,
                _ => {}
            }
            if active[p] {
                scale = scale.max(phi[p].abs());
            }
        }
        grid.sync_images(&mut init);
        NodalSystem { grid: grid.clone(), rules, init, scale: if scale > 0.0 { scale } else { 1.0 } }
    }

    /// Replaces the unknown values of the initial iterate, re-applying the lower bounds.
    pub fn warm_start(&mut self, u0: &[f64]) -> Result<()> {
        if u0.len() != self.init.len() {
            return Err(Error::invalid("warm start length does not match the grid"));
        }
        for p in 0..u0.len() {
            match self.rules[p] {
                NodeRule::Fixed => {}
                NodeRule::Lower(f) => self.init[p] = u0[p].max(f),
                _ => self.init[p] = u0[p],
            }
        }
        self.grid.sync_images(&mut self.init);
        Ok(())
    }

    /// `h·Σ w (u − φ)_−²` over penalty nodes.
    pub fn penalty_energy(&self, u: &[f64]) -> f64 {
        let s: f64 = self
            .rules
            .iter()
            .zip(u)
            .map(|(r, v)| match r {
                NodeRule::Penalty { w, phi } => w * (v - phi).min(0.0).powi(2),
                _ => 0.0,
            })
            .sum();
        s * self.grid.h()
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.grid.dirichlet_energy(u) + self.penalty_energy(u)
    }

    /// Largest nodal residual `|T_p(u) − u_p|`, with `T_p` the exact (projected) nodal solve.
    pub fn residual(&self, u: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for p in 0..u.len() {
            if self.rules[p] == NodeRule::Fixed {
                continue;
            }
            let [i, j, k] = self.grid.ijk(p);
            let (s, d) = self.grid.stencil(u, i, j, k);
            r = r.max(nodal_update(self.rules[p], u[p], s, d, 1.0).1);
        }
        r
    }
}

/// Relaxed nodal update; returns the new value and the unrelaxed correction size.
#[inline(always)]
pub(crate) fn nodal_update(rule: NodeRule, u: f64, s: f64, d: f64, omega: f64) -> (f64, f64) {
    match rule {
        NodeRule::Fixed => (u, 0.0),
        NodeRule::Free => {
            let t = s / d;
            (u + omega * (t - u), (t - u).abs())
        }
        NodeRule::Lower(phi) => {
            let t = s / d;
            ((u + omega * (t - u)).max(phi), (t.max(phi) - u).abs())
        }
        NodeRule::Penalty { w, phi } => {
            let t1 = s / d;
            let t = if t1 >= phi { t1 } else { (s + w * phi) / (d + w) };
            (u + omega * (t - u), (t - u).abs())
        }
    }
}

/// The problems energy reports are evaluated against.
#[derive(Clone, Copy, Debug)]
pub enum ProblemRef<'a> {
    Vi(&'a VIProblem),
    Penalty(&'a PenaltyProblem),
}

impl ProblemRef<'_> {
    pub fn grid(&self) -> &Grid {
        match self {
            ProblemRef::Vi(p) => &p.grid,
            ProblemRef::Penalty(p) => &p.grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub dirichlet_energy: f64,
    pub penalty_energy: Option<f64>,
    /// Dirichlet plus penalty energy.
    pub total_energy: f64,
    pub kkt_residual: Option<f64>,
    /// Trapezoid mean of u over Σ.
    pub trace_mean: f64,
}

pub fn trace_mean(u: &GridFunction) -> f64 {
    let g = &u.grid;
    let (mut num, mut den) = (0.0, 0.0);
    for p in g.sigma_face() {
        let a = g.face_area(p);
        num += a * u.values[p];
        den += a;
    }
    num / den
}

/// Energies, trace mean, and (for obstacle problems) the complementarity residual
/// `max(|λ|, (φ−u)_+, (−λ)_+, |(u−φ)λ|)` with `λ_p = u_p − S_p/D_p`.
pub fn energy_report(u: &GridFunction, problem: ProblemRef<'_>) -> Result<EnergyReport> {
    if &u.grid != problem.grid() {
        return Err(Error::IncompatibleGrids("solution and problem grids differ".into()));
    }
    let g = &u.grid;
    let v = &u.values;
    let dirichlet = g.dirichlet_energy(v);
    let (penalty, kkt) = match problem {
        ProblemRef::Penalty(p) => (Some(p.penalty_energy(v)), None),
        ProblemRef::Vi(p) => {
            let mut r: f64 = 0.0;
            for node in 0..g.len() {
                if !g.is_unknown(node) {
                    continue;
                }
                let [i, j, k] = g.ijk(node);
                let (s, d) = g.stencil(v, i, j, k);
                let lambda = v[node] - s / d;
                let here = if p.constrained[node] {
                    let gap = v[node] - p.phi[node];
                    (-gap).max(0.0).max((-lambda).max(0.0)).max((gap * lambda).abs())
                } else {
                    lambda.abs()
                };
                r = r.max(here);
            }
            (None, Some(r))
        }
    };
    Ok(EnergyReport {
        dirichlet_energy: dirichlet,
        penalty_energy: penalty,
        total_energy: dirichlet + penalty.unwrap_or(0.0),
        kkt_residual: kkt,
        trace_mean: trace_mean(u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_examples() {
        let g = Grid::new(9, LateralBc::Dirichlet).unwrap();
        let zero = GridFunction::from_fn(&g, |_| 0.0);
        let c = GridFunction::from_fn(&g, |_| 0.3);
        assert!(l2_distance(&zero, &zero).unwrap() == 0.0);
        assert!((l2_distance(&c, &zero).unwrap() - 0.3).abs() < 1e-14);
        // trapezoid of z² on a fine grid against 1/3
        let fine = Grid::new(257, LateralBc::Periodic).unwrap();
        let z = GridFunction::from_fn(&fine, |x| x[2]);
        let zf = GridFunction::from_fn(&fine, |_| 0.0);
        let d = l2_distance(&z, &zf).unwrap();
        assert!((d - (1.0f64 / 3.0).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn injection_and_incompatibility() {
        let c = Grid::new(5, LateralBc::Dirichlet).unwrap();
        let f = Grid::new(9, LateralBc::Dirichlet).unwrap();
        let odd = Grid::new(7, LateralBc::Dirichlet).unwrap();
        let lin = |x: [f64; 3]| x[0] + 2.0 * x[1] - x[2];
        let uc = GridFunction::from_fn(&c, lin);
        let uf = GridFunction::from_fn(&f, lin);
        assert!(l2_distance(&uc, &uf).unwrap() < 1e-15);
        let uo = GridFunction::from_fn(&odd, lin);
        assert!(matches!(l2_distance(&uo, &uf), Err(Error::IncompatibleGrids(_))));
    }

    #[test]
    fn binary_roundtrip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(6, LateralBc::Periodic).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0] * x[1] + x[2]);
        let path = dir.path().join("u.grdf");
        u.write_binary(&path).unwrap();
        assert_eq!(GridFunction::read_binary(&path).unwrap(), u);
        std::fs::write(dir.path().join("junk"), b"nope").unwrap();
        assert!(GridFunction::read_binary(&dir.path().join("junk")).is_err());
        let csv_path = dir.path().join("slice.csv");
        u.write_csv_slice(&csv_path, 2, 0).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 36);
        assert!(u.write_csv_slice(&csv_path, 3, 0).is_err());
    }

    #[test]
    fn constrained_gamma_rejected() {
        let g = Grid::new(5, LateralBc::Dirichlet).unwrap();
        let len = g.len();
        let mut c = vec![false; len];
        c[len - 1] = true;
        assert!(VIProblem::new(g, vec![0.0; len], vec![0.0; len], c).is_err());
    }

    #[test]
    fn penalty_nodal_closed_form() {
        // both branches of the nodal minimizer of d(u − s/d)² + w(u − φ)_−²
        let (s, d, w, phi) = (3.0, 6.0, 2.0, 0.9);
        let (v, _) = nodal_update(NodeRule::Penalty { w, phi }, 0.0, s, d, 1.0);
        assert!((v - (s + w * phi) / (d + w)).abs() < 1e-15);
        let (v, _) = nodal_update(NodeRule::Penalty { w, phi: 0.1 }, 0.0, s, d, 1.0);
        assert_eq!(v, 0.5);
        let (v, r) = nodal_update(NodeRule::Lower(0.7), 0.7, s, d, 1.5);
        assert_eq!((v, r), (0.7, 0.0));
    }
}
