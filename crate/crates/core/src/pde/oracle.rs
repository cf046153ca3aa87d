//! Brute-force active-set enumeration for tiny obstacle problems.

use nalgebra::{DMatrix, DVector};

use super::problem::{GridFunction, VIProblem};
use crate::error::{Error, Result};

pub const MAX_CONSTRAINED: usize = 12;
pub const MAX_NODES_PER_AXIS: usize = 7;

#[derive(Clone, Debug)]
pub struct Candidate {
    /// Constrained-node indices held at φ.
    pub active: Vec<usize>,
    pub energy: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

/// Enumerates every active set, solves the reduced linear system, and returns the lowest-energy
/// KKT-feasible candidate.
pub fn solve_vi_oracle(p: &VIProblem) -> Result<(GridFunction, OracleReport)> {
    let g = &p.grid;
    let cons: Vec<usize> = (0..g.len()).filter(|&i| p.constrained[i]).collect();
    if cons.len() > MAX_CONSTRAINED || g.n() > MAX_NODES_PER_AXIS {
        return Err(Error::invalid(format!(
            "oracle limited to {MAX_CONSTRAINED} constrained nodes on {MAX_NODES_PER_AXIS}³ grids \
             (got {} on {}³)",
            cons.len(),
            g.n()
        )));
    }
    let unknown: Vec<usize> = (0..g.len()).filter(|&i| g.is_unknown(i)).collect();
    let m = unknown.len();
    let mut pos = vec![usize::MAX; g.len()];
    for (a, &i) in unknown.iter().enumerate() {
        pos[i] = a;
    }
    // Stiffness over unknowns from unit probes of the stencil; Γ data goes to the right side.
    let mut base = p.g.clone();
    for &i in &unknown {
        base[i] = 0.0;
    }
    g.sync_images(&mut base);
    let mut k = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (a, &i) in unknown.iter().enumerate() {
        let [x, y, z] = g.ijk(i);
        let (s, d) = g.stencil(&base, x, y, z);
        b[a] = s;
        k[(a, a)] += d;
    }
    for (c, &j) in unknown.iter().enumerate() {
        let mut e = vec![0.0; g.len()];
        e[j] = 1.0;
        g.sync_images(&mut e);
        for (a, &i) in unknown.iter().enumerate() {
            let [x, y, z] = g.ijk(i);
            let (s, _) = g.stencil(&e, x, y, z);
            k[(a, c)] -= s;
        }
    }
    let tol = 1e-10 * p.g.iter().chain(&p.phi).fold(1.0f64, |a, v| a.max(v.abs()));
    let mut candidates = Vec::with_capacity(1 << cons.len());
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << cons.len()) {
        let active: Vec<usize> =
            (0..cons.len()).filter(|b| mask >> b & 1 == 1).map(|b| cons[b]).collect();
        let mut fixed = vec![false; m];
        let mut uval = DVector::<f64>::zeros(m);
        for &i in &active {
            fixed[pos[i]] = true;
            uval[pos[i]] = p.phi[i];
        }
        let free: Vec<usize> = (0..m).filter(|&a| !fixed[a]).collect();
        let mut kr = DMatrix::<f64>::zeros(free.len(), free.len());
        let mut br = DVector::<f64>::zeros(free.len());
        for (r, &a) in free.iter().enumerate() {
            br[r] = b[a];
            for c in 0..m {
                if fixed[c] {
                    br[r] -= k[(a, c)] * uval[c];
                }
            }
            for (cc, &c) in free.iter().enumerate() {
                kr[(r, cc)] = k[(a, c)];
            }
        }
        if !free.is_empty() {
            let sol = kr
                .cholesky()
                .ok_or_else(|| Error::NotConverged("reduced stiffness not positive".into()))?
                .solve(&br);
            for (r, &a) in free.iter().enumerate() {
                uval[a] = sol[r];
            }
        }
        let lambda = &k * &uval - &b;
        let feasible = cons.iter().all(|&i| {
            let a = pos[i];
            if fixed[a] {
                lambda[a] / k[(a, a)] >= -tol
            } else {
                uval[a] >= p.phi[i] - tol
            }
        });
        let mut full = p.g.clone();
        for (a, &i) in unknown.iter().enumerate() {
            full[i] = uval[a];
        }
        g.sync_images(&mut full);
        let energy = g.dirichlet_energy(&full);
        if feasible && best.as_ref().map_or(true, |(_, e, _)| energy < *e) {
            best = Some((candidates.len(), energy, full));
        }
        candidates.push(Candidate { active, energy, feasible });
    }
    let (best, _, values) =
        best.ok_or_else(|| Error::NotConverged("no KKT-feasible active set".into()))?;
    Ok((GridFunction::new(g.clone(), values)?, OracleReport { candidates, best }))
}
