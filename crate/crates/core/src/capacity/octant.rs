//! Finite-volume solve of the truncated exterior problem on one octant of a graded tensor grid.
//!
//! The patch is scaled to unit circumradius. Nodes inside the patch carry ψ = 1, nodes outside
//! the sphere |y| = R carry ψ = 0, and links that cross either boundary are shortened to the
//! exact crossing point so the interface is captured to second order. Symmetry planes get
//! natural conditions through halved dual widths.

use crate::capacity::shapes::PatchShape;
use crate::error::{Error, Result};
use crate::numerics::bisect;

/// Smallest admitted crossing fraction; keeps cut-link stiffness bounded.
const MIN_FRACTION: f64 = 1e-2;

#[derive(Clone, Debug)]
pub(crate) struct OctantGrid {
    pub axes: [Vec<f64>; 3],
}

impl OctantGrid {
    pub fn new(h: f64, uniform_to: [f64; 3], extent: f64, grading: f64) -> Self {
        let axis = |u: f64| {
            let mut x = vec![0.0];
            let mut cur = 0.0;
            while cur < u - 1e-12 {
                cur += h;
                x.push(cur);
            }
            let mut dx = h;
            while cur < extent {
                dx *= grading;
                cur += dx;
                x.push(cur);
            }
            x
        };
        OctantGrid { axes: [axis(uniform_to[0]), axis(uniform_to[1]), axis(uniform_to[2])] }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.axes[0].len(), self.axes[1].len(), self.axes[2].len()]
    }

    pub fn len(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    pub fn point(&self, idx: [usize; 3]) -> [f64; 3] {
        [self.axes[0][idx[0]], self.axes[1][idx[1]], self.axes[2][idx[2]]]
    }

    fn dual_width(&self, axis: usize, i: usize) -> f64 {
        let x = &self.axes[axis];
        let lo = if i == 0 { x[0] } else { 0.5 * (x[i - 1] + x[i]) };
        let hi = if i + 1 == x.len() { x[i] } else { 0.5 * (x[i] + x[i + 1]) };
        hi - lo
    }

    /// Trilinear interpolation of nodal values; outside the grid the nearest face value is used.
    pub fn interpolate(&self, values: &[f64], y: [f64; 3]) -> f64 {
        let d = self.dims();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = &self.axes[a];
            let t = y[a].abs();
            let i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
                Ok(i) => i.min(x.len() - 2),
                Err(i) => i.clamp(1, x.len() - 1) - 1,
            };
            base[a] = i;
            frac[a] = ((t - x[i]) / (x[i + 1] - x[i])).clamp(0.0, 1.0);
        }
        let mut v = 0.0;
        for c in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let bit = (c >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w > 0.0 {
                v += w * values[idx[0] + d[0] * (idx[1] + d[1] * idx[2])];
            }
        }
        v
    }
}

pub(crate) struct OctantSolution {
    pub grid: OctantGrid,
    /// Nodal values on the whole octant grid.
    pub psi: Vec<f64>,
    /// Energy of the full-space truncated problem.
    pub cap: f64,
    pub iterations: usize,
    /// Octant-local flux into each patch node with nonzero flux: (node index, flux).
    pub fluxes: Vec<(usize, f64)>,
}

pub(crate) struct OctantProblem<'a> {
    pub shape: &'a dyn PatchShape,
    pub size: &'a [f64],
    pub truncation: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Matrix-free operator on the full octant grid. Fixed nodes have zero diagonal and are skipped;
/// cut links only change the diagonal because their far end is fixed.
struct Operator {
    dims: [usize; 3],
    widths: [Vec<f64>; 3],
    /// `1 / (x[i+1] − x[i])` per axis.
    inv_len: [Vec<f64>; 3],
    diag: Vec<f64>,
}

impl Operator {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let [wx, wy, wz] = &self.widths;
        let [ix, iy, iz] = &self.inv_len;
        for k in 0..nz {
            for j in 0..ny {
                let wyz = wy[j] * wz[k];
                let wxz_s = if j > 0 { wz[k] * iy[j - 1] } else { 0.0 };
                let wxz_n = if j + 1 < ny { wz[k] * iy[j] } else { 0.0 };
                let row = nx * (j + ny * k);
                for i in 0..nx {
                    let p = row + i;
                    let d = self.diag[p];
                    if d == 0.0 {
                        out[p] = 0.0;
                        continue;
                    }
                    let mut s = d * v[p];
                    if i > 0 {
                        s -= wyz * ix[i - 1] * v[p - 1];
                    }
                    if i + 1 < nx {
                        s -= wyz * ix[i] * v[p + 1];
                    }
                    if j > 0 {
                        s -= wx[i] * wxz_s * v[p - nx];
                    }
                    if j + 1 < ny {
                        s -= wx[i] * wxz_n * v[p + nx];
                    }
                    let wxy = wx[i] * wy[j];
                    if k > 0 {
                        s -= wxy * iz[k - 1] * v[p - nx * ny];
                    }
                    if k + 1 < nz {
                        s -= wxy * iz[k] * v[p + nx * ny];
                    }
                    out[p] = s;
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cell {
    Free,
    Inner,
    Outer,
}

impl OctantProblem<'_> {
    pub fn solve(&self, grid: OctantGrid, init: &dyn Fn([f64; 3]) -> f64) -> Result<OctantSolution> {
        let d = self.grid_dims(&grid)?;
        let n_all = grid.len();
        let mut cells = Vec::with_capacity(n_all);
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let y = grid.point([i, j, k]);
                    cells.push(if self.shape.contains(self.size, y) {
                        Cell::Inner
                    } else if norm(y) >= self.truncation {
                        Cell::Outer
                    } else {
                        Cell::Free
                    });
                }
            }
        }
        if !cells.contains(&Cell::Free) {
            return Err(Error::invalid("capacity grid has no free nodes"));
        }
        let widths: [Vec<f64>; 3] =
            std::array::from_fn(|a| (0..d[a]).map(|i| grid.dual_width(a, i)).collect());
        let inv_len: [Vec<f64>; 3] = std::array::from_fn(|a| {
            grid.axes[a].windows(2).map(|w| 1.0 / (w[1] - w[0])).collect()
        });

        let mut diag = vec![0.0; n_all];
        let mut rhs = vec![0.0; n_all];
        // (free node, patch node, stiffness) and (free node, stiffness) for cut links.
        let mut cut_inner: Vec<(usize, usize, f64)> = Vec::new();
        let mut cut_outer: Vec<(usize, f64)> = Vec::new();
        let strides = [1, d[0], d[0] * d[1]];
        for node in 0..n_all {
            if cells[node] != Cell::Free {
                continue;
            }
            let idx = unflatten(node, d);
            let p = grid.point(idx);
            for (axis, step) in DIRECTIONS {
                let Some(nb) = neighbour(idx, axis, step, d) else { continue };
                let q = grid.point(nb);
                let len = (q[axis] - p[axis]).abs();
                let (o1, o2) = ((axis + 1) % 3, (axis + 2) % 3);
                let area = widths[o1][idx[o1]] * widths[o2][idx[o2]];
                let nb_flat = if step < 0 { node - strides[axis] } else { node + strides[axis] };
                match cells[nb_flat] {
                    Cell::Free => diag[node] += area / len,
                    Cell::Inner => {
                        let t = bisect(0.0, 1.0, |t| self.shape.level(self.size, lerp(p, q, t)))
                            .max(MIN_FRACTION);
                        let c = area / (t * len);
                        diag[node] += c;
                        rhs[node] += c;
                        cut_inner.push((node, nb_flat, c));
                    }
                    Cell::Outer => {
                        let t = bisect(0.0, 1.0, |t| self.truncation - norm(lerp(p, q, t)))
                            .max(MIN_FRACTION);
                        let c = area / (t * len);
                        diag[node] += c;
                        cut_outer.push((node, c));
                    }
                }
            }
        }
        let op = Operator { dims: d, widths, inv_len, diag };

        let mut x: Vec<f64> = (0..n_all)
            .map(|node| {
                if cells[node] == Cell::Free {
                    init(grid.point(unflatten(node, d)))
                } else {
                    0.0
                }
            })
            .collect();
        let iterations = pcg(&op, &rhs, &mut x, self.tol, self.max_iter)?;

        let mut flux = std::collections::BTreeMap::new();
        for &(node, patch_node, c) in &cut_inner {
            *flux.entry(patch_node).or_insert(0.0) += c * (1.0 - x[node]);
        }
        let energy = free_energy(&op, &x, &cells) + cut_energy(&x, &cut_inner, &cut_outer);

        let mut psi = x;
        for (node, cell) in cells.iter().enumerate() {
            match cell {
                Cell::Inner => psi[node] = 1.0,
                Cell::Outer => psi[node] = 0.0,
                Cell::Free => {}
            }
        }
        Ok(OctantSolution {
            grid,
            psi,
            cap: 8.0 * energy,
            iterations,
            fluxes: flux.into_iter().collect(),
        })
    }

    fn grid_dims(&self, grid: &OctantGrid) -> Result<[usize; 3]> {
        let d = grid.dims();
        for a in 0..3 {
            if *grid.axes[a].last().unwrap() < self.truncation {
                return Err(Error::invalid("capacity grid does not reach the truncation sphere"));
            }
        }
        Ok(d)
    }
}

/// `Σ c (ψ_p − ψ_q)²` over links between free nodes, each counted once.
fn free_energy(op: &Operator, x: &[f64], cells: &[Cell]) -> f64 {
    let [nx, ny, nz] = op.dims;
    let [wx, wy, wz] = &op.widths;
    let [ix, iy, iz] = &op.inv_len;
    let mut e = 0.0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = i + nx * (j + ny * k);
                if cells[p] != Cell::Free {
                    continue;
                }
                if i + 1 < nx && cells[p + 1] == Cell::Free {
                    e += wy[j] * wz[k] * ix[i] * (x[p] - x[p + 1]).powi(2);
                }
                if j + 1 < ny && cells[p + nx] == Cell::Free {
                    e += wx[i] * wz[k] * iy[j] * (x[p] - x[p + nx]).powi(2);
                }
                if k + 1 < nz && cells[p + nx * ny] == Cell::Free {
                    e += wx[i] * wy[j] * iz[k] * (x[p] - x[p + nx * ny]).powi(2);
                }
            }
        }
    }
    e
}

fn cut_energy(x: &[f64], inner: &[(usize, usize, f64)], outer: &[(usize, f64)]) -> f64 {
    inner.iter().map(|&(p, _, c)| c * (1.0 - x[p]).powi(2)).sum::<f64>()
        + outer.iter().map(|&(p, c)| c * x[p] * x[p]).sum::<f64>()
}

const DIRECTIONS: [(usize, i8); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];

fn unflatten(node: usize, d: [usize; 3]) -> [usize; 3] {
    [node % d[0], (node / d[0]) % d[1], node / (d[0] * d[1])]
}

fn neighbour(idx: [usize; 3], axis: usize, step: i8, d: [usize; 3]) -> Option<[usize; 3]> {
    let mut nb = idx;
    if step < 0 {
        nb[axis] = idx[axis].checked_sub(1)?;
    } else {
        nb[axis] += 1;
        if nb[axis] >= d[axis] {
            return None;
        }
    }
    Some(nb)
}

fn lerp(p: [f64; 3], q: [f64; 3], t: f64) -> [f64; 3] {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), p[2] + t * (q[2] - p[2])]
}

fn norm(y: [f64; 3]) -> f64 {
    (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt()
}

/// Jacobi-preconditioned conjugate gradients; stops on ‖r‖ ≤ tol·‖b‖.
fn pcg(op: &Operator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let m = b.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let inv_diag: Vec<f64> = op.diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let mut r = vec![0.0; m];
    op.apply(x, &mut r);
    for i in 0..m {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let rr = dot(&r, &r).sqrt();
        if rr <= tol * bnorm {
            return Ok(it);
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        let mut rz_new = 0.0;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
            rz_new += r[i] * z[i];
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= tol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::NotConverged(format!(
        "capacity conjugate gradients: {max_iter} iterations, residual {:.3e}",
        dot(&r, &r).sqrt() / bnorm
    )))
}
