//! Uniform vertex-centred grid on the unit cube with the Γ/Σ node classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LateralBc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    /// Bottom face `z = 0` (natural condition unless constrained).
    Sigma,
    /// Dirichlet nodes: top face, and lateral faces when they are not periodic.
    Gamma,
    /// Duplicate of a primary node across a periodic face.
    PeriodicImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    lateral: LateralBc,
}

impl Grid {
    pub fn new(n: usize, lateral: LateralBc) -> Result<Self> {
        if n < 5 {
            return Err(Error::invalid(format!("grid needs N >= 5 nodes per axis, got {n}")));
        }
        Ok(Grid { n, h: 1.0 / (n - 1) as f64, lateral })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lateral(&self) -> LateralBc {
        self.lateral
    }

    pub fn is_periodic(&self) -> bool {
        self.lateral == LateralBc::Periodic
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        [i as f64 * self.h, j as f64 * self.h, k as f64 * self.h]
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        let [i, j, k] = self.ijk(idx);
        let last = self.n - 1;
        if k == last {
            return NodeClass::Gamma;
        }
        match self.lateral {
            LateralBc::Dirichlet if i == 0 || i == last || j == 0 || j == last => NodeClass::Gamma,
            LateralBc::Periodic if i == last || j == last => NodeClass::PeriodicImage,
            _ if k == 0 => NodeClass::Sigma,
            _ => NodeClass::Interior,
        }
    }

    /// Nodes whose value is solved for.
    pub fn is_unknown(&self, idx: usize) -> bool {
        matches!(self.class(idx), NodeClass::Interior | NodeClass::Sigma)
    }

    /// Nodes carrying independent values (everything except periodic images).
    pub fn is_primary(&self, idx: usize) -> bool {
        !self.is_periodic() || {
            let [i, j, _] = self.ijk(idx);
            i + 1 < self.n && j + 1 < self.n
        }
    }

    /// Canonical node of a periodic image; identity otherwise.
    pub fn primary(&self, idx: usize) -> usize {
        if !self.is_periodic() {
            return idx;
        }
        let [i, j, k] = self.ijk(idx);
        let last = self.n - 1;
        self.index(if i == last { 0 } else { i }, if j == last { 0 } else { j }, k)
    }

    /// Swaps the two faces of `axis` (0 or 1) on periodic grids; an involution.
    pub fn periodic_pair(&self, idx: usize, axis: usize) -> usize {
        let mut c = self.ijk(idx);
        let last = self.n - 1;
        if self.is_periodic() && axis < 2 {
            if c[axis] == 0 {
                c[axis] = last;
            } else if c[axis] == last {
                c[axis] = 0;
            }
        }
        self.index(c[0], c[1], c[2])
    }

    /// Trapezoid factor of index `i` along a non-periodic axis.
    fn face_factor(&self, i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            0.5
        } else {
            1.0
        }
    }

    fn lateral_factor(&self, i: usize) -> f64 {
        if self.is_periodic() {
            1.0
        } else {
            self.face_factor(i)
        }
    }

    /// Trapezoid cell volume of a primary node (0 for periodic images).
    pub fn dual_volume(&self, idx: usize) -> f64 {
        if !self.is_primary(idx) {
            return 0.0;
        }
        let [i, j, k] = self.ijk(idx);
        self.h.powi(3) * self.lateral_factor(i) * self.lateral_factor(j) * self.face_factor(k)
    }

    /// Trapezoid face weight on `z = 0` (0 off the face and for periodic images).
    pub fn face_area(&self, idx: usize) -> f64 {
        let [i, j, k] = self.ijk(idx);
        if k != 0 || !self.is_primary(idx) {
            return 0.0;
        }
        self.h * self.h * self.lateral_factor(i) * self.lateral_factor(j)
    }

    /// Primary nodes on `z = 0`.
    pub fn sigma_face(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n * self.n).filter(move |&p| self.is_primary(p))
    }

    /// All nodes (images included) with `z = 0`.
    pub fn bottom_face_nodes(&self) -> usize {
        self.n * self.n
    }

    /// Neighbour sum `S = Σ c'·u_j` and `D = Σ c'` for an unknown node, with link weights
    /// `c' = c/h` (1, or ½ for links inside the Σ face).
    #[inline(always)]
    pub(crate) fn stencil(&self, u: &[f64], i: usize, j: usize, k: usize) -> (f64, f64) {
        let n = self.n;
        let nn = n * n;
        let p = i + n * (j + n * k);
        let (xm, xp, ym, yp) = if self.is_periodic() {
            let m = n - 1;
            let im = if i == 0 { m - 1 } else { i - 1 };
            let ip = if i + 1 == m { 0 } else { i + 1 };
            let jm = if j == 0 { m - 1 } else { j - 1 };
            let jp = if j + 1 == m { 0 } else { j + 1 };
            (p - i + im, p - i + ip, p - n * j + n * jm, p - n * j + n * jp)
        } else {
            (p - 1, p + 1, p - n, p + n)
        };
        let lat = if k == 0 { 0.5 } else { 1.0 };
        let mut s = lat * (u[xm] + u[xp] + u[ym] + u[yp]) + u[p + nn];
        let mut d = 4.0 * lat + 1.0;
        if k > 0 {
            s += u[p - nn];
            d += 1.0;
        }
        (s, d)
    }

    /// Copies primary values onto periodic images.
    pub fn sync_images(&self, u: &mut [f64]) {
        if !self.is_periodic() {
            return;
        }
        for idx in 0..self.len() {
            if !self.is_primary(idx) {
                u[idx] = u[self.primary(idx)];
            }
        }
    }

    /// Discrete Dirichlet energy `Σ_e c_e (u_p − u_q)²`, with `c_e = h·(dual-face factors)`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        let n = self.n;
        let last = n - 1;
        let periodic = self.is_periodic();
        let m = if periodic { last } else { n };
        let mut e = 0.0;
        for k in 0..n {
            for j in 0..m {
                for i in 0..m {
                    let p = self.index(i, j, k);
                    let ux = u[p];
                    let fz = self.face_factor(k);
                    // +x
                    let (has_x, qx) = if periodic {
                        (true, self.index((i + 1) % last, j, k))
                    } else {
                        (i < last, p + 1)
                    };
                    if has_x {
                        e += self.lateral_factor(j) * fz * (ux - u[qx]).powi(2);
                    }
                    let (has_y, qy) = if periodic {
                        (true, self.index(i, (j + 1) % last, k))
                    } else {
                        (j < last, p + n)
                    };
                    if has_y {
                        e += self.lateral_factor(i) * fz * (ux - u[qy]).powi(2);
                    }
                    if k < last {
                        e += self.lateral_factor(i)
                            * self.lateral_factor(j)
                            * (ux - u[p + n * n]).powi(2);
                    }
                }
            }
        }
        e * self.h
    }

    /// Stiffness action `(K'u)_p = D_p u_p − S_p` on unknown nodes (0 elsewhere).
    fn apply_unknown(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = self.index(i, j, k);
                    out[p] = if self.is_unknown(p) {
                        let (s, d) = self.stencil(u, i, j, k);
                        d * u[p] - s
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    /// Solves `K v = f` with `v = 0` on Γ and natural conditions on Σ by Jacobi-preconditioned
    /// conjugate gradients; `f` holds nodal loads. Returns v (images synced) and iterations.
    pub fn poisson_solve(&self, f: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
        let len = self.len();
        if f.len() != len {
            return Err(Error::invalid("load vector length does not match the grid"));
        }
        let unknown: Vec<bool> = (0..len).map(|p| self.is_unknown(p)).collect();
        let b: Vec<f64> = (0..len).map(|p| if unknown[p] { f[p] / self.h } else { 0.0 }).collect();
        let inv_d: Vec<f64> = (0..len)
            .map(|p| {
                if !unknown[p] {
                    return 0.0;
                }
                let k = self.ijk(p)[2];
                if k == 0 {
                    1.0 / 3.0
                } else {
                    1.0 / 6.0
                }
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(&b, &b).sqrt();
        let mut x = vec![0.0; len];
        if bnorm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; len];
        let mut rz = dot(&r, &z);
        for it in 0..max_iter {
            if dot(&r, &r).sqrt() <= tol * bnorm {
                self.sync_images(&mut x);
                return Ok((x, it));
            }
            self.sync_images(&mut p);
            self.apply_unknown(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            let mut rz_new = 0.0;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] * inv_d[i];
                rz_new += r[i] * z[i];
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NotConverged(format!("grid Poisson solve: {max_iter} iterations")))
    }
}
