//! Quadrature on Σ charts, on spheres clipped by D, and on shells clipped by D (n = 3).
//!
//! All rules are polar about the chart origin so integrands that are singular at the site are
//! handled by radial grading (Gauss–Legendre in log ρ). In graph mode, clipping by
//! `D = {y_3 > h(y_1, y_2)}` is resolved exactly per ray by bisection.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::BoundaryGraph;
use crate::numerics::{bisect, gauss_legendre_on, graded_radial_rule};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceNode {
    pub chart: [f64; 2],
    /// Point on the surface, relative to the chart origin.
    pub point: [f64; 3],
    /// Unit normal. For Σ rules it points into D; for sphere rules it is the outward radial.
    pub normal: [f64; 3],
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeNode {
    /// Offset from the chart origin.
    pub offset: [f64; 3],
    pub weight: f64,
}

/// Region of Σ, described in the site chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChartRegion {
    /// `|x'| < radius`.
    Disk { radius: f64 },
    /// `inner < |x'| < outer`.
    Annulus { inner: f64, outer: f64 },
    /// Surface points with `inner < |(x', h(x'))| < outer` (spatial distance to the origin).
    Shell { inner: f64, outer: f64 },
}

/// Orders of a shell volume rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellOrder {
    pub radial: usize,
    pub polar: usize,
    pub azimuthal: usize,
}

impl Default for ShellOrder {
    fn default() -> Self {
        ShellOrder { radial: 24, polar: 12, azimuthal: 24 }
    }
}

/// Nodes and weights for ∫ f dS over a chart region of the graph surface. `order` is the number
/// of radial nodes; the azimuthal trapezoid rule uses `2·order` nodes.
pub fn surface_quadrature(
    graph: &BoundaryGraph,
    region: ChartRegion,
    order: usize,
) -> Result<Vec<SurfaceNode>> {
    if order == 0 {
        return Err(Error::invalid("quadrature order must be positive"));
    }
    let (lo, hi) = match region {
        ChartRegion::Disk { radius } => (0.0, radius),
        ChartRegion::Annulus { inner, outer } | ChartRegion::Shell { inner, outer } => {
            (inner, outer)
        }
    };
    if !(hi > lo && lo >= 0.0) {
        return Err(Error::invalid(format!("degenerate region: inner {lo} >= outer {hi}")));
    }
    let n_phi = 2 * order;
    let mut out = Vec::with_capacity(order * n_phi);
    for j in 0..n_phi {
        let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
        let dir = [phi.cos(), phi.sin()];
        let (r_lo, r_hi) = match region {
            ChartRegion::Shell { inner, outer } => (
                chart_radius_at_distance(graph, dir, inner),
                chart_radius_at_distance(graph, dir, outer),
            ),
            _ => (lo, hi),
        };
        if r_hi <= r_lo {
            continue;
        }
        let radial = if r_lo > 0.0 {
            graded_radial_rule(order, r_lo, r_hi)
        } else {
            gauss_legendre_on(order, 0.0, r_hi)
        };
        for (r, wr) in radial {
            let chart = [r * dir[0], r * dir[1]];
            let g = graph.gradient(chart);
            let area = (1.0 + g[0] * g[0] + g[1] * g[1]).sqrt();
            let (h, normal) = graph.eval(chart);
            out.push(SurfaceNode {
                chart,
                point: [chart[0], chart[1], h],
                normal,
                weight: wr * r * area * 2.0 * PI / n_phi as f64,
            });
        }
    }
    Ok(out)
}

/// Chart radius `r` along direction `dir` at which the surface point is at distance `rho`.
fn chart_radius_at_distance(graph: &BoundaryGraph, dir: [f64; 2], rho: f64) -> f64 {
    if graph.is_flat() || rho == 0.0 {
        return rho;
    }
    bisect(0.0, rho, |r| {
        let h = graph.height([r * dir[0], r * dir[1]]);
        (r * r + h * h).sqrt() - rho
    })
}

/// Polar angle (from +e_3) where the ray at azimuth `phi` and radius `rho` leaves D.
fn polar_cutoff(graph: &BoundaryGraph, rho: f64, phi: f64) -> f64 {
    if graph.is_flat() {
        return 0.5 * PI;
    }
    let (c, s) = (phi.cos(), phi.sin());
    bisect(0.0, PI, |th| {
        let st = th.sin();
        rho * th.cos() - graph.height([rho * st * c, rho * st * s])
    })
}

/// Nodes on the part of the sphere `|y| = rho` inside D; the normal is the outward radial.
pub fn sphere_cap_quadrature(
    graph: &BoundaryGraph,
    rho: f64,
    n_polar: usize,
    n_azimuthal: usize,
) -> Vec<SurfaceNode> {
    let mut out = Vec::with_capacity(n_polar * n_azimuthal);
    for j in 0..n_azimuthal {
        let phi = 2.0 * PI * (j as f64 + 0.5) / n_azimuthal as f64;
        let (c, s) = (phi.cos(), phi.sin());
        let cut = polar_cutoff(graph, rho, phi);
        for (th, wt) in gauss_legendre_on(n_polar, 0.0, cut) {
            let st = th.sin();
            let normal = [st * c, st * s, th.cos()];
            out.push(SurfaceNode {
                chart: [rho * normal[0], rho * normal[1]],
                point: [rho * normal[0], rho * normal[1], rho * normal[2]],
                normal,
                weight: wt * st * rho * rho * 2.0 * PI / n_azimuthal as f64,
            });
        }
    }
    out
}

/// Nodes for ∫ f dy over `{rho_lo < |y| < rho_hi} ∩ D`. Radial nodes are log-graded when
/// `rho_lo > 0`.
pub fn volume_quadrature(
    graph: &BoundaryGraph,
    rho_lo: f64,
    rho_hi: f64,
    order: ShellOrder,
) -> Result<Vec<VolumeNode>> {
    if !(rho_hi > rho_lo && rho_lo >= 0.0) {
        return Err(Error::invalid(format!(
            "degenerate shell: inner {rho_lo} >= outer {rho_hi}"
        )));
    }
    let radial = if rho_lo > 0.0 {
        graded_radial_rule(order.radial, rho_lo, rho_hi)
    } else {
        gauss_legendre_on(order.radial, 0.0, rho_hi)
    };
    let mut out = Vec::with_capacity(order.radial * order.polar * order.azimuthal);
    for (rho, wr) in radial {
        for node in sphere_cap_quadrature(graph, rho, order.polar, order.azimuthal) {
            out.push(VolumeNode { offset: node.point, weight: wr * node.weight });
        }
    }
    Ok(out)
}
