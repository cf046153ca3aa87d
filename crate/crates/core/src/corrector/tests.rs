use std::f64::consts::PI;
use std::sync::Arc;

use super::*;
use crate::capacity::BallPotential;
use crate::geometry::{make_domain, DomainMode, GraphFamily};

fn single(eps: f64, r_tilde: f64, domain: &DomainSpec) -> CorrectorField {
    let layout = SiteLayout::from_points(eps, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    CorrectorField::uniform(&layout, r_tilde, domain).unwrap()
}

fn flat() -> DomainSpec {
    DomainSpec::flat(3).unwrap()
}

fn bump() -> DomainSpec {
    let g = GraphFamily::SmoothBump { amplitude: 0.05, wavenumber: 2.0 * PI };
    make_domain(DomainMode::Graph { graph: g }, 3, LateralBc::Dirichlet).unwrap()
}

fn one(_: [f64; 3]) -> f64 {
    1.0
}

#[test]
fn model_corrector_values() {
    let f = single(0.1, 1.0, &flat());
    let at = |rho: f64| f.eval_w(&[0.5 + rho, 0.5, 0.0]);
    assert!((at(0.01).0 - 1.0).abs() < 1e-12);
    assert!(at(0.1).0.abs() < 1e-12);
    let (w, g) = at(0.05);
    assert!((w - 10.0 / 90.0).abs() < 1e-12);
    assert!((g[0] + 1.0 / (0.05f64.powi(2) * 90.0)).abs() < 1e-9);
    // continuity across both spheres in several directions
    for dir in [[1.0, 0.0, 0.0], [0.6, 0.0, 0.8], [0.0, -0.28, 0.96]] {
        for rho in [0.01, 0.1] {
            let p = |s: f64| [0.5 + s * dir[0], 0.5 + s * dir[1], s * dir[2]];
            let a = f.eval_w(&p(rho * (1.0 - 1e-13))).0;
            let b = f.eval_w(&p(rho * (1.0 + 1e-13))).0;
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn general_dimension_profile() {
    // n = 4: w = (ρ⁻² − ε⁻²)/(r⁻² − ε⁻²)
    let (eps, r, rho) = (0.2, 0.02, 0.05);
    let (w, _) = model_profile(4, eps, r, rho);
    let expect = (rho.powi(-2) - eps.powi(-2)) / (r.powi(-2) - eps.powi(-2));
    assert!((w - expect).abs() < 1e-14);
}

#[test]
fn aux_field_values_and_flux_matching() {
    let f = single(0.1, 1.0, &flat());
    let q = f.aux_q();
    let kappa = -1.0 / 0.9;
    let (v, _, lap) = q.eval_q(&[0.5, 0.5, 0.0]);
    assert!((v - kappa * (-0.01) / 0.2).abs() < 1e-14);
    assert!((v - 0.055556).abs() < 1e-6);
    assert!((lap - kappa * 30.0).abs() < 1e-12);
    let x = [0.5 + 0.1 * (1.0 - 1e-15), 0.5, 0.0];
    let (v, g, _) = q.eval_q(&x);
    assert!(v.abs() < 1e-12);
    let dw = f.eval_w(&x).1[0];
    assert!((g[0] - dw).abs() < 1e-12);
    assert!((g[0] - kappa).abs() < 1e-12);
}

#[test]
fn bridge_profile() {
    let b = BridgeProfile::new(0.1, 3);
    assert!((b.a - 0.1f64.powf(1.5)).abs() < 1e-15);
    assert_eq!(b.radial(b.a).0, 1.0);
    let (v, d, _) = b.radial(2.0 * b.a);
    assert_eq!((v, d), (0.0, 0.0));
    let m = b.measured_bounds(20_000);
    assert!(m.gradient <= 2.0 && (m.gradient - 1.875).abs() < 1e-6);
    // sup|s''| = 10/√3 at t = (3 − √3)/6
    assert!(m.second <= 6.0 && (m.second - 10.0 / 3f64.sqrt()).abs() < 1e-5);
    assert!(m.laplacian > m.second);
}

#[test]
fn single_annulus_norms() {
    let (eps, r) = (0.1, 0.01);
    let f = single(eps, 1.0, &flat());
    let n = corrector_norms(&f, None, Coverage::FullBall, ShellOrder::default()).unwrap();
    let d = 1.0 / r - 1.0 / eps;
    assert!((n.energy - 4.0 * PI / d).abs() < 1e-6);
    let radial = (eps - r) - (eps * eps - r * r) / eps + (eps.powi(3) - r.powi(3)) / (3.0 * eps * eps);
    let l2 = 4.0 * PI * radial / (d * d) + 4.0 / 3.0 * PI * r.powi(3);
    assert!(((n.l2_sq - l2) / l2).abs() < 1e-6);
    let half = corrector_norms(&f, None, Coverage::Clipped, ShellOrder::default()).unwrap();
    assert!((2.0 * half.energy - n.energy).abs() < 1e-12);
}

#[test]
fn boundary_term_signs_and_values() {
    let f = single(0.1, 1.0, &flat());
    let t = boundary_terms(&f, 0, &one, &one, SurfaceOrder::default()).unwrap();
    assert_eq!(t.term_dd, 0.0);
    assert!((t.term_db - 2.0 * PI * 0.01 * (-1.0 / 0.9)).abs() < 1e-9);
    assert!(t.term_r > 0.0);
    assert!((t.term_r + t.term_dd + t.term_db).abs() < 1e-9);
    let r = f.radii[0];
    let vanish = move |x: [f64; 3]| (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + x[2].powi(2) - r * r;
    let t = boundary_terms(&f, 0, &one, &vanish, SurfaceOrder::default()).unwrap();
    assert!(t.term_r.abs() < 1e-12);
}

#[test]
fn graph_boundary_terms_balance() {
    // Δw = 0 in the annulus, so the outward fluxes cancel
    let f = single(0.1, 1.0, &bump());
    let o = SurfaceOrder { radial: 48, polar: 32, azimuthal: 64 };
    let t = boundary_terms(&f, 0, &one, &one, o).unwrap();
    assert!(t.term_dd != 0.0);
    let scale = t.term_r.abs();
    assert!((t.term_r + t.term_dd + t.term_db).abs() < 1e-4 * scale);
}

#[test]
fn third_term_trivial_and_single_ball() {
    use crate::obstacle_field::{build_obstacle, density_field, ClosedFormCapacity, Normalization, ObstacleSpec};
    let d = flat();
    let layout = SiteLayout::from_points(0.05, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    let obs = build_obstacle(&ObstacleSpec::ModelBalls { r_tilde: 1.0 }, &layout, &d, &ClosedFormCapacity, (0.5, 4.0)).unwrap();
    let f = CorrectorField::from_obstacle(&obs, &d).unwrap();
    let df = density_field(&obs, &d, Normalization::Effective);
    let zero = |_: [f64; 3]| 0.0;
    let t = third_term_reduced(&f, &df, &one, &zero, SurfaceOrder::default()).unwrap();
    assert_eq!((t.lhs, t.rhs, t.relative), (0.0, 0.0, 0.0));
    let t = third_term_reduced(&f, &df, &one, &one, SurfaceOrder::default()).unwrap();
    // −(ball mass) = term_dB·(1 − r̃ε)
    let eps = 0.05;
    assert!((t.lhs * (1.0 - eps) - t.rhs).abs() < 1e-9 * t.rhs.abs());
}

#[test]
fn stitched_ball_matches_pieces_and_gap_formula() {
    let eps = 0.1;
    let d = flat();
    let layout = SiteLayout::from_points(eps, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    let r = 0.01;
    let tpl = Arc::new(BallPotential { center: [0.0; 3], radius: r });
    let sc = StitchedCorrector::new(&layout, &d, tpl).unwrap();
    assert!((sc.model.radii[0] - r).abs() < 1e-15);
    let a = sc.a();
    let at = |rho: f64| [0.5 + rho * 0.6, 0.5, rho * 0.8];
    assert!((sc.eval_stitched(at(0.5 * a)).unwrap().0 - r / (0.5 * a)).abs() < 1e-14);
    let x = at(0.5 * (2.0 * a + eps));
    assert!((sc.eval_stitched(x).unwrap().0 - sc.model.eval_w(&x).0).abs() < 1e-14);
    assert_eq!(sc.eval_stitched([0.5, 0.5, 0.0]).unwrap().0, 1.0);
    let gap = stitch_gap(&sc, 32, 64).unwrap();
    let dd = 1.0 / r - 1.0 / eps;
    let closed = |rho: f64| (1.0 - r / rho) / (eps * dd);
    assert!((closed(a) - 0.07598).abs() < 1e-5);
    assert!((gap.sup_gap - closed(2.0 * a)).abs() < 1e-12);
    let grad = |rho: f64| r / (rho * rho * eps * dd);
    assert!((gap.sup_grad_gap - grad(a)).abs() < 1e-9);
}

#[test]
fn stitched_ball_energy_close_to_model() {
    let eps = 0.05;
    let d = flat();
    let layout = SiteLayout::from_points(eps, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    let tpl = Arc::new(BallPotential { center: [0.0; 3], radius: eps * eps });
    let sc = StitchedCorrector::new(&layout, &d, tpl).unwrap();
    let diag = stitched_diagnostics(&sc, &one, &one, ShellOrder::default(), SurfaceOrder::default()).unwrap();
    assert!(((diag.energy - diag.model_energy) / diag.model_energy).abs() < 0.1);
    assert!(diag.dd_cap_term.abs() < 1e-14 && diag.dd_bridge_term.abs() < 1e-14);
}

#[test]
fn empty_layout_integrals_vanish() {
    let d = flat();
    let layout = SiteLayout::empty(0.1);
    let f = CorrectorField::uniform(&layout, 1.0, &d).unwrap();
    let n = corrector_norms(&f, None, Coverage::Clipped, ShellOrder::default()).unwrap();
    assert_eq!((n.l2_sq, n.energy, n.weighted_energy), (0.0, 0.0, 0.0));
    let tpl = Arc::new(BallPotential { center: [0.0; 3], radius: 0.01 });
    let sc = StitchedCorrector::new(&layout, &d, tpl).unwrap();
    let diag = stitched_diagnostics(&sc, &one, &one, ShellOrder::default(), SurfaceOrder::default()).unwrap();
    assert_eq!(diag.energy, 0.0);
    assert_eq!(sc.eval_stitched([0.5, 0.5, 0.0]).unwrap().0, 0.0);
}

#[test]
fn second_term_rate_needs_three_points() {
    let f = single(0.1, 1.0, &flat());
    assert!(second_term_rate(&[f.clone(), f.clone()], &one, &one, SurfaceOrder::default()).is_err());
    let r = second_term_rate(&[f.clone(), f.clone(), f], &one, &one, SurfaceOrder::default()).unwrap();
    assert!(r.identically_zero && r.slope.is_none());
}

#[test]
fn bridge_rejects_large_eps_and_unresolved_potential() {
    let d = flat();
    let layout = SiteLayout::from_points(0.3, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    let tpl = Arc::new(BallPotential { center: [0.0; 3], radius: 0.01 });
    assert!(StitchedCorrector::new(&layout, &d, tpl).is_err());
    let layout = SiteLayout::from_points(0.1, vec![vec![0.5, 0.5, 0.0]]).unwrap();
    let big = Arc::new(BallPotential { center: [0.0; 3], radius: 0.05 });
    assert!(StitchedCorrector::new(&layout, &d, big).is_err());
}
