use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::LateralBc;

fn opts(tol: f64) -> SolveOptions {
    SolveOptions { tol, ..SolveOptions::default() }
}

fn random_instance(seed: u64, m: usize, lateral: LateralBc) -> VIProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(5, lateral).unwrap();
    let len = grid.len();
    let g: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
    let mut cons = vec![false; len];
    let sigma: Vec<usize> = (0..len).filter(|&p| grid.class(p) == NodeClass::Sigma).collect();
    let mut placed = 0;
    while placed < m {
        let p = sigma[rng.gen_range(0..sigma.len())];
        if !cons[p] {
            cons[p] = true;
            placed += 1;
        }
    }
    let mut g = g;
    grid.sync_images(&mut g);
    VIProblem::new(grid, g, vec![0.8; len], cons).unwrap()
}

#[test]
fn constant_data_gives_constant() {
    let grid = Grid::new(7, LateralBc::Dirichlet).unwrap();
    let len = grid.len();
    let p = VIProblem::new(grid.clone(), vec![1.0; len], vec![0.0; len], vec![false; len]).unwrap();
    let (u, rep) = solve_vi(&p, &opts(1e-12), None).unwrap();
    assert!(rep.converged);
    assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    let sigma: Vec<bool> = (0..len).map(|q| grid.class(q) == NodeClass::Sigma).collect();
    let p = VIProblem::new(grid, vec![1.0; len], vec![1.0; len], sigma).unwrap();
    let (u, rep) = solve_vi(&p, &opts(1e-12), None).unwrap();
    assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    assert!(rep.kkt_residual.unwrap() < 1e-10);
}

#[test]
fn sor_matches_oracle_on_random_instances() {
    for seed in 0..20 {
        let lateral = if seed % 2 == 0 { LateralBc::Dirichlet } else { LateralBc::Periodic };
        let p = random_instance(seed, 4, lateral);
        let (u, rep) = solve_vi(&p, &opts(1e-13), None).unwrap();
        let (o, orep) = solve_vi_oracle(&p).unwrap();
        assert!(u.max_abs_diff(&o).unwrap() < 1e-8, "seed {seed}");
        assert!(rep.kkt_residual.unwrap() < 1e-10);
        let best = orep.candidates[orep.best].energy;
        for c in orep.candidates.iter().filter(|c| c.feasible) {
            assert!(best <= c.energy + 1e-14);
        }
    }
}

#[test]
fn oracle_small_cases() {
    let p = random_instance(3, 0, LateralBc::Dirichlet);
    let (o, rep) = solve_vi_oracle(&p).unwrap();
    assert_eq!(rep.candidates.len(), 1);
    let (u, _) = solve_vi(&p, &opts(1e-13), None).unwrap();
    assert!(u.max_abs_diff(&o).unwrap() < 1e-9);
    // one constrained node with φ above every datum binds
    let mut q = random_instance(4, 1, LateralBc::Dirichlet);
    q.phi.iter_mut().for_each(|f| *f = 2.0);
    let (o, rep) = solve_vi_oracle(&q).unwrap();
    let node = (0..q.grid.len()).find(|&i| q.constrained[i]).unwrap();
    assert_eq!(rep.candidates[rep.best].active, vec![node]);
    assert!((o.values[node] - 2.0).abs() < 1e-14);
    let big = random_instance(5, 13, LateralBc::Periodic);
    assert!(solve_vi_oracle(&big).is_err());
}

#[test]
fn energy_is_monotone_across_sweeps() {
    for seed in 0..5 {
        let p = random_instance(100 + seed, 4, LateralBc::Dirichlet);
        let o = SolveOptions { record_energy: true, ..opts(1e-12) };
        let (_, rep) = solve_vi(&p, &o, None).unwrap();
        assert!(rep.energy_history.len() > 2);
        for w in rep.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "{} > {}", w[1], w[0]);
        }
    }
}

#[test]
fn maximum_principle() {
    for seed in 0..5 {
        let p = random_instance(200 + seed, 4, LateralBc::Periodic);
        let (u, _) = solve_vi(&p, &opts(1e-12), None).unwrap();
        let lo = p.g.iter().chain(&p.phi).cloned().fold(f64::INFINITY, f64::min);
        let hi = p.g.iter().chain(&p.phi).cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(u.values.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }
}

#[test]
fn red_black_matches_serial() {
    let p = random_instance(7, 4, LateralBc::Periodic);
    let (a, _) = solve_vi(&p, &opts(1e-12), None).unwrap();
    let rb = SolveOptions { solver: "projected-sor-redblack".into(), ..opts(1e-12) };
    let (b, _) = solve_vi(&p, &rb, None).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-8);
    let en = SolveOptions { solver: "active-set-enumeration".into(), ..opts(1e-12) };
    let (c, _) = solve_vi(&p, &en, None).unwrap();
    assert!(a.max_abs_diff(&c).unwrap() < 1e-8);
    let bad = SolveOptions { solver: "multigrid".into(), ..opts(1e-12) };
    assert!(solve_vi(&p, &bad, None).is_err());
}

fn slab(n: usize, mu: f64) -> PenaltyProblem {
    let grid = Grid::new(n, LateralBc::Periodic).unwrap();
    PenaltyProblem::from_fns(grid, &|_| 0.0, &|_| 1.0, &|_| mu).unwrap()
}

#[test]
fn slab_closed_form() {
    let pi = std::f64::consts::PI;
    let b = pi / (1.0 + pi);
    let o = SolveOptions { relaxation: Relaxation::Auto, ..opts(1e-12) };
    let (u, rep) = solve_limit(&slab(17, pi), &o).unwrap();
    assert!((rep.trace_mean - b).abs() < 1e-9);
    assert!((rep.total_energy - b).abs() < 1e-9);
    assert!(u.values.iter().all(|v| *v >= -1e-12 && *v <= 1.0));
    let (_, rep) = solve_limit(&slab(17, 1e6), &o).unwrap();
    assert!((rep.trace_mean - 1.0).abs() < 1e-5);
}

#[test]
fn zero_density_is_plain_harmonic() {
    let grid = Grid::new(9, LateralBc::Dirichlet).unwrap();
    let g = |x: [f64; 3]| x[0] * x[0] - x[1] + 0.5 * x[2];
    let pen = PenaltyProblem::from_fns(grid.clone(), &g, &|_| 1.0, &|_| 0.0).unwrap();
    let (a, _) = solve_limit(&pen, &opts(1e-12)).unwrap();
    let len = grid.len();
    let gv: Vec<f64> = (0..len).map(|p| g(grid.coords(p))).collect();
    let vi = VIProblem::new(grid, gv, vec![1.0; len], vec![false; len]).unwrap();
    let (b, _) = solve_vi(&vi, &opts(1e-12), None).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
}

#[test]
fn poisson_energy_identity() {
    let grid = Grid::new(9, LateralBc::Periodic).unwrap();
    let loads: Vec<f64> = (0..grid.len())
        .map(|p| if grid.is_unknown(p) { grid.dual_volume(p) } else { 0.0 })
        .collect();
    let (v, _) = grid.poisson_solve(&loads, 1e-12, 10_000).unwrap();
    // −v'' = 1, v(1) = 0, v'(0) = 0: v = (1 − z²)/2, ∫|v'|² = 1/3; the scheme is exact at nodes here
    let e: f64 = v.iter().zip(&loads).map(|(a, b)| a * b).sum();
    assert!((grid.dirichlet_energy(&v) - e).abs() < 1e-10);
    for p in 0..grid.len() {
        let z = grid.coords(p)[2];
        assert!((v[p] - 0.5 * (1.0 - z * z)).abs() < 1e-9);
    }
}
