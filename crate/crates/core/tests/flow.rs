//! Staggered-grid flow solves on small grids: divergence targets, no-slip
//! walls, friction monotonicity and field I/O.

use proptest::prelude::*;

use perfolab_core::geometry::Ball;
use perfolab_core::stokes::{
    div_solve, mask_from_balls, read_field, solve_brinkman, solve_stokes, write_field, BrinkmanCoefficient, Grid,
    SolverOptions,
};

fn force(x: &[f64; 3]) -> [f64; 3] {
    [(3.0 * x[1]).sin(), x[0] * x[2], 1.0 + x[0]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn div_solve_meets_its_target_around_random_holes(
        centers in prop::collection::vec(prop::array::uniform3(-0.3..0.3f64), 1..4),
        radius in 0.08..0.15f64,
        phase in 0.0..6.0f64,
    ) {
        let g = Grid::unit(16);
        let balls: Vec<Ball> = centers.iter().map(|c| Ball::new(c.to_vec(), radius)).collect();
        let masks = mask_from_balls(&balls, &g);
        let rhs: Vec<f64> = (0..g.cells())
            .map(|c| {
                let x = g.cell_center(c);
                (5.0 * x[0] + phase).sin() * (3.0 * x[2]).cos()
            })
            .collect();
        let (v, ratio, rep) = div_solve(&g, &masks, &rhs, 4.0, &SolverOptions::default()).unwrap();
        prop_assert!(rep.div_residual <= 1e-8, "residual {}", rep.div_residual);
        prop_assert!(ratio.is_finite() && ratio > 0.0);
        let fluid: Vec<usize> = (0..g.cells()).filter(|&c| !masks.solid_cell[c]).collect();
        let mean = fluid.iter().map(|&c| rhs[c]).sum::<f64>() / fluid.len() as f64;
        let div = v.divergence();
        let scale = fluid.iter().map(|&c| (rhs[c] - mean).abs()).fold(0.0, f64::max);
        for &c in &fluid {
            prop_assert!((div[c] - (rhs[c] - mean)).abs() <= 1e-6 * scale);
        }
        for a in 0..3 {
            for (f, &solid) in masks.solid_face[a].iter().enumerate() {
                if solid {
                    prop_assert_eq!(v.u[a][f], 0.0);
                }
            }
        }
    }
}

#[test]
fn friction_slows_the_flow_monotonically() {
    let g = Grid::unit(16);
    let opts = SolverOptions::default();
    let mut prev = f64::INFINITY;
    for mu in [0.0, 5.0, 50.0, 500.0] {
        let (u, rep) = solve_brinkman(&g, &BrinkmanCoefficient { mu }, force, &opts).unwrap();
        assert!(rep.div_residual <= 1e-8);
        let l2 = u.velocity_l2_sq().sqrt();
        assert!(l2 < prev, "mu {mu}: {l2} !< {prev}");
        prev = l2;
    }
}

#[test]
fn holes_slow_the_flow() {
    let g = Grid::unit(16);
    let opts = SolverOptions::default();
    let (free, _) = solve_stokes(&g, &mask_from_balls(&[], &g), force, &opts).unwrap();
    let balls = vec![Ball::new(vec![0.1, -0.1, 0.0], 0.15), Ball::new(vec![-0.2, 0.2, 0.1], 0.12)];
    let (holed, rep) = solve_stokes(&g, &mask_from_balls(&balls, &g), force, &opts).unwrap();
    assert!(rep.div_residual <= 1e-8);
    assert!(holed.dirichlet_energy() < free.dirichlet_energy());
}

#[test]
fn point_drags_act_like_small_holes() {
    // Holes below the grid spacing are not masked but still resist the flow.
    let g = Grid::unit(16);
    let opts = SolverOptions::default();
    let (free, _) = solve_stokes(&g, &mask_from_balls(&[], &g), force, &opts).unwrap();
    let small: Vec<Ball> = (0..20)
        .map(|i| {
            let t = i as f64;
            Ball::new(vec![0.3 * (1.3 * t).sin(), 0.3 * (0.7 * t).cos(), 0.3 * (2.1 * t).sin()], 0.02)
        })
        .collect();
    let masks = mask_from_balls(&small, &g);
    assert_eq!(masks.solid_cells(), 0);
    assert_eq!(masks.unresolved.len(), 20);
    let (dragged, rep) = solve_stokes(&g, &masks, force, &opts).unwrap();
    assert!(rep.warning.is_some());
    assert!(dragged.dirichlet_energy() < free.dirichlet_energy());
}

#[test]
fn fields_round_trip_through_bytes() {
    let g = Grid::unit(8);
    let (u, _) = solve_brinkman(&g, &BrinkmanCoefficient { mu: 3.0 }, force, &SolverOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_field(&u, &mut buf).unwrap();
    let back = read_field(&buf[..]).unwrap();
    assert_eq!(back.u, u.u);
    assert_eq!(back.p, u.p);
    assert_eq!(back.grid.h, u.grid.h);
}
