//! Divergence solves in an annulus and the oscillating test fields built
//! from them.
//!
//! The corrector for axis `k` equals `e_k` away from the covering balls.
//! Around a ball of radius `R` it is the uniform-flow sphere solution,
//! blended back to `e_k` by a cut-off across `R < |x| < θR`, plus an
//! annulus correction that removes the divergence the cut-off creates.

use crate::error::{Error, Result};
use crate::geometry::Ball;

use super::drag::{SphereFlow, STOKES_DRAG};
use super::saddle::{FlowProblem, SolverOptions};
use super::{Grid, Masks, StaggeredField};

#[derive(Clone, Debug)]
pub struct AnnulusSolution {
    pub grid: Grid,
    pub field: StaggeredField,
    /// Cell role: 0 inner ball, 1 annulus, 2 outside.
    pub role: Vec<u8>,
    /// `max |div u − g|` over annulus cells relative to `max |g|` (or the
    /// largest annulus flux when `g = 0`).
    pub div_residual: f64,
    pub h1: f64,
    pub c0: f64,
    pub iterations: usize,
}

/// Cells with center inside `B_r(center)` are inner, inside `B_{rθ}` annulus,
/// the rest outside.
pub fn annulus_roles(g: &Grid, center: &[f64; 3], r: f64, theta: f64) -> Vec<u8> {
    (0..g.cells())
        .map(|c| {
            let x = g.cell_center(c);
            let d = (0..3).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>().sqrt();
            if d < r {
                0
            } else if d < r * theta {
                1
            } else {
                2
            }
        })
        .collect()
}

/// `u = u₁ + u₂` with `div u = g` on annulus cells, `u = 0` on faces of
/// outside cells and `u = v` on faces of inner cells: `u₁` is the
/// minimal-energy field with divergence `g` on the annulus and `div v` on
/// the inner ball, and `u₂` the Stokes field in the annulus carrying the
/// boundary data `v − u₁`.
///
/// `v` is given on faces and `g` on cells of `grid`, which must leave at
/// least one outside cell layer around `B_{rθ}`.
pub fn annulus_div_solve(
    grid: &Grid,
    center: &[f64; 3],
    r: f64,
    theta: f64,
    v: &[Vec<f64>; 3],
    g: &[f64],
    opts: &SolverOptions,
) -> Result<AnnulusSolution> {
    if !(theta > 1.0 && r > 0.0) {
        return Err(Error::Config(format!("annulus needs r > 0 and θ > 1, got r = {r}, θ = {theta}")));
    }
    let role = annulus_roles(grid, center, r, theta);
    if !role.contains(&1) {
        return Err(Error::Numeric(format!("annulus {r}..{} contains no cell center at h = {}", r * theta, grid.h)));
    }
    let h3 = grid.h.powi(3);
    let vfield = StaggeredField { grid: grid.clone(), u: v.clone(), p: vec![0.0; grid.cells()] };
    let div_v = vfield.divergence();
    let (mut net, mut scale) = (0.0, 0.0);
    for c in 0..grid.cells() {
        let t = match role[c] {
            0 => div_v[c],
            1 => g[c],
            _ => 0.0,
        };
        net += t * h3;
        scale += t.abs() * h3;
    }
    if scale > 0.0 && net.abs() > 1e-6 * scale {
        return Err(Error::Compatibility { mismatch: net / scale });
    }

    // u₁: divergence target on the inner ball and the annulus.
    let outer = Masks::from_solid(grid, role.iter().map(|&k| k == 2).collect());
    let target: Vec<f64> = (0..grid.cells())
        .map(|c| match role[c] {
            0 => div_v[c],
            1 => g[c],
            _ => 0.0,
        })
        .collect();
    let mut pb1 = FlowProblem::new(grid, &outer);
    pb1.divergence = Some(target);
    let (u1, r1) = pb1.solve(opts)?;

    // u₂: Stokes in the annulus with data v − u₁ on the inner faces.
    let both = Masks::from_solid(grid, role.iter().map(|&k| k != 1).collect());
    let inner_face = inner_faces(grid, &role);
    let fixed: [Vec<f64>; 3] =
        std::array::from_fn(|a| (0..grid.faces(a)).map(|f| if inner_face[a][f] { v[a][f] - u1.u[a][f] } else { 0.0 }).collect());
    let mut pb2 = FlowProblem::new(grid, &both);
    pb2.fixed = Some(fixed);
    let (u2, r2) = pb2.solve(opts)?;

    let mut field = StaggeredField::zeros(grid);
    for a in 0..3 {
        for f in 0..grid.faces(a) {
            field.u[a][f] = if inner_face[a][f] { v[a][f] } else { u1.u[a][f] + u2.u[a][f] };
        }
    }
    let div = field.divergence();
    let mut worst = 0.0f64;
    let mut gmax = 0.0f64;
    let mut fmax = 0.0f64;
    for c in 0..grid.cells() {
        if role[c] == 1 {
            worst = worst.max((div[c] - g[c]).abs());
            gmax = gmax.max(g[c].abs());
            let [i, j, k] = grid.cell_coords(c);
            for a in 0..3 {
                let lo = grid.face_index(a, i, j, k);
                fmax = fmax.max(field.u[a][lo].abs().max(field.u[a][lo + grid.face_stride(a, a)].abs()) / grid.h);
            }
        }
    }
    let denom = if gmax > 0.0 { gmax } else { fmax };
    let div_residual = if denom > 0.0 { worst / denom } else { 0.0 };
    let c0 = field.u.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let h1 = field.dirichlet_energy().sqrt();
    Ok(AnnulusSolution { grid: grid.clone(), field, role, div_residual, h1, c0, iterations: r1.iterations + r2.iterations })
}

/// Faces touching an inner cell.
fn inner_faces(g: &Grid, role: &[u8]) -> [Vec<bool>; 3] {
    std::array::from_fn(|a| {
        (0..g.faces(a))
            .map(|f| {
                let (lo, hi) = g.face_cells(a, f);
                lo.is_some_and(|c| role[c] == 0) || hi.is_some_and(|c| role[c] == 0)
            })
            .collect()
    })
}

impl Masks {
    /// Masks from a cell classification.
    pub fn from_solid(g: &Grid, solid: Vec<bool>) -> Masks {
        let solid_face = std::array::from_fn(|a| {
            (0..g.faces(a))
                .map(|f| {
                    let (lo, hi) = g.face_cells(a, f);
                    lo.is_some_and(|c| solid[c]) || hi.is_some_and(|c| solid[c])
                })
                .collect()
        });
        Masks { solid_cell: solid, solid_face, unresolved: Vec::new(), warning: None }
    }
}

/// Oscillating test field on a global grid.
#[derive(Clone, Debug)]
pub struct Corrector {
    pub field: StaggeredField,
    pub axis: usize,
    /// Balls whose annulus is narrower than two cells: left at `e_k` outside
    /// the ball and zero inside, their drag taken from the closed form.
    pub analytic: Vec<usize>,
    /// Worst relative annulus divergence residual over resolved balls.
    pub div_residual: f64,
}

/// Smooth step from 1 at `t = 0` to 0 at `t = 1`.
fn cutoff(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    1.0 - t * t * (3.0 - 2.0 * t)
}

/// Corrector for axis `k` around `balls` (covering balls and good holes)
/// with dilation `theta`. Balls are processed in the given order, which
/// callers set by class.
pub fn oscillating_corrector(balls: &[Ball], theta: f64, k: usize, g: &Grid, opts: &SolverOptions) -> Result<Corrector> {
    let mut w = StaggeredField::zeros(g);
    for f in w.u[k].iter_mut() {
        *f = 1.0;
    }
    let mut analytic = Vec::new();
    let mut worst = 0.0f64;
    for (idx, b) in balls.iter().enumerate() {
        let c = [b.center[0], b.center[1], b.center[2]];
        let big = b.radius * theta;
        if (theta - 1.0) * b.radius < 2.0 * g.h {
            analytic.push(idx);
            zero_inside(&mut w, g, &c, b.radius);
            continue;
        }
        // Aligned sub-grid covering B_{θR} plus a margin cell.
        let lo: [usize; 3] = std::array::from_fn(|i| (((c[i] - big - g.origin[i]) / g.h).floor() as i64 - 1).max(0) as usize);
        let hi: [usize; 3] = std::array::from_fn(|i| ((((c[i] + big - g.origin[i]) / g.h).ceil() as i64 + 1) as usize).min(g.n));
        let m = (0..3).map(|i| hi[i] - lo[i]).max().unwrap();
        let lo: [usize; 3] = std::array::from_fn(|i| lo[i].min(g.n.saturating_sub(m)));
        let sub = Grid { n: m, h: g.h, origin: std::array::from_fn(|i| g.origin[i] + lo[i] as f64 * g.h) };
        let role = annulus_roles(&sub, &c, b.radius, theta);
        let inner = inner_faces(&sub, &role);
        let flow = SphereFlow { a: b.radius, axis: k };
        let mut blended: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; sub.faces(a)]);
        for a in 0..3 {
            for f in 0..sub.faces(a) {
                if inner[a][f] {
                    continue;
                }
                let (cl, ch) = sub.face_cells(a, f);
                let touches_outside = cl.is_none_or(|x| role[x] == 2) || ch.is_none_or(|x| role[x] == 2);
                let e = if a == k { 1.0 } else { 0.0 };
                blended[a][f] = if touches_outside {
                    e
                } else {
                    let x = sub.face_center(a, f);
                    let rr = (0..3).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>().sqrt();
                    let rel: [f64; 3] = std::array::from_fn(|i| x[i] - c[i]);
                    let chi = cutoff((rr - b.radius) / (big - b.radius));
                    e + chi * (flow.velocity(&rel)[a] - e)
                };
            }
        }
        let tmp = StaggeredField { grid: sub.clone(), u: blended.clone(), p: vec![0.0; sub.cells()] };
        let dv = tmp.divergence();
        let rhs: Vec<f64> = (0..sub.cells()).map(|x| if role[x] == 1 { -dv[x] } else { 0.0 }).collect();
        let zero: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; sub.faces(a)]);
        let corr = annulus_div_solve(&sub, &c, b.radius, theta, &zero, &rhs, opts)?;
        worst = worst.max(corr.div_residual);
        for a in 0..3 {
            for f in 0..sub.faces(a) {
                let (cl, ch) = sub.face_cells(a, f);
                let local = cl.is_some_and(|x| role[x] != 2) || ch.is_some_and(|x| role[x] != 2);
                if !local {
                    continue;
                }
                let ijk = sub.face_coords(a, f);
                let gf = g.face_index(a, ijk[0] + lo[0], ijk[1] + lo[1], ijk[2] + lo[2]);
                w.u[a][gf] = blended[a][f] + corr.field.u[a][f];
            }
        }
    }
    Ok(Corrector { field: w, axis: k, analytic, div_residual: worst })
}

fn zero_inside(w: &mut StaggeredField, g: &Grid, c: &[f64; 3], r: f64) {
    for a in 0..3 {
        for f in 0..g.faces(a) {
            let x = g.face_center(a, f);
            if (0..3).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>() < r * r {
                w.u[a][f] = 0.0;
            }
        }
    }
}

/// Sum of per-ball drags paired with `φ v_k`, `Σ_j 6π R_j (φ v_k)(x_j)`,
/// against its homogenized limit `μ ∫ φ v_k` evaluated by the midpoint rule
/// on `n³` cells of the unit cube.
pub fn drag_pairing(balls: &[Ball], mu: f64, integrand: impl Fn(&[f64; 3]) -> f64, n: usize) -> (f64, f64) {
    let sum: f64 = balls
        .iter()
        .map(|b| STOKES_DRAG * b.radius * integrand(&[b.center[0], b.center[1], b.center[2]]))
        .sum();
    let g = Grid::unit(n);
    let h3 = g.h.powi(3);
    let limit = mu * (0..g.cells()).map(|c| integrand(&g.cell_center(c))).sum::<f64>() * h3;
    (sum, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let g = Grid::new(16, 0.5);
        let zero: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; g.faces(a)]);
        let s = annulus_div_solve(&g, &[0.0; 3], 0.2, 1.8, &zero, &vec![0.0; g.cells()], &opts()).unwrap();
        assert!(s.field.u.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn radial_source_is_matched() {
        let g = Grid::new(24, 0.5);
        let (r, theta) = (0.15, 2.5);
        let role = annulus_roles(&g, &[0.0; 3], r, theta);
        let mut rhs: Vec<f64> = (0..g.cells())
            .map(|c| if role[c] == 1 { (8.0 * g.cell_center(c).iter().map(|v| v * v).sum::<f64>().sqrt()).cos() } else { 0.0 })
            .collect();
        let cnt = role.iter().filter(|&&k| k == 1).count() as f64;
        let mean = rhs.iter().sum::<f64>() / cnt;
        for c in 0..g.cells() {
            if role[c] == 1 {
                rhs[c] -= mean;
            }
        }
        let zero: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; g.faces(a)]);
        let s = annulus_div_solve(&g, &[0.0; 3], r, theta, &zero, &rhs, &opts()).unwrap();
        assert!(s.div_residual <= 1e-6, "{}", s.div_residual);
        assert!(s.h1 > 0.0);
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let g = Grid::new(12, 0.5);
        let role = annulus_roles(&g, &[0.0; 3], 0.15, 2.0);
        let rhs: Vec<f64> = role.iter().map(|&k| if k == 1 { 1.0 } else { 0.0 }).collect();
        let zero: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; g.faces(a)]);
        assert!(matches!(annulus_div_solve(&g, &[0.0; 3], 0.15, 2.0, &zero, &rhs, &opts()), Err(Error::Compatibility { .. })));
    }

    #[test]
    fn inner_data_is_kept() {
        let g = Grid::new(16, 0.5);
        // Constant inner velocity has zero flux through the inner block.
        let v: [Vec<f64>; 3] = std::array::from_fn(|a| vec![if a == 1 { 0.7 } else { 0.0 }; g.faces(a)]);
        let s = annulus_div_solve(&g, &[0.0; 3], 0.15, 2.2, &v, &vec![0.0; g.cells()], &opts()).unwrap();
        let inner = inner_faces(&g, &s.role);
        for a in 0..3 {
            for f in 0..g.faces(a) {
                if inner[a][f] {
                    assert_eq!(s.field.u[a][f], v[a][f]);
                }
            }
        }
        assert!(s.div_residual <= 1e-6);
    }

    #[test]
    fn single_ball_corrector() {
        let g = Grid::unit(24);
        let b = Ball::new(vec![0.02, -0.01, 0.0], 0.12);
        let w = oscillating_corrector(std::slice::from_ref(&b), 2.0, 0, &g, &opts()).unwrap();
        assert!(w.analytic.is_empty());
        assert!(w.div_residual <= 1e-6);
        let div = w.field.divergence();
        let dmax = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dmax < 1e-5 / g.h, "{dmax}");
        for a in 0..3 {
            for f in 0..g.faces(a) {
                let x = g.face_center(a, f);
                let d = crate::geometry::dist(&x, &b.center);
                if d < 0.12 - g.h {
                    assert_eq!(w.field.u[a][f], 0.0);
                }
                if d > 0.24 + 2.0 * g.h {
                    assert_eq!(w.field.u[a][f], if a == 0 { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn no_holes_gives_unit_field() {
        let g = Grid::unit(6);
        let w = oscillating_corrector(&[], 1.2, 2, &g, &opts()).unwrap();
        assert!(w.field.u[2].iter().all(|&v| v == 1.0));
        assert!(w.field.u[0].iter().chain(&w.field.u[1]).all(|&v| v == 0.0));
    }

    #[test]
    fn small_balls_take_the_analytic_path() {
        let g = Grid::unit(8);
        let w = oscillating_corrector(&[Ball::new(vec![0.0; 3], 0.05)], 1.1, 1, &g, &opts()).unwrap();
        assert_eq!(w.analytic, vec![0]);
    }
}
