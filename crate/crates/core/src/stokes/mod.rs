//! Staggered (MAC) grid flow solvers in a cube: Stokes in the perforated
//! domain, Brinkman with a friction coefficient, the minimal-energy
//! divergence solve, and the single-sphere machinery used to calibrate the
//! friction constant and build oscillating correctors.
//!
//! Layout: cell `(i, j, k)` has center `origin + (i+½, j+½, k+½) h`. The
//! velocity component along axis `a` lives on the faces normal to `a`; its
//! lattice has `n + 1` nodes along `a` and `n` along the others, face
//! `(i, j, k)` being the lower `a`-face of cell `(i, j, k)`. All arrays are
//! x-fastest.

pub mod corrector;
pub mod drag;
pub mod io;
pub mod pressure;
pub mod saddle;

use crate::geometry::Ball;
use crate::region::Region;

pub use corrector::{annulus_div_solve, drag_pairing, oscillating_corrector, AnnulusSolution, Corrector};
pub use drag::{calibrate_drag, grid_sphere_drag, sphere_drag_quadrature, strange_term, BrinkmanCoefficient, DragCalibration, GridDrag, SphereFlow, STOKES_DRAG};
pub use io::{read_field, write_field};
pub use pressure::{modified_pressure, velocity_pairing, weak_pairing, Bump, ModifiedPressure};
pub use saddle::{div_solve, solve_brinkman, solve_stokes, FlowProblem, PointDrag, SolveReport, SolverOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub h: f64,
    pub origin: [f64; 3],
}

impl Grid {
    /// `n³` cells spanning `[-half_width, half_width]³`.
    pub fn new(n: usize, half_width: f64) -> Self {
        assert!(n >= 2, "grid needs at least two cells per axis");
        let h = 2.0 * half_width / n as f64;
        Grid { n, h, origin: [-half_width; 3] }
    }

    pub fn unit(n: usize) -> Self {
        Grid::new(n, 0.5)
    }

    pub fn cells(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn cell_coords(&self, c: usize) -> [usize; 3] {
        let n = self.n;
        [c % n, (c / n) % n, c / (n * n)]
    }

    pub fn cell_center(&self, c: usize) -> [f64; 3] {
        let ijk = self.cell_coords(c);
        std::array::from_fn(|a| self.origin[a] + (ijk[a] as f64 + 0.5) * self.h)
    }

    pub fn face_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = [self.n; 3];
        d[axis] += 1;
        d
    }

    pub fn faces(&self, axis: usize) -> usize {
        let d = self.face_dims(axis);
        d[0] * d[1] * d[2]
    }

    pub fn face_index(&self, axis: usize, i: usize, j: usize, k: usize) -> usize {
        let d = self.face_dims(axis);
        i + d[0] * (j + d[1] * k)
    }

    pub fn face_coords(&self, axis: usize, f: usize) -> [usize; 3] {
        let d = self.face_dims(axis);
        [f % d[0], (f / d[0]) % d[1], f / (d[0] * d[1])]
    }

    pub fn face_stride(&self, axis: usize, b: usize) -> usize {
        let d = self.face_dims(axis);
        [1, d[0], d[0] * d[1]][b]
    }

    pub fn face_center(&self, axis: usize, f: usize) -> [f64; 3] {
        let ijk = self.face_coords(axis, f);
        std::array::from_fn(|b| {
            let shift = if b == axis { 0.0 } else { 0.5 };
            self.origin[b] + (ijk[b] as f64 + shift) * self.h
        })
    }

    /// Cells on either side of face `f` along `axis`, `None` outside the box.
    pub fn face_cells(&self, axis: usize, f: usize) -> (Option<usize>, Option<usize>) {
        let ijk = self.face_coords(axis, f);
        let hi = (ijk[axis] < self.n).then(|| self.cell_index(ijk[0], ijk[1], ijk[2]));
        let lo = (ijk[axis] > 0).then(|| {
            let mut m = ijk;
            m[axis] -= 1;
            self.cell_index(m[0], m[1], m[2])
        });
        (lo, hi)
    }

    pub fn half_width(&self) -> f64 {
        -self.origin[0]
    }
}

/// Solid/fluid classification of cells and faces.
#[derive(Clone, Debug)]
pub struct Masks {
    pub solid_cell: Vec<bool>,
    /// Interior faces adjacent to a solid cell. Faces on ∂D are walls and
    /// are handled separately.
    pub solid_face: [Vec<bool>; 3],
    /// Holes too small to mark any cell, kept for the point-drag path.
    pub unresolved: Vec<Ball>,
    pub warning: Option<String>,
}

impl Masks {
    pub fn fluid(g: &Grid) -> Self {
        Masks {
            solid_cell: vec![false; g.cells()],
            solid_face: std::array::from_fn(|a| vec![false; g.faces(a)]),
            unresolved: Vec::new(),
            warning: None,
        }
    }

    pub fn solid_cells(&self) -> usize {
        self.solid_cell.iter().filter(|&&s| s).count()
    }
}

/// A cell is solid iff its center lies in the region. A nonempty region that
/// marks no cell gets a resolution warning.
pub fn mask_from_region(r: &Region, g: &Grid) -> Masks {
    let solid: Vec<bool> = crate::exec::map_indices(g.cells(), |c| r.contains(&g.cell_center(c)));
    let mut m = Masks::from_solid(g, solid);
    if !r.is_empty() && m.solid_cells() == 0 {
        m.warning = Some(format!("region is not resolved by the grid (h = {:.4e}): no cell center inside", g.h));
    }
    m
}

/// Masks for a union of balls. Balls with radius below `h` (diameter under
/// two cells) are not masked; they are returned in `unresolved` and named
/// in the warning, so callers can route them to the point-drag model.
pub fn mask_from_balls(balls: &[Ball], g: &Grid) -> Masks {
    let (resolved, unresolved): (Vec<Ball>, Vec<Ball>) = balls.iter().cloned().partition(|b| b.radius >= g.h);
    let region = Region::balls(3, resolved);
    let mut m = mask_from_region(&region, g);
    if !unresolved.is_empty() {
        let rmax = unresolved.iter().map(|b| b.radius).fold(0.0, f64::max);
        m.warning = Some(format!(
            "{} of {} holes are below the grid resolution (radius < h = {:.4e}, largest {:.4e}); treated as point drags",
            unresolved.len(),
            balls.len(),
            g.h,
            rmax
        ));
    }
    m.unresolved = unresolved;
    m
}

/// Face-normal velocities and cell pressures on a [`Grid`].
#[derive(Clone, Debug)]
pub struct StaggeredField {
    pub grid: Grid,
    pub u: [Vec<f64>; 3],
    pub p: Vec<f64>,
}

impl StaggeredField {
    pub fn zeros(g: &Grid) -> Self {
        StaggeredField { grid: g.clone(), u: std::array::from_fn(|a| vec![0.0; g.faces(a)]), p: vec![0.0; g.cells()] }
    }

    /// Cellwise divergence `Σ_a (u_a⁺ − u_a⁻) / h`.
    pub fn divergence(&self) -> Vec<f64> {
        let g = &self.grid;
        (0..g.cells())
            .map(|c| {
                let [i, j, k] = g.cell_coords(c);
                (0..3)
                    .map(|a| {
                        let lo = g.face_index(a, i, j, k);
                        self.u[a][lo + g.face_stride(a, a)] - self.u[a][lo]
                    })
                    .sum::<f64>()
                    / g.h
            })
            .collect()
    }

    /// Face values averaged to the cell center.
    pub fn cell_velocity(&self, c: usize) -> [f64; 3] {
        let g = &self.grid;
        let [i, j, k] = g.cell_coords(c);
        std::array::from_fn(|a| {
            let lo = g.face_index(a, i, j, k);
            0.5 * (self.u[a][lo] + self.u[a][lo + g.face_stride(a, a)])
        })
    }

    /// Discrete `‖∇u‖²_{L²}`: nearest-neighbour differences along every
    /// axis, with the no-slip walls half a cell from tangential faces.
    pub fn dirichlet_energy(&self) -> f64 {
        let g = &self.grid;
        let h = g.h;
        let mut e = 0.0;
        for a in 0..3 {
            let d = g.face_dims(a);
            let u = &self.u[a];
            for b in 0..3 {
                let s = g.face_stride(a, b);
                for f in 0..u.len() {
                    let ijk = g.face_coords(a, f);
                    if ijk[b] + 1 < d[b] {
                        let diff = u[f + s] - u[f];
                        e += h * diff * diff;
                    }
                    if b != a && (ijk[b] == 0 || ijk[b] + 1 == d[b]) {
                        e += 2.0 * h * u[f] * u[f];
                    }
                }
            }
        }
        e
    }

    pub fn velocity_l2_sq(&self) -> f64 {
        let h3 = self.grid.h.powi(3);
        self.u.iter().flatten().map(|v| v * v).sum::<f64>() * h3
    }

    /// `‖∇u‖_{L²}`, the norm used for fields vanishing on ∂D.
    pub fn h1_norm(&self) -> f64 {
        self.dirichlet_energy().sqrt()
    }

    /// `‖u − v‖_{L²}` with cell-centered velocities.
    pub fn velocity_gap(&self, other: &StaggeredField) -> f64 {
        let h3 = self.grid.h.powi(3);
        let s: f64 = (0..self.grid.cells())
            .map(|c| {
                let (a, b) = (self.cell_velocity(c), other.cell_velocity(c));
                (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()
            })
            .sum();
        (s * h3).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_and_cell_indexing_agree() {
        let g = Grid::new(4, 1.0);
        assert_eq!(g.h, 0.5);
        let c = g.cell_index(1, 2, 3);
        assert_eq!(g.cell_coords(c), [1, 2, 3]);
        assert_eq!(g.cell_center(c), [-0.25, 0.25, 0.75]);
        let f = g.face_index(0, 4, 2, 3);
        assert_eq!(g.face_center(0, f), [1.0, 0.25, 0.75]);
        assert_eq!(g.face_cells(0, f), (Some(g.cell_index(3, 2, 3)), None));
        let f = g.face_index(2, 1, 2, 0);
        assert_eq!(g.face_cells(2, f), (None, Some(g.cell_index(1, 2, 0))));
    }

    #[test]
    fn empty_and_full_regions() {
        let g = Grid::unit(8);
        let m = mask_from_region(&Region::empty(3), &g);
        assert_eq!(m.solid_cells(), 0);
        assert!(m.warning.is_none());
        let m = mask_from_region(&Region::ball(Ball::new(vec![0.0; 3], 1.0)), &g);
        assert_eq!(m.solid_cells(), g.cells());
        assert!(m.solid_face.iter().all(|f| f.iter().all(|&s| s)));
    }

    #[test]
    fn masked_ball_volume_matches() {
        let g = Grid::unit(64);
        let m = mask_from_region(&Region::ball(Ball::new(vec![0.0; 3], 0.25)), &g);
        let vol = m.solid_cells() as f64 * g.h.powi(3);
        let exact = 4.0 * std::f64::consts::PI * 0.25f64.powi(3) / 3.0;
        assert!((vol / exact - 1.0).abs() < 0.05, "{vol} vs {exact}");
    }

    #[test]
    fn small_balls_are_flagged() {
        let g = Grid::unit(16);
        let m = mask_from_balls(&[Ball::new(vec![0.0; 3], 0.01), Ball::new(vec![0.2; 3], 0.1)], &g);
        assert_eq!(m.unresolved.len(), 1);
        assert!(m.warning.as_deref().unwrap().contains("1 of 2"));
        assert!(m.solid_cells() > 0);
    }

    #[test]
    fn energy_of_constant_tangential_field() {
        // Only the wall terms survive: 2h per face next to the four walls
        // tangential to u_y.
        let g = Grid::unit(8);
        let mut f = StaggeredField::zeros(&g);
        f.u[1].iter_mut().for_each(|v| *v = 1.0);
        let n = g.n as f64;
        assert!((f.dirichlet_energy() - 8.0 * g.h * n * (n + 1.0)).abs() < 1e-12);
        assert_eq!(f.divergence(), vec![0.0; g.cells()]);
        assert_eq!(StaggeredField::zeros(&g).dirichlet_energy(), 0.0);
    }
}
