//! Single-sphere Stokes flow: the classical uniform-flow solution, its drag
//! by surface quadrature, the grid drag of a translating sphere with a
//! finite-box fit, and the friction coefficient built from the drag
//! constant.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Ball;
use crate::point_process::RadiusLaw;
use crate::region::Region;

use super::saddle::{FlowProblem, SolverOptions};
use super::{mask_from_region, Grid};

/// Drag per unit radius and unit velocity of a sphere in unit-viscosity
/// Stokes flow, `C_3 = 6π`.
pub const STOKES_DRAG: f64 = 6.0 * PI;

/// Isotropic friction `μ I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrinkmanCoefficient {
    pub mu: f64,
}

/// `μ = C_d λ ⟨ρ^{d−2}⟩` with `C_3 = 6π`; only `d = 3` is supported.
pub fn strange_term(lambda: f64, law: &RadiusLaw, d: usize) -> Result<BrinkmanCoefficient> {
    if d != 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("intensity must be non-negative, got {lambda}")));
    }
    let m = law.moment(d as f64 - 2.0)?;
    Ok(BrinkmanCoefficient { mu: STOKES_DRAG * lambda * m })
}

/// Flow past a sphere of radius `a` at the origin that tends to `e_axis`
/// at infinity (unit viscosity).
#[derive(Clone, Copy, Debug)]
pub struct SphereFlow {
    pub a: f64,
    pub axis: usize,
}

impl SphereFlow {
    pub fn velocity(&self, x: &[f64; 3]) -> [f64; 3] {
        let a = self.a;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        if r <= a {
            return [0.0; 3];
        }
        let ex = x[self.axis];
        let (c1, c2) = (0.75 * a / r + 0.25 * a * a * a / (r2 * r), 0.75 * a / (r2 * r) - 0.75 * a * a * a / (r2 * r2 * r));
        std::array::from_fn(|i| {
            let e = if i == self.axis { 1.0 } else { 0.0 };
            e * (1.0 - c1) - c2 * ex * x[i]
        })
    }

    pub fn pressure(&self, x: &[f64; 3]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        -1.5 * self.a * x[self.axis] / (r2 * r2.sqrt())
    }

    /// `∂u_i/∂x_j` by central differences of the closed form, valid at
    /// and outside the sphere (the formula is smooth away from 0).
    pub fn gradient(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        let step = 1e-5 * self.a;
        let ext = SphereFlow { a: self.a, axis: self.axis };
        let raw = |y: &[f64; 3]| -> [f64; 3] {
            // Closed form without the interior cut-off.
            let a = ext.a;
            let r2: f64 = y.iter().map(|v| v * v).sum();
            let r = r2.sqrt();
            let ex = y[ext.axis];
            let c1 = 0.75 * a / r + 0.25 * a * a * a / (r2 * r);
            let c2 = 0.75 * a / (r2 * r) - 0.75 * a * a * a / (r2 * r2 * r);
            std::array::from_fn(|i| {
                let e = if i == ext.axis { 1.0 } else { 0.0 };
                e * (1.0 - c1) - c2 * ex * y[i]
            })
        };
        let mut g = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut p = *x;
            let mut m = *x;
            p[j] += step;
            m[j] -= step;
            let (up, um) = (raw(&p), raw(&m));
            for i in 0..3 {
                g[i][j] = (up[i] - um[i]) / (2.0 * step);
            }
        }
        g
    }

    /// Traction `σ n` on the sphere at unit normal `n`, with
    /// `σ = −pI + ∇u + ∇uᵀ`.
    pub fn traction(&self, n: &[f64; 3]) -> [f64; 3] {
        let x: [f64; 3] = std::array::from_fn(|i| self.a * n[i]);
        let g = self.gradient(&x);
        let p = self.pressure(&x);
        std::array::from_fn(|i| -p * n[i] + (0..3).map(|j| (g[i][j] + g[j][i]) * n[j]).sum::<f64>())
    }
}

/// Force exerted by the flow on the sphere, by Gauss–Legendre quadrature in
/// `cos ϑ` times the trapezoid rule in the azimuth.
pub fn sphere_drag_quadrature(flow: &SphereFlow, n_theta: usize, n_phi: usize) -> [f64; 3] {
    let (nodes, weights) = gauss_legendre(n_theta);
    let a2 = flow.a * flow.a;
    let mut f = [0.0; 3];
    for (t, w) in nodes.iter().zip(&weights) {
        let s = (1.0 - t * t).sqrt();
        for k in 0..n_phi {
            let phi = 2.0 * PI * k as f64 / n_phi as f64;
            // Polar axis along the flow axis.
            let mut n = [0.0; 3];
            n[flow.axis] = *t;
            n[(flow.axis + 1) % 3] = s * phi.cos();
            n[(flow.axis + 2) % 3] = s * phi.sin();
            let tr = flow.traction(&n);
            for i in 0..3 {
                f[i] += tr[i] * w * (2.0 * PI / n_phi as f64) * a2;
            }
        }
    }
    f
}

/// Nodes and weights on [−1, 1] by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Drag of a unit-speed sphere of radius `a` at the center of a box at rest.
#[derive(Clone, Debug)]
pub struct GridDrag {
    pub half_width: f64,
    pub n: usize,
    /// Dissipation `‖∇u‖²`, equal to the drag at unit speed.
    pub drag: f64,
    pub iterations: usize,
    pub div_residual: f64,
}

pub fn grid_sphere_drag(a: f64, n: usize, half_width: f64, opts: &SolverOptions) -> Result<GridDrag> {
    let g = Grid::new(n, half_width);
    let masks = mask_from_region(&Region::ball(Ball::new(vec![0.0; 3], a)), &g);
    if masks.solid_cells() == 0 {
        return Err(Error::Numeric(format!("sphere of radius {a} is not resolved at h = {}", g.h)));
    }
    let mut pb = FlowProblem::new(&g, &masks);
    pb.fixed = Some(std::array::from_fn(|ax| (0..g.faces(ax)).map(|f| if ax == 0 && masks.solid_face[0][f] { 1.0 } else { 0.0 }).collect()));
    let (_, rep) = pb.solve(opts)?;
    Ok(GridDrag { half_width, n, drag: rep.energy, iterations: rep.iterations, div_residual: rep.div_residual })
}

/// Unbounded-domain drag from two boxes at the same resolution, fitting
/// `F(L) = F_∞ / (1 − k a / L)`.
#[derive(Clone, Debug)]
pub struct DragCalibration {
    pub a: f64,
    pub small: GridDrag,
    pub large: GridDrag,
    pub wall_coefficient: f64,
    pub corrected: f64,
}

impl DragCalibration {
    /// Corrected drag over `6πa`.
    pub fn ratio(&self) -> f64 {
        self.corrected / (STOKES_DRAG * self.a)
    }
}

pub fn calibrate_drag(a: f64, h: f64, box_factors: (f64, f64), opts: &SolverOptions) -> Result<DragCalibration> {
    let run = |factor: f64| {
        let half = factor * a;
        let n = (2.0 * half / h).round() as usize;
        grid_sphere_drag(a, n, n as f64 * h / 2.0, opts)
    };
    let small = run(box_factors.0)?;
    let large = run(box_factors.1)?;
    let (x1, x2) = (a / small.half_width, a / large.half_width);
    // F1 (1 − k x1) = F2 (1 − k x2).
    let k = (small.drag - large.drag) / (small.drag * x1 - large.drag * x2);
    let corrected = small.drag * (1.0 - k * x1);
    Ok(DragCalibration { a, small, large, wall_coefficient: k, corrected })
}
