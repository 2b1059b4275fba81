//! The symmetric saddle-point system shared by all flow solves,
//!
//! ```text
//! [ A   −Dᵀ ] [u]   [f]
//! [ −D   0  ] [p] = [−h³ g]
//! ```
//!
//! with `A` the face Laplacian (energy-scaled, so `uᵀAu = ‖∇u‖²`) plus an
//! optional friction term and point drags, and `D` the cell divergence
//! scaled by `h²`. Faces on ∂D and faces next to solid cells are fixed; a
//! nonzero fixed value enters by lifting. Pressure is determined up to a
//! constant on each fluid component (cells connected through free faces);
//! those constants are projected out.
//!
//! Solved by MINRES with a block-diagonal preconditioner: a multigrid cycle
//! per velocity component, and the scaled pressure mass matrix (plus a
//! friction-weighted pressure Laplacian when there is friction) for the
//! Schur complement.

use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{minres, Multigrid, StencilOp};

use super::drag::STOKES_DRAG;
use super::{Grid, Masks, StaggeredField};

/// Subgrid sphere with Stokes drag `coefficient` (`6πa` for radius `a`),
/// applied through trilinear interpolation of the face velocities.
///
/// A point force on the lattice moves the interpolated velocity at its own
/// location, which a real sphere of radius `a ≪ h` would not. The applied
/// coefficient is therefore `γ / (1 − γ M)`, with `M` the lattice
/// self-mobility at that position, so that the drag against the
/// surrounding flow is `γ` rather than `γ / (1 + γ M)`.
#[derive(Clone, Debug)]
pub struct PointDrag {
    pub center: [f64; 3],
    pub coefficient: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Target relative divergence residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 100_000 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Euclidean residual of the full system relative to its right side.
    pub residual: f64,
    /// `‖Du − g‖ / max(‖g‖, Σ|fluxes|)`, cellwise with `h²`-scaled fluxes.
    pub div_residual: f64,
    pub components: usize,
    pub energy: f64,
    pub warning: Option<String>,
}

/// Everything that defines one solve.
pub struct FlowProblem<'a> {
    pub grid: &'a Grid,
    pub masks: &'a Masks,
    /// Body force per unit volume at face centers, per component.
    pub force: [Vec<f64>; 3],
    /// Prescribed divergence per cell (zero when absent).
    pub divergence: Option<Vec<f64>>,
    /// Values on interior solid faces; walls are always at rest.
    pub fixed: Option<[Vec<f64>; 3]>,
    pub friction: f64,
    pub drags: Vec<PointDrag>,
}

impl<'a> FlowProblem<'a> {
    /// No force, no friction; unresolved holes of the masks become point
    /// drags with the Stokes coefficient `6πa`.
    pub fn new(grid: &'a Grid, masks: &'a Masks) -> Self {
        let drags = masks
            .unresolved
            .iter()
            .map(|b| PointDrag { center: [b.center[0], b.center[1], b.center[2]], coefficient: STOKES_DRAG * b.radius })
            .collect();
        FlowProblem {
            grid,
            masks,
            force: std::array::from_fn(|a| vec![0.0; grid.faces(a)]),
            divergence: None,
            fixed: None,
            friction: 0.0,
            drags,
        }
    }

    pub fn with_force(mut self, f: impl Fn(&[f64; 3]) -> [f64; 3] + Sync) -> Self {
        let g = self.grid;
        self.force = std::array::from_fn(|a| exec::map_indices(g.faces(a), |i| f(&g.face_center(a, i))[a]));
        self
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<(StaggeredField, SolveReport)> {
        let sys = System::build(self)?;
        sys.solve(self, opts)
    }
}

/// Drag weights per component: (face index, weight) pairs.
type DragStencil = [Vec<(usize, f64)>; 3];

struct System<'a> {
    g: &'a Grid,
    free: [Vec<bool>; 3],
    ops: [StencilOp; 3],
    fluid: Vec<bool>,
    /// Fluid component per cell (`usize::MAX` for solid).
    comp: Vec<usize>,
    comp_size: Vec<usize>,
    /// Effective coefficient per component and stencil.
    drags: Vec<([f64; 3], DragStencil)>,
    drag_warning: Option<String>,
    friction: f64,
    offsets: [usize; 4],
    len: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl<'a> System<'a> {
    fn build(pb: &FlowProblem<'a>) -> Result<Self> {
        let g = pb.grid;
        let n = g.n;
        let h = g.h;
        let fluid: Vec<bool> = pb.masks.solid_cell.iter().map(|s| !s).collect();
        if !fluid.iter().any(|&f| f) {
            return Err(Error::Numeric("no fluid cells".into()));
        }
        let free: [Vec<bool>; 3] = std::array::from_fn(|a| {
            (0..g.faces(a))
                .map(|f| {
                    let ijk = g.face_coords(a, f);
                    ijk[a] > 0 && ijk[a] < n && !pb.masks.solid_face[a][f]
                })
                .collect()
        });
        let green = if pb.drags.is_empty() { None } else { Some(lattice_green(h, g.n)?) };
        let mut capped = 0;
        let drags: Vec<([f64; 3], DragStencil)> = pb
            .drags
            .iter()
            .filter(|d| d.coefficient > 0.0)
            .map(|d| {
                let st: DragStencil = std::array::from_fn(|a| trilinear(g, a, &d.center, &free[a]));
                let gamma = std::array::from_fn(|a| {
                    let m = self_mobility(g, a, &st[a], green.as_ref().unwrap());
                    let reduction = 1.0 - d.coefficient * m;
                    if reduction < MIN_REDUCTION {
                        capped += 1;
                    }
                    d.coefficient / reduction.max(MIN_REDUCTION)
                });
                (gamma, st)
            })
            .collect();
        let drag_warning = (capped > 0).then(|| {
            format!("{capped} point-drag components exceed the lattice self-mobility bound; coefficient capped at {:.0}x", 1.0 / MIN_REDUCTION)
        });
        let ops: [StencilOp; 3] = std::array::from_fn(|a| {
            let dims = g.face_dims(a);
            let mut op = StencilOp::zeros(dims);
            op.free = free[a].clone();
            for f in 0..op.len() {
                let ijk = g.face_coords(a, f);
                for b in 0..3 {
                    if ijk[b] + 1 < dims[b] {
                        op.add_link(f, b, h);
                    }
                    if b != a && op.free[f] {
                        if ijk[b] == 0 {
                            op.diag[f] += 2.0 * h;
                        }
                        if ijk[b] + 1 == dims[b] {
                            op.diag[f] += 2.0 * h;
                        }
                    }
                }
                if op.free[f] {
                    op.diag[f] += pb.friction * h * h * h;
                }
            }
            op
        });

        let cells = g.cells();
        let mut parent: Vec<usize> = (0..cells).collect();
        for a in 0..3 {
            for (f, &fr) in free[a].iter().enumerate() {
                if fr {
                    let (lo, hi) = g.face_cells(a, f);
                    let (x, y) = (find(&mut parent, lo.unwrap()), find(&mut parent, hi.unwrap()));
                    if x != y {
                        parent[x.max(y)] = x.min(y);
                    }
                }
            }
        }
        let mut comp = vec![usize::MAX; cells];
        let mut label = std::collections::HashMap::new();
        let mut comp_size = Vec::new();
        for c in 0..cells {
            if fluid[c] {
                let r = find(&mut parent, c);
                let next = label.len();
                let id = *label.entry(r).or_insert(next);
                if id == comp_size.len() {
                    comp_size.push(0);
                }
                comp_size[id] += 1;
                comp[c] = id;
            }
        }
        let f0 = g.faces(0);
        let f1 = g.faces(1);
        let f2 = g.faces(2);
        let offsets = [0, f0, f0 + f1, f0 + f1 + f2];
        Ok(System { g, free, ops, fluid, comp, comp_size, drags, drag_warning, friction: pb.friction, offsets, len: offsets[3] + cells })
    }

    fn split<'v>(&self, x: &'v [f64]) -> ([&'v [f64]; 3], &'v [f64]) {
        let o = self.offsets;
        ([&x[o[0]..o[1]], &x[o[1]..o[2]], &x[o[2]..o[3]]], &x[o[3]..])
    }

    fn split_mut<'v>(&self, y: &'v mut [f64]) -> ([&'v mut [f64]; 3], &'v mut [f64]) {
        let o = self.offsets;
        let (u, p) = y.split_at_mut(o[3]);
        let (u0, rest) = u.split_at_mut(o[1]);
        let (u1, u2) = rest.split_at_mut(o[2] - o[1]);
        ([u0, u1, u2], p)
    }

    /// `out_c = h² Σ_a (u_a⁺ − u_a⁻)` over all cells.
    fn div_into(&self, u: [&[f64]; 3], out: &mut [f64]) {
        let g = self.g;
        let n = g.n;
        let h2 = g.h * g.h;
        exec::for_each_chunk_mut(out, n * n, |k, plane| {
            for j in 0..n {
                for i in 0..n {
                    let mut s = 0.0;
                    for a in 0..3 {
                        let lo = g.face_index(a, i, j, k);
                        let st = g.face_stride(a, a);
                        s += u[a][lo + st] - u[a][lo];
                    }
                    plane[i + n * j] = h2 * s;
                }
            }
        });
    }

    /// Adds `−Dᵀp` (that is `h³ ∇p`) on free faces.
    fn grad_add(&self, p: &[f64], a: usize, ya: &mut [f64]) {
        let g = self.g;
        let h2 = g.h * g.h;
        let free = &self.free[a];
        let d = g.face_dims(a);
        let plane = d[0] * d[1];
        let n = g.n;
        let cs = [1, n, n * n][a];
        exec::for_each_chunk_mut(ya, plane, |k, yk| {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let f = k * plane + i + d[0] * j;
                    if free[f] {
                        let ijk = [i, j, k];
                        let hi = ijk[0] + n * (ijk[1] + n * ijk[2]);
                        yk[i + d[0] * j] += h2 * (p[hi] - p[hi - cs]);
                    }
                }
            }
        });
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (u, p) = self.split(x);
        let (mut yu, yp) = self.split_mut(y);
        for a in 0..3 {
            self.ops[a].apply(u[a], yu[a]);
            self.grad_add(p, a, yu[a]);
        }
        for (gamma, st) in &self.drags {
            for a in 0..3 {
                let s: f64 = st[a].iter().map(|&(f, w)| w * u[a][f]).sum();
                for &(f, w) in &st[a] {
                    yu[a][f] += gamma[a] * s * w;
                }
            }
        }
        let _ = &mut yu;
        self.div_into(u, yp);
        for (c, v) in yp.iter_mut().enumerate() {
            *v = if self.fluid[c] { -*v } else { 0.0 };
        }
    }

    /// Removes the mean on every fluid component; zeros solid cells.
    fn project(&self, p: &mut [f64]) {
        let mut sum = vec![0.0; self.comp_size.len()];
        for (c, &id) in self.comp.iter().enumerate() {
            if id != usize::MAX {
                sum[id] += p[c];
            }
        }
        for (c, &id) in self.comp.iter().enumerate() {
            p[c] = if id == usize::MAX { 0.0 } else { p[c] - sum[id] / self.comp_size[id] as f64 };
        }
    }

    /// Pressure Laplacian `D Dᵀ / h³` on fluid cells, shifted slightly to
    /// make it definite.
    fn pressure_laplacian(&self) -> StencilOp {
        let g = self.g;
        let n = g.n;
        let h = g.h;
        let mut op = StencilOp::zeros([n; 3]);
        op.free = self.fluid.clone();
        for a in 0..3 {
            for (f, &fr) in self.free[a].iter().enumerate() {
                if fr {
                    let (lo, _) = g.face_cells(a, f);
                    op.add_link(lo.unwrap(), a, h);
                }
            }
        }
        for c in 0..op.len() {
            if op.free[c] {
                op.diag[c] += 1e-3 * h * h * h;
            }
        }
        op
    }

    fn rhs(&self, pb: &FlowProblem) -> Result<Vec<f64>> {
        let g = self.g;
        let h = g.h;
        let h3 = h * h * h;
        let mut b = vec![0.0; self.len];
        let cells = g.cells();
        let (mut bu, bp) = self.split_mut(&mut b);
        for a in 0..3 {
            for (f, v) in bu[a].iter_mut().enumerate() {
                if self.free[a][f] {
                    *v = h3 * pb.force[a][f];
                }
            }
        }
        let fixed_u: [Vec<f64>; 3] = match &pb.fixed {
            Some(fx) => std::array::from_fn(|a| {
                (0..g.faces(a))
                    .map(|f| {
                        let ijk = g.face_coords(a, f);
                        let wall = ijk[a] == 0 || ijk[a] == g.n;
                        if self.free[a][f] || wall {
                            0.0
                        } else {
                            fx[a][f]
                        }
                    })
                    .collect()
            }),
            None => std::array::from_fn(|a| vec![0.0; g.faces(a)]),
        };
        if pb.fixed.is_some() {
            // Lifting: links from free faces to fixed neighbours.
            for a in 0..3 {
                let dims = g.face_dims(a);
                for f in 0..g.faces(a) {
                    if !self.free[a][f] {
                        continue;
                    }
                    let ijk = g.face_coords(a, f);
                    for b2 in 0..3 {
                        let s = g.face_stride(a, b2);
                        if ijk[b2] + 1 < dims[b2] && !self.free[a][f + s] {
                            bu[a][f] += h * fixed_u[a][f + s];
                        }
                        if ijk[b2] > 0 && !self.free[a][f - s] {
                            bu[a][f] += h * fixed_u[a][f - s];
                        }
                    }
                }
            }
        }
        let _ = &mut bu;
        let mut dx = vec![0.0; cells];
        self.div_into([&fixed_u[0], &fixed_u[1], &fixed_u[2]], &mut dx);
        for c in 0..cells {
            if self.fluid[c] {
                let gdiv = pb.divergence.as_ref().map_or(0.0, |d| d[c]);
                bp[c] = dx[c] - h3 * gdiv;
            }
        }
        // Every fluid component must balance its own flux.
        let mut net = vec![0.0; self.comp_size.len()];
        let mut scale = vec![0.0; self.comp_size.len()];
        for c in 0..cells {
            let id = self.comp[c];
            if id != usize::MAX {
                net[id] += bp[c];
                scale[id] += bp[c].abs();
            }
        }
        let total: f64 = scale.iter().sum();
        for (id, (&nv, &sv)) in net.iter().zip(&scale).enumerate() {
            if nv.abs() > 1e-8 * sv.max(1e-3 * total) && nv.abs() > 1e-300 {
                return Err(Error::Infeasible { component: id, net: nv / h3 });
            }
        }
        self.project(bp);
        Ok(b)
    }

    fn solve(&self, pb: &FlowProblem, opts: &SolverOptions) -> Result<(StaggeredField, SolveReport)> {
        let g = self.g;
        let h = g.h;
        let h3 = h * h * h;
        let b = self.rhs(pb)?;
        let mgs: Vec<Multigrid> = (0..3)
            .map(|a| {
                let mut op = self.ops[a].clone();
                for (gamma, st) in &self.drags {
                    for &(f, w) in &st[a] {
                        op.diag[f] += gamma[a] * w * w;
                    }
                }
                Multigrid::new(op)
            })
            .collect();
        let lap = (self.friction > 0.0).then(|| Multigrid::new(self.pressure_laplacian()));
        let friction = self.friction;
        let precond = |r: &[f64], z: &mut Vec<f64>| {
            z.clear();
            z.resize(r.len(), 0.0);
            let (ru, rp) = self.split(r);
            let (zu, zp) = self.split_mut(z);
            let mut tmp = Vec::new();
            for a in 0..3 {
                mgs[a].apply(ru[a], &mut tmp);
                for (f, out) in zu[a].iter_mut().enumerate() {
                    *out = if self.free[a][f] { tmp[f] } else { 0.0 };
                }
            }
            let mut rp0 = rp.to_vec();
            self.project(&mut rp0);
            for c in 0..zp.len() {
                zp[c] = rp0[c] / h3;
            }
            if let Some(mg) = &lap {
                mg.apply(&rp0, &mut tmp);
                for c in 0..zp.len() {
                    zp[c] += friction * tmp[c];
                }
            }
            self.project(zp);
        };
        let apply = |x: &[f64], y: &mut [f64]| self.apply(x, y);
        let mut x = vec![0.0; self.len];
        let mut report = SolveReport { components: self.comp_size.len(), ..Default::default() };
        let bnorm = exec::dot(&b, &b).sqrt();
        if bnorm > 0.0 {
            let mut tol = 1e-10;
            let mut used = 0;
            loop {
                let stats = minres(apply, precond, &b, &mut x, tol, opts.max_iter - used)?;
                used += stats.iterations;
                report.iterations = used;
                report.residual = stats.residual;
                report.div_residual = self.div_residual(&x, &b);
                if report.div_residual <= opts.tol || tol < 1e-15 || used >= opts.max_iter {
                    break;
                }
                tol *= 0.1;
            }
            if report.div_residual > opts.tol {
                return Err(Error::NoConvergence { iterations: report.iterations, residual: report.div_residual });
            }
        }
        let (u, p) = self.split(&x);
        let mut field = StaggeredField::zeros(g);
        for a in 0..3 {
            for f in 0..g.faces(a) {
                field.u[a][f] = if self.free[a][f] {
                    u[a][f]
                } else {
                    let ijk = g.face_coords(a, f);
                    let wall = ijk[a] == 0 || ijk[a] == g.n;
                    match &pb.fixed {
                        Some(fx) if !wall => fx[a][f],
                        _ => 0.0,
                    }
                };
            }
        }
        field.p = p.to_vec();
        self.project(&mut field.p);
        report.energy = field.dirichlet_energy();
        report.warning = match (&pb.masks.warning, &self.drag_warning) {
            (Some(m), Some(d)) => Some(format!("{m}; {d}")),
            (m, d) => m.clone().or(d.clone()),
        };
        Ok((field, report))
    }

    /// Constraint residual relative to the larger of the target and the
    /// cellwise absolute flux.
    fn div_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let (u, _) = self.split(x);
        let (_, bp) = self.split(b);
        let g = self.g;
        let h2 = g.h * g.h;
        let mut du = vec![0.0; g.cells()];
        self.div_into(u, &mut du);
        let (mut r2, mut b2, mut f2) = (0.0, 0.0, 0.0);
        for c in 0..g.cells() {
            if !self.fluid[c] {
                continue;
            }
            let r = du[c] + bp[c];
            r2 += r * r;
            b2 += bp[c] * bp[c];
            let [i, j, k] = g.cell_coords(c);
            let mut flux = 0.0;
            for a in 0..3 {
                let lo = g.face_index(a, i, j, k);
                flux += u[a][lo].abs() + u[a][lo + g.face_stride(a, a)].abs();
            }
            f2 += (h2 * flux).powi(2);
        }
        let scale = b2.max(f2).sqrt();
        if scale == 0.0 {
            0.0
        } else {
            r2.sqrt() / scale
        }
    }
}

/// Smallest admitted `1 − γM`; beyond it the hole should be masked instead.
const MIN_REDUCTION: f64 = 0.25;

/// Response `u_x` on the x-faces at offsets `{−1, 0, 1}³` to a unit force
/// on one x-face near the center of a box of at most 64³ cells at spacing
/// `h` (the box walls enter only through a small reflection term).
/// Cached per spacing.
pub fn lattice_green(h: f64, n: usize) -> Result<[f64; 27]> {
    static CACHE: Mutex<Vec<((u64, usize), [f64; 27])>> = Mutex::new(Vec::new());
    let m = n.min(64);
    let key = (h.to_bits(), m);
    if let Some((_, v)) = CACHE.lock().unwrap().iter().find(|(k, _)| *k == key) {
        return Ok(*v);
    }
    let g = Grid { n: m, h, origin: [0.0; 3] };
    let masks = Masks::from_solid(&g, vec![false; g.cells()]);
    let mut pb = FlowProblem::new(&g, &masks);
    let c = m / 2;
    pb.force[0][g.face_index(0, c, c, c)] = 1.0 / (h * h * h);
    let (u, _) = pb.solve(&SolverOptions::default())?;
    let mut out = [0.0; 27];
    for (t, v) in out.iter_mut().enumerate() {
        let d = [t % 3, t / 3 % 3, t / 9];
        *v = u.u[0][g.face_index(0, c + d[0] - 1, c + d[1] - 1, c + d[2] - 1)];
    }
    CACHE.lock().unwrap().push((key, out));
    Ok(out)
}

/// `Σ_ij w_i w_j G(f_i − f_j)` for the component-`a` stencil, with the
/// x-face table mapped to axis `a` by swapping axes 0 and `a`.
fn self_mobility(g: &Grid, a: usize, st: &[(usize, f64)], green: &[f64; 27]) -> f64 {
    let mut m = 0.0;
    for &(fi, wi) in st {
        let pi = g.face_coords(a, fi);
        for &(fj, wj) in st {
            let pj = g.face_coords(a, fj);
            let mut d: [usize; 3] = std::array::from_fn(|b| (pi[b] + 1 - pj[b]) as usize);
            d.swap(0, a);
            m += wi * wj * green[d[0] + 3 * d[1] + 9 * d[2]];
        }
    }
    m
}

/// Trilinear interpolation weights of the component-`a` face lattice at
/// `x`, restricted to free faces.
fn trilinear(g: &Grid, a: usize, x: &[f64; 3], free: &[bool]) -> Vec<(usize, f64)> {
    let dims = g.face_dims(a);
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for b in 0..3 {
        let shift = if b == a { 0.0 } else { 0.5 };
        let t = (x[b] - g.origin[b]) / g.h - shift;
        let i0 = (t.floor().max(0.0) as usize).min(dims[b] - 2);
        base[b] = i0;
        frac[b] = (t - i0 as f64).clamp(0.0, 1.0);
    }
    let mut out = Vec::with_capacity(8);
    for corner in 0..8 {
        let mut w = 1.0;
        let mut ijk = base;
        for b in 0..3 {
            if corner >> b & 1 == 1 {
                ijk[b] += 1;
                w *= frac[b];
            } else {
                w *= 1.0 - frac[b];
            }
        }
        let f = g.face_index(a, ijk[0], ijk[1], ijk[2]);
        if w > 0.0 && free[f] {
            out.push((f, w));
        }
    }
    out
}

/// Stokes in the fluid part of `masks` with body force `force`.
pub fn solve_stokes(
    g: &Grid,
    masks: &Masks,
    force: impl Fn(&[f64; 3]) -> [f64; 3] + Sync,
    opts: &SolverOptions,
) -> Result<(StaggeredField, SolveReport)> {
    FlowProblem::new(g, masks).with_force(force).solve(opts)
}

/// Brinkman `−Δu + μu + ∇p = f` in the whole box.
pub fn solve_brinkman(
    g: &Grid,
    mu: &super::BrinkmanCoefficient,
    force: impl Fn(&[f64; 3]) -> [f64; 3] + Sync,
    opts: &SolverOptions,
) -> Result<(StaggeredField, SolveReport)> {
    if !(mu.mu >= 0.0) {
        return Err(Error::Config(format!("friction coefficient must be non-negative, got {}", mu.mu)));
    }
    let masks = Masks::fluid(g);
    let mut pb = FlowProblem::new(g, &masks).with_force(force);
    pb.friction = mu.mu;
    pb.solve(opts)
}

/// Minimal-energy `v` with `div v = rhs` on fluid cells and `v = 0` on solid
/// faces and ∂D. The right side is recentered over the fluid cells first;
/// returns `v`, the ratio `‖v‖_{H¹} / ‖rhs‖_{L^q}` and the solve report.
pub fn div_solve(g: &Grid, masks: &Masks, rhs: &[f64], q: f64, opts: &SolverOptions) -> Result<(StaggeredField, f64, SolveReport)> {
    if rhs.len() != g.cells() {
        return Err(Error::Config(format!("right side has {} cells, grid has {}", rhs.len(), g.cells())));
    }
    let fluid: Vec<usize> = (0..g.cells()).filter(|&c| !masks.solid_cell[c]).collect();
    if fluid.is_empty() {
        return Err(Error::Numeric("no fluid cells".into()));
    }
    let mean = fluid.iter().map(|&c| rhs[c]).sum::<f64>() / fluid.len() as f64;
    let mut g_rhs = vec![0.0; g.cells()];
    for &c in &fluid {
        g_rhs[c] = rhs[c] - mean;
    }
    let h3 = g.h.powi(3);
    let lq = (fluid.iter().map(|&c| g_rhs[c].abs().powf(q)).sum::<f64>() * h3).powf(1.0 / q);
    if lq == 0.0 {
        return Ok((StaggeredField::zeros(g), 0.0, SolveReport { warning: masks.warning.clone(), ..Default::default() }));
    }
    let mut pb = FlowProblem::new(g, masks);
    // The divergence problem imposes no drag: unresolved holes stay
    // unconstrained and are reported through the mask warning.
    pb.drags.clear();
    pb.divergence = Some(g_rhs);
    let (v, report) = pb.solve(opts)?;
    let ratio = v.h1_norm() / lq;
    Ok((v, ratio, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ball;
    use crate::region::Region;
    use crate::stokes::{mask_from_region, BrinkmanCoefficient};
    use std::f64::consts::PI;

    #[test]
    fn zero_force_gives_zero_solution() {
        let g = Grid::unit(8);
        let m = Masks::fluid(&g);
        let (f, rep) = solve_stokes(&g, &m, |_| [0.0; 3], &SolverOptions::default()).unwrap();
        assert!(f.u.iter().flatten().all(|&v| v == 0.0));
        assert!(f.p.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn gradient_force_is_balanced_by_pressure() {
        // f = ∇φ with φ = sin(πx)sin(πy)sin(πz) on [-½,½]³ shifted to
        // vanish on ∂D: φ = cos(πx)cos(πy)cos(πz).
        let g = Grid::unit(32);
        let m = Masks::fluid(&g);
        let phi = |x: &[f64; 3]| (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos();
        let grad = |x: &[f64; 3]| {
            let (c, s): (Vec<f64>, Vec<f64>) = x.iter().map(|v| ((PI * v).cos(), (PI * v).sin())).unzip();
            [-PI * s[0] * c[1] * c[2], -PI * c[0] * s[1] * c[2], -PI * c[0] * c[1] * s[2]]
        };
        let (f, rep) = solve_stokes(&g, &m, grad, &SolverOptions::default()).unwrap();
        assert!(rep.div_residual <= 1e-8, "{rep:?}");
        let umax = f.u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(umax < 1e-6, "{umax}");
        let vals: Vec<f64> = (0..g.cells()).map(|c| phi(&g.cell_center(c))).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let err = (0..g.cells()).map(|c| (f.p[c] - (vals[c] - mean)).abs()).fold(0.0, f64::max);
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn stokes_flow_is_divergence_free_and_energy_balanced() {
        let g = Grid::unit(16);
        let m = mask_from_region(&Region::ball(Ball::new(vec![0.1, 0.0, -0.05], 0.15)), &g);
        let force = |x: &[f64; 3]| [1.0 + x[1], (3.0 * x[0]).sin(), 0.5];
        let (f, rep) = solve_stokes(&g, &m, force, &SolverOptions::default()).unwrap();
        assert!(rep.div_residual <= 1e-8);
        let div = f.divergence();
        let dmax = (0..g.cells()).filter(|&c| !m.solid_cell[c]).map(|c| div[c].abs()).fold(0.0, f64::max);
        assert!(dmax < 1e-6, "{dmax}");
        // ‖∇u‖² = ⟨f, u⟩ for a no-slip solution.
        let h3 = g.h.powi(3);
        let work: f64 = (0..3)
            .map(|a| (0..g.faces(a)).map(|i| force(&g.face_center(a, i))[a] * f.u[a][i]).sum::<f64>())
            .sum::<f64>()
            * h3;
        assert!((rep.energy - work).abs() < 1e-6 * work, "{} vs {work}", rep.energy);
        let mean: f64 = (0..g.cells()).filter(|&c| !m.solid_cell[c]).map(|c| f.p[c]).sum();
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn brinkman_with_zero_friction_matches_stokes() {
        let g = Grid::unit(12);
        let force = |x: &[f64; 3]| [x[2], 0.0, x[0] * x[1]];
        let (a, _) = solve_brinkman(&g, &BrinkmanCoefficient { mu: 0.0 }, force, &SolverOptions::default()).unwrap();
        let (b, _) = solve_stokes(&g, &Masks::fluid(&g), force, &SolverOptions::default()).unwrap();
        assert!(a.velocity_gap(&b) < 1e-9);
    }

    #[test]
    fn disconnected_unbalanced_source_is_infeasible() {
        // A solid shell cuts out an inner pocket.
        let g = Grid::unit(16);
        let shell = Region::difference(
            Region::ball(Ball::new(vec![0.0; 3], 0.3)),
            Region::ball(Ball::new(vec![0.0; 3], 0.15)),
        );
        let m = mask_from_region(&shell, &g);
        let rhs: Vec<f64> = (0..g.cells()).map(|c| if g.cell_center(c)[0] > 0.35 { 1.0 } else { 0.0 }).collect();
        match div_solve(&g, &m, &rhs, 4.0, &SolverOptions::default()) {
            Err(Error::Infeasible { .. }) => {}
            other => panic!("expected infeasibility, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn div_solve_meets_target_and_beats_witness() {
        let g = Grid::unit(16);
        let m = Masks::fluid(&g);
        // Witness: a smooth field vanishing on ∂D.
        let mut w = StaggeredField::zeros(&g);
        for a in 0..3 {
            for f in 0..g.faces(a) {
                let x = g.face_center(a, f);
                let bump: f64 = x.iter().map(|v| (PI * v).cos()).product();
                w.u[a][f] = bump * (a as f64 + 1.0) * (2.0 * x[(a + 1) % 3]).sin();
            }
            let n = g.n;
            for f in 0..g.faces(a) {
                let ijk = g.face_coords(a, f);
                if ijk[a] == 0 || ijk[a] == n {
                    w.u[a][f] = 0.0;
                }
            }
        }
        let rhs = w.divergence();
        let (v, ratio, rep) = div_solve(&g, &m, &rhs, 4.0, &SolverOptions::default()).unwrap();
        assert!(rep.div_residual <= 1e-8);
        let dv = v.divergence();
        let err = dv.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6 * rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        assert!(v.dirichlet_energy() <= w.dirichlet_energy() * (1.0 + 1e-9));
        let lq = (rhs.iter().map(|v| v.abs().powi(4)).sum::<f64>() * g.h.powi(3)).powf(0.25);
        assert!(ratio <= w.h1_norm() / lq * (1.0 + 1e-6));
    }
}
