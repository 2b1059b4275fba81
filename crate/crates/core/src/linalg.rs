//! Matrix-free linear algebra on structured 3-D grids.
//!
//! [`StencilOp`] is a symmetric 7-point operator on an `nx × ny × nz` lattice
//! written as a weighted graph Laplacian plus a diagonal shift, with some
//! nodes pinned (Dirichlet). Solution vectors span the whole lattice and keep
//! zeros at pinned nodes. [`Multigrid`] builds a Galerkin hierarchy by 2×2×2
//! aggregation, which keeps every coarse level in the same 7-point form, and
//! is used as a symmetric preconditioner for [`cg`] and [`minres`].

use crate::error::{Error, Result};
use crate::exec;

/// Symmetric 7-point operator `(A x)_i = diag_i x_i − Σ_j w_ij x_j` over
/// free nodes. `w[a][i]` is the weight of the link from `i` to `i + e_a`; it
/// is zero when either end is pinned or the neighbour is outside the grid.
#[derive(Clone, Debug)]
pub struct StencilOp {
    pub dims: [usize; 3],
    pub free: Vec<bool>,
    pub w: [Vec<f64>; 3],
    pub diag: Vec<f64>,
}

impl StencilOp {
    /// All nodes free, no links, zero diagonal.
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        StencilOp {
            dims,
            free: vec![true; n],
            w: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            diag: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.dims[0], self.dims[0] * self.dims[1]]
    }

    /// Add a link of weight `w` between `idx` and `idx + e_axis`, updating
    /// both diagonals. Links touching a pinned node only add to the free end.
    pub fn add_link(&mut self, idx: usize, axis: usize, w: f64) {
        let other = idx + self.strides()[axis];
        match (self.free[idx], self.free[other]) {
            (true, true) => {
                self.w[axis][idx] += w;
                self.diag[idx] += w;
                self.diag[other] += w;
            }
            (true, false) => self.diag[idx] += w,
            (false, true) => self.diag[other] += w,
            (false, false) => {}
        }
    }

    /// `y = A x` on free nodes; pinned entries of `y` are set to zero.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        let plane = nx * ny;
        exec::for_each_chunk_mut(y, plane, |k, yk| {
            let base = k * plane;
            for (off, out) in yk.iter_mut().enumerate() {
                let idx = base + off;
                *out = if self.free[idx] { self.row(idx, x) } else { 0.0 };
            }
        });
    }

    #[inline]
    fn row(&self, idx: usize, x: &[f64]) -> f64 {
        let s = self.strides();
        let mut acc = self.diag[idx] * x[idx];
        for a in 0..3 {
            let wp = self.w[a][idx];
            if wp != 0.0 {
                acc -= wp * x[idx + s[a]];
            }
            if idx >= s[a] {
                let wm = self.w[a][idx - s[a]];
                if wm != 0.0 {
                    acc -= wm * x[idx - s[a]];
                }
            }
        }
        acc
    }

    /// One damped Jacobi sweep `x ← x + ω D⁻¹ (b − A x)`.
    fn jacobi(&self, b: &[f64], x: &mut Vec<f64>, tmp: &mut Vec<f64>, omega: f64) {
        let plane = self.dims[0] * self.dims[1];
        let xs: &[f64] = x;
        exec::for_each_chunk_mut(tmp, plane, |k, tk| {
            let base = k * plane;
            for (off, out) in tk.iter_mut().enumerate() {
                let idx = base + off;
                *out = if self.free[idx] && self.diag[idx] > 0.0 {
                    xs[idx] + omega * (b[idx] - self.row(idx, xs)) / self.diag[idx]
                } else {
                    0.0
                };
            }
        });
        std::mem::swap(x, tmp);
    }

    /// Galerkin coarse operator for piecewise-constant 2×2×2 aggregation.
    fn coarsen(&self) -> StencilOp {
        let [nx, ny, nz] = self.dims;
        let cd = [nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2)];
        let mut c = StencilOp::zeros(cd);
        c.free.iter_mut().for_each(|f| *f = false);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = self.index(i, j, k);
                    if !self.free[idx] {
                        continue;
                    }
                    let ci = c.index(i / 2, j / 2, k / 2);
                    c.free[ci] = true;
                    c.diag[ci] += self.diag[idx];
                    let pos = [i, j, k];
                    for a in 0..3 {
                        let wl = self.w[a][idx];
                        if wl == 0.0 {
                            continue;
                        }
                        if pos[a] % 2 == 0 {
                            // Both ends in the same aggregate: cancels.
                            c.diag[ci] -= 2.0 * wl;
                        } else {
                            c.w[a][ci] += wl;
                        }
                    }
                }
            }
        }
        c
    }

    fn restrict(&self, coarse: &StencilOp, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                let row = self.index(0, j, k);
                let crow = coarse.index(0, j / 2, k / 2);
                for i in 0..nx {
                    out[crow + i / 2] += r[row + i];
                }
            }
        }
    }

    fn prolong_add(&self, coarse: &StencilOp, xc: &[f64], scale: f64, x: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        let plane = nx * ny;
        exec::for_each_chunk_mut(x, plane, |k, xk| {
            for j in 0..ny {
                let crow = coarse.index(0, j / 2, k / 2);
                for i in 0..nx {
                    let off = i + nx * j;
                    if self.free[k * plane + off] {
                        xk[off] += scale * xc[crow + i / 2];
                    }
                }
            }
        });
    }
}

/// Aggregation multigrid W-cycle used as a symmetric positive definite
/// preconditioner.
pub struct Multigrid {
    levels: Vec<StencilOp>,
    pub sweeps: usize,
    pub omega: f64,
    pub coarse_sweeps: usize,
}

impl Multigrid {
    pub fn new(fine: StencilOp) -> Self {
        let mut levels = vec![fine];
        loop {
            let last = levels.last().unwrap();
            if last.dims.iter().all(|&d| d <= 4) || last.len() < 64 {
                break;
            }
            let c = last.coarsen();
            levels.push(c);
        }
        Multigrid { levels, sweeps: 2, omega: 0.7, coarse_sweeps: 60 }
    }

    pub fn fine(&self) -> &StencilOp {
        &self.levels[0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `x ≈ A⁻¹ b`, overwriting `x`.
    pub fn apply(&self, b: &[f64], x: &mut Vec<f64>) {
        x.clear();
        x.resize(b.len(), 0.0);
        self.cycle(0, b, x);
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut Vec<f64>) {
        let op = &self.levels[l];
        let mut tmp = vec![0.0; op.len()];
        if l + 1 == self.levels.len() {
            for _ in 0..self.coarse_sweeps {
                op.jacobi(b, x, &mut tmp, self.omega);
            }
            return;
        }
        for _ in 0..self.sweeps {
            op.jacobi(b, x, &mut tmp, self.omega);
        }
        let coarse = &self.levels[l + 1];
        let mut r = vec![0.0; op.len()];
        op.apply(x, &mut r);
        for i in 0..r.len() {
            r[i] = if op.free[i] { b[i] - r[i] } else { 0.0 };
        }
        let mut rc = vec![0.0; coarse.len()];
        op.restrict(coarse, &r, &mut rc);
        let mut xc = vec![0.0; coarse.len()];
        self.cycle(l + 1, &rc, &mut xc);
        // Second visit (W-cycle) on the updated coarse residual.
        let mut ac = vec![0.0; coarse.len()];
        coarse.apply(&xc, &mut ac);
        for i in 0..rc.len() {
            rc[i] -= ac[i];
        }
        let mut dc = vec![0.0; coarse.len()];
        self.cycle(l + 1, &rc, &mut dc);
        for i in 0..xc.len() {
            xc[i] += dc[i];
        }
        op.prolong_add(coarse, &xc, 1.0, x);
        for _ in 0..self.sweeps {
            op.jacobi(b, x, &mut tmp, self.omega);
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final residual relative to the right-hand side norm.
    pub residual: f64,
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    exec::for_each_chunk_mut(y, 1 << 14, |c, yc| {
        let base = c << 14;
        for (o, v) in yc.iter_mut().enumerate() {
            *v += a * x[base + o];
        }
    });
}

/// Preconditioned conjugate gradients for SPD `A`.
pub fn cg<A, M>(apply: A, precond: M, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats>
where
    A: Fn(&[f64], &mut [f64]),
    M: Fn(&[f64], &mut Vec<f64>),
{
    let n = b.len();
    let bnorm = exec::dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = Vec::new();
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = exec::dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut res = exec::dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        apply(&p, &mut q);
        let pq = exec::dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Numeric(format!("CG breakdown: p·Ap = {pq:e}")));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        axpy(-alpha, &q, &mut r);
        res = exec::dot(&r, &r).sqrt() / bnorm;
        precond(&r, &mut z);
        let rz_new = exec::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        Ok(SolveStats { iterations: max_iter, residual: res })
    } else {
        Err(Error::NoConvergence { iterations: max_iter, residual: res })
    }
}

/// Preconditioned MINRES for symmetric (possibly indefinite) `A` with an SPD
/// preconditioner. Stops when the preconditioned residual estimate drops below
/// `tol` relative to its initial value; the returned residual is the true
/// Euclidean residual relative to `‖b‖`.
pub fn minres<A, M>(apply: A, precond: M, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats>
where
    A: Fn(&[f64], &mut [f64]),
    M: Fn(&[f64], &mut Vec<f64>),
{
    let n = b.len();
    let bnorm = exec::dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r1 = vec![0.0; n];
    apply(x, &mut r1);
    for i in 0..n {
        r1[i] = b[i] - r1[i];
    }
    let mut y = Vec::new();
    precond(&r1, &mut y);
    let mut beta1 = exec::dot(&r1, &y);
    if beta1 < 0.0 {
        return Err(Error::Numeric("MINRES: preconditioner is not positive definite".into()));
    }
    beta1 = beta1.sqrt();
    if beta1 == 0.0 {
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r2 = r1.clone();
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0f64, beta1);
    let (mut dbar, mut epsln) = (0.0f64, 0.0f64);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply(&v, &mut y);
        if iterations >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                y[i] -= c * r1[i];
            }
        }
        let alfa = exec::dot(&v, &y);
        let c = alfa / beta;
        for i in 0..n {
            y[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond(&r2, &mut y);
        oldb = beta;
        let bb = exec::dot(&r2, &y);
        if bb < 0.0 {
            return Err(Error::Numeric("MINRES: preconditioner is not positive definite".into()));
        }
        beta = bb.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar.abs() <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    let rn = (0..n).map(|i| (b[i] - r[i]).powi(2)).sum::<f64>().sqrt() / bnorm;
    if phibar.abs() <= tol * beta1 || beta == 0.0 {
        Ok(SolveStats { iterations, residual: rn })
    } else {
        Err(Error::NoConvergence { iterations, residual: rn })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dirichlet Laplacian on an `n³` interior lattice, spacing 1.
    fn laplacian(n: usize) -> StencilOp {
        let mut op = StencilOp::zeros([n, n, n]);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let idx = op.index(i, j, k);
                    let pos = [i, j, k];
                    for a in 0..3 {
                        if pos[a] + 1 < n {
                            op.add_link(idx, a, 1.0);
                        } else {
                            op.diag[idx] += 1.0;
                        }
                        if pos[a] == 0 {
                            op.diag[idx] += 1.0;
                        }
                    }
                }
            }
        }
        op
    }

    #[test]
    fn coarse_operator_is_galerkin_product() {
        let op = laplacian(6);
        let c = op.coarsen();
        // Compare A_c e_I with Pᵀ A P e_I for a few coarse nodes.
        for &ci in &[0usize, 5, 13, 26] {
            let mut ec = vec![0.0; c.len()];
            ec[ci] = 1.0;
            let mut pe = vec![0.0; op.len()];
            op.prolong_add(&c, &ec, 1.0, &mut pe);
            let mut ape = vec![0.0; op.len()];
            op.apply(&pe, &mut ape);
            let mut galerkin = vec![0.0; c.len()];
            op.restrict(&c, &ape, &mut galerkin);
            let mut direct = vec![0.0; c.len()];
            c.apply(&ec, &mut direct);
            for (g, d) in galerkin.iter().zip(&direct) {
                assert!((g - d).abs() < 1e-12, "{g} vs {d}");
            }
        }
    }

    #[test]
    fn multigrid_cg_solves_poisson_quickly() {
        let n = 31;
        let op = laplacian(n);
        let b: Vec<f64> = (0..op.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mg = Multigrid::new(op.clone());
        let mut x = vec![0.0; op.len()];
        let stats = cg(|v, y| op.apply(v, y), |r, z| mg.apply(r, z), &b, &mut x, 1e-10, 200).unwrap();
        assert!(stats.iterations < 40, "{stats:?}");
        let mut ax = vec![0.0; op.len()];
        op.apply(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-8 * exec::dot(&b, &b).sqrt());
    }

    #[test]
    fn minres_solves_indefinite_diagonal_system() {
        let d: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 + i as f64 } else { -2.0 - i as f64 }).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 50];
        let stats = minres(
            |v, y| {
                for i in 0..50 {
                    y[i] = d[i] * v[i];
                }
            },
            |r, z| {
                z.clear();
                z.extend_from_slice(r);
            },
            &b,
            &mut x,
            1e-12,
            200,
        )
        .unwrap();
        assert!(stats.residual < 1e-10, "{stats:?}");
        for i in 0..50 {
            assert!((x[i] - b[i] / d[i]).abs() < 1e-9);
        }
    }
}
