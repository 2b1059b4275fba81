//! Harmonic capacity: closed form for balls, the subadditive upper bound for
//! unions of balls, and a finite-difference capacitary-potential oracle.
//!
//! Convention: `Cap(K) = inf { ∫|∇u|² : u ≥ 1 on K, u → 0 at ∞ }`, so
//! `Cap(B_r) = (d−2) σ_{d−1} r^{d−2}` (4πr in three dimensions).

use crate::covering::Covering;
use crate::error::{Error, Result};
use crate::geometry::{unit_sphere_area, Ball};
use crate::linalg::{cg, Multigrid, StencilOp};
use crate::region::Region;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    ExactBall,
    SubadditiveUpper,
    GridNumeric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityBound {
    pub value: f64,
    pub kind: BoundKind,
    pub components: usize,
}

pub fn ball_capacity(radius: f64, d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    if !(radius >= 0.0) {
        return Err(Error::Config(format!("radius must be non-negative, got {radius}")));
    }
    Ok((d as f64 - 2.0) * unit_sphere_area(d) * radius.powi(d as i32 - 2))
}

/// Sum of single-ball capacities. Capacity is subadditive, so this bounds
/// the capacity of the union from above.
pub fn subadditive_cap_upper(balls: &[Ball], d: usize) -> Result<CapacityBound> {
    let mut value = 0.0;
    for b in balls {
        value += ball_capacity(b.radius, d)?;
    }
    Ok(CapacityBound { value, kind: BoundKind::SubadditiveUpper, components: balls.len() })
}

/// Upper bound on `Cap(E^ε ∖ H^ε)` from a covering.
///
/// `E^ε ∖ H^ε` lies in the union of covering balls with dilation `λ_j > 1`:
/// a covering ball with `λ_j = 1` is its own hole and lies inside `H^ε`.
pub fn covering_cap_upper(c: &Covering) -> Result<CapacityBound> {
    let balls: Vec<Ball> = c.members.iter().filter(|&&j| c.lambda[j] > 1.0).map(|&j| c.ball(j)).collect();
    subadditive_cap_upper(&balls, c.d)
}

/// Result of a grid capacity solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCapacity {
    /// Dirichlet energy of the discrete potential that vanishes on the box.
    pub energy: f64,
    /// Energy corrected for the finite box (see [`grid_capacity`]).
    pub corrected: f64,
    /// Regular part of the box Green's function at the origin, times 4π.
    pub box_coefficient: f64,
    pub iterations: usize,
    pub residual: f64,
}

struct NodeGrid {
    n: usize,
    half_width: f64,
}

impl NodeGrid {
    fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Coordinates of interior node `(i, j, k)`, `0 ≤ i < n−1`.
    fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.h();
        let c = |t: usize| -self.half_width + (t + 1) as f64 * h;
        [c(i), c(j), c(k)]
    }
}

/// Discrete capacitary potential on `[−L, L]³` with `resolution` cells per
/// axis: `u = 1` on grid nodes inside `region`, `u = 0` on the box boundary,
/// 7-point harmonic elsewhere. Returns the discrete Dirichlet energy.
///
/// The potential of a compact set `K` in a box has energy
/// `C_box = C / (1 − C·H(0)/4π)` to leading order, where `H` is the regular
/// part of the box Green's function. `H(0)` is obtained from a second solve
/// with boundary data `1/|x|`, which gives the corrected value
/// `C = C_box / (1 + C_box·H(0)/4π)`. The correction assumes `K` is small
/// and centred near the origin.
pub fn grid_capacity(region: &Region, resolution: usize, half_width: f64) -> Result<GridCapacity> {
    if region.dim() != 3 {
        return Err(Error::UnsupportedDimension(region.dim()));
    }
    if resolution < 32 {
        return Err(Error::Config(format!("grid capacity needs at least 32 cells per axis, got {resolution}")));
    }
    let grid = NodeGrid { n: resolution, half_width };
    let bb = region.bbox();
    if !bb.is_empty() && (0..3).any(|a| bb.min[a] <= -half_width || bb.max[a] >= half_width) {
        return Err(Error::Config("region must lie strictly inside the box".into()));
    }
    let m = resolution - 1;
    let h = grid.h();
    // Interior nodes inside the region are pinned to 1.
    let mut pinned = vec![false; m * m * m];
    if !region.is_empty() {
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    if region.contains(&grid.coord(i, j, k)) {
                        pinned[i + m * (j + m * k)] = true;
                    }
                }
            }
        }
    }
    if !pinned.iter().any(|&p| p) {
        let h0 = box_coefficient(&grid)?;
        return Ok(GridCapacity { energy: 0.0, corrected: 0.0, box_coefficient: h0, iterations: 0, residual: 0.0 });
    }
    let op = laplacian(m, &pinned, h);
    // Right-hand side from links into pinned nodes.
    let mut b = vec![0.0; op.len()];
    let inv_h2 = 1.0 / (h * h);
    let strides = op.strides();
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let idx = op.index(i, j, k);
                if pinned[idx] {
                    continue;
                }
                let pos = [i, j, k];
                for a in 0..3 {
                    if pos[a] + 1 < m && pinned[idx + strides[a]] {
                        b[idx] += inv_h2;
                    }
                    if pos[a] > 0 && pinned[idx - strides[a]] {
                        b[idx] += inv_h2;
                    }
                }
            }
        }
    }
    let mg = Multigrid::new(op.clone());
    let mut u = vec![0.0; op.len()];
    let stats = cg(|x, y| op.apply(x, y), |r, z| mg.apply(r, z), &b, &mut u, 1e-8, 2000)?;
    for (v, &p) in u.iter_mut().zip(&pinned) {
        if p {
            *v = 1.0;
        }
    }
    let energy = dirichlet_energy(m, &u, h);
    let h0 = box_coefficient(&grid)?;
    let corrected = energy / (1.0 + energy * h0 / (4.0 * std::f64::consts::PI));
    Ok(GridCapacity { energy, corrected, box_coefficient: h0, iterations: stats.iterations, residual: stats.residual })
}

fn laplacian(m: usize, pinned: &[bool], h: f64) -> StencilOp {
    let mut op = StencilOp::zeros([m, m, m]);
    op.free = pinned.iter().map(|&p| !p).collect();
    let w = 1.0 / (h * h);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let idx = op.index(i, j, k);
                let pos = [i, j, k];
                for a in 0..3 {
                    if pos[a] + 1 < m {
                        op.add_link(idx, a, w);
                    } else if op.free[idx] {
                        op.diag[idx] += w;
                    }
                    if pos[a] == 0 && op.free[idx] {
                        op.diag[idx] += w;
                    }
                }
            }
        }
    }
    op
}

/// `Σ_links (u_a − u_b)² h^{d−2}` including links to the zero boundary.
fn dirichlet_energy(m: usize, u: &[f64], h: f64) -> f64 {
    let at = |i: isize, j: isize, k: isize| -> f64 {
        let r = 0..m as isize;
        if r.contains(&i) && r.contains(&j) && r.contains(&k) {
            u[i as usize + m * (j as usize + m * k as usize)]
        } else {
            0.0
        }
    };
    let mut e = 0.0;
    let mi = m as isize;
    for k in -1..mi {
        for j in -1..mi {
            for i in -1..mi {
                let c = at(i, j, k);
                for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                    let (a, b, cc) = (i + di, j + dj, k + dk);
                    // Skip links that run along the boundary itself.
                    if [i, j, k].iter().chain([a, b, cc].iter()).any(|&t| t > mi) {
                        continue;
                    }
                    let diff = at(a, b, cc) - c;
                    e += diff * diff;
                }
            }
        }
    }
    e * h
}

/// `4π H(0)` where `H` is harmonic in the box with `H = 1/(4π|x|)` on its
/// boundary, computed on the same grid.
fn box_coefficient(grid: &NodeGrid) -> Result<f64> {
    let m = grid.n - 1;
    let h = grid.h();
    let pinned = vec![false; m * m * m];
    let op = laplacian(m, &pinned, h);
    let mut b = vec![0.0; op.len()];
    let inv_h2 = 1.0 / (h * h);
    let l = grid.half_width;
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let idx = op.index(i, j, k);
                let x = grid.coord(i, j, k);
                let pos = [i, j, k];
                for a in 0..3 {
                    for (edge, sign) in [(0usize, -1.0), (m - 1, 1.0)] {
                        if pos[a] == edge {
                            let mut y = x;
                            y[a] = sign * l;
                            let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                            b[idx] += inv_h2 / r;
                        }
                    }
                }
            }
        }
    }
    let mg = Multigrid::new(op.clone());
    let mut u = vec![0.0; op.len()];
    cg(|x, y| op.apply(x, y), |r, z| mg.apply(r, z), &b, &mut u, 1e-10, 2000)?;
    let c = m / 2;
    if m % 2 == 1 {
        Ok(u[op.index(c, c, c)])
    } else {
        // Even node count: average the 8 nodes around the centre.
        let mut s = 0.0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    s += u[op.index(c - 1 + di, c - 1 + dj, c - 1 + dk)];
                }
            }
        }
        Ok(s / 8.0)
    }
}
