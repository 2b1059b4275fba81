//! Balls, boxes and uniform-grid spatial indices in arbitrary dimension.

use std::collections::HashMap;
use std::f64::consts::PI;

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Γ(n/2) for a positive integer n, by the half-integer recursion.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n > 0, "gamma_half needs n >= 1");
    let (mut g, mut k) = if n % 2 == 0 { (1.0, 2) } else { (PI.sqrt(), 1) };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// Surface area of the unit sphere in ℝ^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Volume of the d-ball of radius r.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma_half(d + 2) * r.powi(d as i32)
}

/// Closed ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        dist2(&self.center, x) <= self.radius * self.radius
    }

    /// Closed balls intersect.
    pub fn intersects(&self, other: &Ball) -> bool {
        let s = self.radius + other.radius;
        dist2(&self.center, &other.center) <= s * s
    }

    /// `other` ⊆ `self`.
    pub fn contains_ball(&self, other: &Ball) -> bool {
        dist(&self.center, &other.center) + other.radius <= self.radius
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball::new(self.center.clone(), self.radius * factor)
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.dim(), self.radius)
    }

    pub fn bbox(&self) -> Aabb {
        Aabb {
            min: self.center.iter().map(|c| c - self.radius).collect(),
            max: self.center.iter().map(|c| c + self.radius).collect(),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn cube(d: usize, half_width: f64) -> Self {
        Aabb::new(vec![-half_width; d], vec![half_width; d])
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.iter().zip(&self.max).any(|(a, b)| a > b)
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.min.iter().zip(&self.max).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        Aabb {
            min: self.min.iter().zip(&other.min).map(|(a, b)| a.min(*b)).collect(),
            max: self.max.iter().zip(&other.max).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn intersection(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.iter().zip(&other.min).map(|(a, b)| a.max(*b)).collect(),
            max: self.max.iter().zip(&other.max).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    /// Empty box in dimension d (min > max).
    pub fn empty(d: usize) -> Aabb {
        Aabb::new(vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d])
    }
}

fn cell_hash(cell: &[i64]) -> u64 {
    // Collisions only merge buckets; queries always re-check distances.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &c in cell {
        h ^= c as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
    }
    h
}

/// Visit every integer cell in the box `[lo, hi]` (inclusive).
fn for_each_cell(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    let d = lo.len();
    let mut cur = lo.to_vec();
    loop {
        f(&cur);
        let mut axis = 0;
        loop {
            if axis == d {
                return;
            }
            cur[axis] += 1;
            if cur[axis] <= hi[axis] {
                break;
            }
            cur[axis] = lo[axis];
            axis += 1;
        }
    }
}

/// Uniform hash grid over points.
#[derive(Clone, Debug)]
pub struct PointGrid {
    cell: f64,
    dim: usize,
    buckets: HashMap<u64, Vec<usize>>,
    len: usize,
}

impl PointGrid {
    pub fn new<'a, I>(points: I, dim: usize, cell: f64) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut len = 0;
        let mut key = vec![0i64; dim];
        for (i, p) in points.into_iter().enumerate() {
            for (k, x) in key.iter_mut().zip(p) {
                *k = (x / cell).floor() as i64;
            }
            buckets.entry(cell_hash(&key)).or_default().push(i);
            len += 1;
        }
        PointGrid { cell, dim, buckets, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Candidate indices whose point may lie within `radius` of `x`; callers
    /// must filter by exact distance. Falls back to all indices when the
    /// query spans more cells than there are points.
    pub fn candidates(&self, x: &[f64], radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.len == 0 {
            return;
        }
        let lo: Vec<i64> = x.iter().map(|c| ((c - radius) / self.cell).floor() as i64).collect();
        let hi: Vec<i64> = x.iter().map(|c| ((c + radius) / self.cell).floor() as i64).collect();
        let ncells = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a + 1) as f64)
            .product::<f64>();
        if ncells > self.len as f64 {
            out.extend(0..self.len);
            return;
        }
        let mut seen_bucket: Vec<u64> = Vec::new();
        for_each_cell(&lo, &hi, |cell| {
            let h = cell_hash(cell);
            if seen_bucket.contains(&h) {
                return;
            }
            seen_bucket.push(h);
            if let Some(b) = self.buckets.get(&h) {
                out.extend_from_slice(b);
            }
        });
        debug_assert!(self.dim == x.len());
    }

    /// Walk candidate indices near `x`, stopping when `f` returns `true`.
    pub fn any(&self, x: &[f64], radius: f64, mut f: impl FnMut(usize) -> bool) -> bool {
        if self.len == 0 {
            return false;
        }
        let d = x.len();
        let mut lo = [0i64; 8];
        let mut hi = [0i64; 8];
        if d > 8 {
            let mut v = Vec::new();
            self.candidates(x, radius, &mut v);
            return v.into_iter().any(f);
        }
        let mut ncells = 1.0;
        for k in 0..d {
            lo[k] = ((x[k] - radius) / self.cell).floor() as i64;
            hi[k] = ((x[k] + radius) / self.cell).floor() as i64;
            ncells *= (hi[k] - lo[k] + 1) as f64;
        }
        if ncells > self.len as f64 {
            return (0..self.len).any(f);
        }
        if ncells == 1.0 {
            return self
                .buckets
                .get(&cell_hash(&lo[..d]))
                .is_some_and(|b| b.iter().any(|&i| f(i)));
        }
        let mut seen: Vec<u64> = Vec::new();
        let mut stop = false;
        for_each_cell(&lo[..d], &hi[..d], |cell| {
            if stop {
                return;
            }
            let h = cell_hash(cell);
            if seen.contains(&h) {
                return;
            }
            seen.push(h);
            if let Some(b) = self.buckets.get(&h) {
                stop = b.iter().any(|&i| f(i));
            }
        });
        stop
    }
}

/// Multi-level hash grid over balls of widely varying radii. Balls are
/// bucketed by radius into dyadic levels, each with its own grid, so one
/// huge ball does not force a coarse grid on everything else.
#[derive(Clone, Debug)]
pub struct BallIndex {
    levels: Vec<(f64, PointGrid, Vec<usize>)>,
    count: usize,
}

impl BallIndex {
    pub fn new(balls: &[Ball]) -> Self {
        Self::from_iter(balls.iter().map(|b| (&b.center[..], b.radius)), balls.first().map_or(0, |b| b.dim()))
    }

    /// Build from `(center, radius)` pairs; indices refer to iteration order.
    pub fn from_iter<'a, I>(items: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut by_level: std::collections::BTreeMap<i32, Vec<(usize, &'a [f64], f64)>> =
            Default::default();
        let mut count = 0;
        for (i, (c, r)) in items.into_iter().enumerate() {
            let lvl = if r > 0.0 { r.log2().ceil() as i32 } else { i32::MIN };
            by_level.entry(lvl).or_default().push((i, c, r));
            count += 1;
        }
        let levels = by_level
            .into_values()
            .map(|items| {
                let rmax = items.iter().map(|t| t.2).fold(0.0, f64::max);
                let cell = if rmax > 0.0 { 2.0 * rmax } else { 1.0 };
                let grid = PointGrid::new(items.iter().map(|t| t.1), dim, cell);
                let ids = items.iter().map(|t| t.0).collect();
                (rmax, grid, ids)
            })
            .collect();
        BallIndex { levels, count }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Candidate indices of balls that may come within `reach` of `x`
    /// (i.e. |x − c| ≤ reach + r); callers filter exactly. Sorted, unique.
    pub fn candidates(&self, x: &[f64], reach: f64, out: &mut Vec<usize>) {
        out.clear();
        let mut tmp = Vec::new();
        for (rmax, grid, ids) in &self.levels {
            grid.candidates(x, reach + rmax, &mut tmp);
            out.extend(tmp.iter().map(|&k| ids[k]));
        }
        out.sort_unstable();
    }

    /// Visit candidate indices as in [`BallIndex::candidates`] without
    /// allocating a result list; stops early when `f` returns `true`.
    /// Returns whether `f` stopped the walk.
    pub fn any(&self, x: &[f64], reach: f64, mut f: impl FnMut(usize) -> bool) -> bool {
        for (rmax, grid, ids) in &self.levels {
            if grid.any(x, reach + rmax, |k| f(ids[k])) {
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_constants() {
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(ball_volume(3, 1.0), 4.0 * PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(ball_volume(2, 2.0), 4.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(gamma_half(7), 15.0 / 8.0 * PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn closed_ball_predicates() {
        let a = Ball::new(vec![0.0, 0.0, 0.0], 1.0);
        let b = Ball::new(vec![2.0, 0.0, 0.0], 1.0);
        assert!(a.intersects(&b));
        assert!(a.contains(&[1.0, 0.0, 0.0]));
        assert!(a.contains_ball(&Ball::new(vec![0.5, 0.0, 0.0], 0.5)));
        assert!(!a.contains_ball(&Ball::new(vec![0.5, 0.0, 0.0], 0.6)));
    }

    #[test]
    fn ball_index_finds_all_neighbors() {
        let balls: Vec<Ball> = (0..200)
            .map(|i| {
                let t = i as f64;
                Ball::new(vec![(t * 0.37).sin(), (t * 0.91).cos(), (t * 0.13).sin()], 0.001 * (1.0 + (i % 17) as f64).powi(2))
            })
            .collect();
        let idx = BallIndex::new(&balls);
        let mut out = Vec::new();
        for q in &balls {
            idx.candidates(&q.center, q.radius, &mut out);
            for (j, b) in balls.iter().enumerate() {
                if q.intersects(b) {
                    assert!(out.binary_search(&j).is_ok());
                }
            }
        }
    }
}
