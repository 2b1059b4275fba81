//! Extension of a mean-zero source from `D_r ∖ E^ε` to the covering cells
//! by piecewise constants, chosen so that every annulus/ball pair of the
//! covering satisfies the flux balance needed by the local divergence
//! solves.
//!
//! For `j` of class `k` the constant `g_j` on `Ẽ_j = E^{z_j} ∖ E_{k+1}` solves
//!
//! ```text
//! ∫_{A_j ∩ E_{k+1}} ḡ = ∫_{B_j ∖ E_{k+1}} ḡ,
//! ```
//!
//! where `ḡ` on the right includes `g_j |Ẽ_j|` and the already known
//! constants of lower classes. Classes are processed from −3 upwards.
//!
//! All integrals over one cluster (a connected component of the θ²-dilated
//! covering balls) share a single weighted point cloud: each ball receives
//! the same number of uniform samples and a point carries the weight
//! `1 / Σ_q N/|θ²B_q|` over the balls containing it. Every region integral is
//! then a sub-sum of the same cloud, so the balance above and the
//! level-to-level telescoping of `∫_{E_k} ḡ` hold exactly, not only in
//! expectation.

use std::sync::Arc;

use rand::Rng;

use crate::chain::{CheckRow, Chain};
use crate::covering::{Covering, CoveringParams, HoleRole, CLASS_MIN};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{Ball, BallIndex};
use crate::point_process::DomainSpec;
use crate::region::{block_rng, sample_in_ball, Region, MC_BLOCK};
use crate::rng::{mix, stream};

pub type SourceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Source `g` on `D_r ∖ E^ε`, where `D_r` is the part of the domain at
/// distance more than `shell` from its boundary.
#[derive(Clone)]
pub struct SourceField {
    f: SourceFn,
    offset: f64,
    pub domain: DomainSpec,
    pub d: usize,
    pub shell: f64,
    pub q: f64,
    /// Monte Carlo estimate of `∫_{D_r∖E^ε} g` and its standard error.
    pub mean: f64,
    pub mean_stderr: f64,
    /// Uncertainty of `∫ g` due to the estimated recentering offset alone.
    pub offset_stderr: f64,
}

impl std::fmt::Debug for SourceField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceField")
            .field("offset", &self.offset)
            .field("shell", &self.shell)
            .field("q", &self.q)
            .field("mean", &self.mean)
            .field("mean_stderr", &self.mean_stderr)
            .finish()
    }
}

impl SourceField {
    /// Wrap `f` as is; the mean certificate is left at zero.
    pub fn new(domain: DomainSpec, d: usize, shell: f64, q: f64, f: SourceFn) -> Result<Self> {
        if !(q > d as f64) {
            return Err(Error::Config(format!("integrability exponent q = {q} must exceed d = {d}")));
        }
        if !(shell >= 0.0) {
            return Err(Error::Config(format!("shell width must be non-negative, got {shell}")));
        }
        Ok(SourceField { f, offset: 0.0, domain, d, shell, q, mean: 0.0, mean_stderr: 0.0, offset_stderr: 0.0 })
    }

    pub fn zero(domain: DomainSpec, d: usize, shell: f64, q: f64) -> Result<Self> {
        Self::new(domain, d, shell, q, Arc::new(|_| 0.0))
    }

    /// `f − c` with `c` the mean of `f` over `D_r ∖ E^ε`, estimated from
    /// `4 * samples` points; the mean-zero certificate is then measured on an
    /// independent cloud of `samples` points and its stderr includes the
    /// uncertainty of `c`.
    pub fn recentered(
        domain: DomainSpec,
        d: usize,
        shell: f64,
        q: f64,
        f: SourceFn,
        e_eps: &Region,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut s = Self::new(domain, d, shell, q, f)?;
        let (sum, hits) = s.domain_moments(e_eps, 4 * samples, mix(seed, 1), |v| v);
        if hits.0 == 0 {
            return Err(Error::Numeric("D_r ∖ E^ε received no samples".into()));
        }
        let m = hits.0 as f64;
        s.offset = sum.0 / m;
        let var = (sum.1 / m - s.offset * s.offset).max(0.0);
        let support = s.domain.volume(d) * m / hits.1 as f64;
        s.offset_stderr = support * (var / m).sqrt();
        s.certify(e_eps, samples, mix(seed, 2));
        Ok(s)
    }

    /// Recompute the mean certificate on a fresh cloud.
    pub fn certify(&mut self, e_eps: &Region, samples: usize, seed: u64) {
        let (sum, _) = self.domain_moments(e_eps, samples, seed, |v| v);
        let vol = self.domain.volume(self.d);
        let n = samples as f64;
        let mean = sum.0 / n;
        let var = (sum.1 / n - mean * mean).max(0.0);
        self.mean = vol * mean;
        self.mean_stderr = (vol * vol * var / n + self.offset_stderr.powi(2)).sqrt();
    }

    /// Sums of `h(g)` and `h(g)²` over support points of a uniform cloud in
    /// D, and the count of support points.
    fn domain_moments(
        &self,
        e_eps: &Region,
        samples: usize,
        seed: u64,
        h: impl Fn(f64) -> f64 + Sync + Send,
    ) -> ((f64, f64), (usize, usize)) {
        let blocks = samples.div_ceil(MC_BLOCK);
        let parts = exec::map_indices(blocks, |b| {
            let mut rng = block_rng(seed, b);
            let n = MC_BLOCK.min(samples - b * MC_BLOCK);
            let (mut s1, mut s2, mut hits) = (0.0, 0.0, 0usize);
            for _ in 0..n {
                let x = self.domain.sample(self.d, &mut rng);
                if self.in_support(&x, e_eps) {
                    let v = h(self.value(&x));
                    s1 += v;
                    s2 += v * v;
                    hits += 1;
                }
            }
            (s1, s2, hits)
        });
        let mut acc = (0.0, 0.0, 0usize);
        for (a, b, c) in parts {
            acc.0 += a;
            acc.1 += b;
            acc.2 += c;
        }
        ((acc.0, acc.1), (acc.2, samples))
    }

    /// Raw value `g(x)`, meaningful on `D_r ∖ E^ε`.
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x) - self.offset
    }

    pub fn in_support(&self, x: &[f64], e_eps: &Region) -> bool {
        self.domain.boundary_distance(x) > self.shell && !e_eps.contains(x)
    }

    /// `g` extended by zero outside `D_r ∖ E^ε`.
    pub fn extended(&self, x: &[f64], e_eps: &Region) -> f64 {
        if self.in_support(x, e_eps) {
            self.value(x)
        } else {
            0.0
        }
    }

    pub fn scaled(&self, s: f64) -> SourceField {
        let f = self.f.clone();
        let mut out = self.clone();
        out.f = Arc::new(move |x| s * f(x));
        out.offset = s * self.offset;
        out.mean = s * self.mean;
        out.mean_stderr = s.abs() * self.mean_stderr;
        out.offset_stderr = s.abs() * self.offset_stderr;
        out
    }

    /// Pointwise sum; offsets add, so constants are linear in the source.
    pub fn sum(a: &SourceField, b: &SourceField) -> SourceField {
        let (fa, fb) = (a.f.clone(), b.f.clone());
        let mut out = a.clone();
        out.f = Arc::new(move |x| fa(x) + fb(x));
        out.offset = a.offset + b.offset;
        out.mean = a.mean + b.mean;
        out.mean_stderr = (a.mean_stderr.powi(2) + b.mean_stderr.powi(2)).sqrt();
        out.offset_stderr = a.offset_stderr + b.offset_stderr;
        out
    }
}

/// Random smooth source: a sum of three plane waves with random amplitudes,
/// wave vectors (|k| ≤ 2π) and phases.
pub fn smooth_source(d: usize, seed: u64) -> SourceFn {
    let mut rng = stream(seed, 0x534f);
    let terms: Vec<(f64, Vec<f64>, f64)> = (0..3)
        .map(|_| {
            let a = rng.random_range(-1.0..1.0);
            let k: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * std::f64::consts::PI * 2.0 / (d as f64).sqrt()).collect();
            let ph = rng.random_range(0.0..std::f64::consts::TAU);
            (a, k, ph)
        })
        .collect();
    Arc::new(move |x: &[f64]| {
        terms
            .iter()
            .map(|(a, k, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).sin())
            .sum()
    })
}

/// Per-cluster statistics gathered while computing the constants.
#[derive(Clone, Debug, Default)]
struct ClusterOutcome {
    /// (position, constant, |Ẽ_j|, stderr, |Ẽ_j||g_j|, bound)
    cells: Vec<(usize, f64, f64, f64, f64, f64)>,
    /// ∫_{E_k} ḡ for k = −3 ..= k_max+1.
    level_integrals: Vec<f64>,
    level_abs: Vec<f64>,
    overlap_max: usize,
    order_violations: usize,
    samples: usize,
}

/// `ḡ`: the source outside `E^ε`, constants `g_j` on the cells `Ẽ_j`, zero
/// elsewhere.
#[derive(Debug)]
pub struct ExtensionField<'a> {
    pub chain: &'a Chain,
    pub source: &'a SourceField,
    /// By chain position.
    pub constants: Vec<f64>,
    pub cell_volume: Vec<f64>,
    pub cell_stderr: Vec<f64>,
    /// `|Ẽ_j| |g_j|` and the bound `(2k_max+3)^{k+3} ‖g‖_{L¹(θ²B_j ∖ E)}`.
    pub bound_lhs: Vec<f64>,
    pub bound_rhs: Vec<f64>,
    pub level_integrals: Vec<f64>,
    level_abs: Vec<f64>,
    pub overlap_max: usize,
    pub order_violations: usize,
    pub cluster_samples: usize,
    pub seed: u64,
}

impl ExtensionField<'_> {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        evaluate_extension(self, x)
    }

    /// `j, class_k, g_j, cell_volume, cell_stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,class_k,g_j,cell_volume,cell_stderr\n");
        for p in 0..self.constants.len() {
            s.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e}\n",
                self.chain.members[p], self.chain.class[p], self.constants[p], self.cell_volume[p], self.cell_stderr[p]
            ));
        }
        s
    }
}

/// Connected components of the θ²-dilated covering balls, each sorted.
fn clusters(balls: &[Ball]) -> Vec<Vec<usize>> {
    let n = balls.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let index = BallIndex::new(balls);
    let mut near = Vec::new();
    for i in 0..n {
        index.candidates(&balls[i].center, balls[i].radius, &mut near);
        for &j in &near {
            if j != i && balls[i].intersects(&balls[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

struct Cloud {
    points: Vec<f64>,
    weight: Vec<f64>,
    owner: Vec<Option<usize>>,
    /// Source value extended by zero (used where the point is not in E^ε).
    base: Vec<f64>,
    in_e: Vec<bool>,
    /// θ²-balls containing each point, as (start, end) into `lists`.
    span: Vec<(usize, usize)>,
    lists: Vec<usize>,
}

fn build_cloud(chain: &Chain, source: &SourceField, big: &[Ball], index: &BallIndex, cluster: &[usize], n: usize, seed: u64) -> Cloud {
    let d = chain.d;
    let mut cloud = Cloud {
        points: Vec::with_capacity(cluster.len() * n * d),
        weight: Vec::new(),
        owner: Vec::new(),
        base: Vec::new(),
        in_e: Vec::new(),
        span: Vec::new(),
        lists: Vec::new(),
    };
    let mut x = vec![0.0; d];
    let mut near = Vec::new();
    for &p in cluster {
        let mut rng = stream(mix(seed, 0x4558), chain.members[p] as u64);
        for _ in 0..n {
            sample_in_ball(&mut rng, &big[p], &mut x);
            index.candidates(&x, 0.0, &mut near);
            let start = cloud.lists.len();
            let mut density = 0.0;
            for &q in &near {
                if big[q].contains(&x) {
                    cloud.lists.push(q);
                    density += n as f64 / big[q].volume();
                }
            }
            cloud.span.push((start, cloud.lists.len()));
            cloud.weight.push(1.0 / density);
            let in_e = chain.e_eps().contains(&x);
            cloud.in_e.push(in_e);
            cloud.owner.push(if in_e { chain.owner(&x) } else { None });
            cloud.base.push(if in_e { 0.0 } else { source.extended(&x, chain.e_eps()) });
            cloud.points.extend_from_slice(&x);
        }
    }
    cloud
}

fn solve_cluster(
    chain: &Chain,
    source: &SourceField,
    big: &[Ball],
    index: &BallIndex,
    cluster: &[usize],
    n: usize,
    seed: u64,
) -> Result<ClusterOutcome> {
    let d = chain.d;
    if let [j] = *cluster {
        // A lone ball meets no E_{k+1} and owns all of B_j: both sides of the
        // balance vanish and the cell is the whole ball.
        let levels = (chain.k_max + 2 - CLASS_MIN) as usize;
        return Ok(ClusterOutcome {
            cells: vec![(j, 0.0, chain.balls[j].volume(), 0.0, 0.0, 0.0)],
            level_integrals: vec![0.0; levels],
            level_abs: vec![0.0; levels],
            overlap_max: 1,
            order_violations: 0,
            samples: 0,
        });
    }
    let cloud = build_cloud(chain, source, big, index, cluster, n, seed);
    let npts = cloud.weight.len();
    let mut by_ball: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in 0..npts {
        let (a, b) = cloud.span[i];
        for &q in &cloud.lists[a..b] {
            by_ball.entry(q).or_default().push(i);
        }
    }
    let mut order: Vec<usize> = cluster.to_vec();
    order.sort_by_key(|&p| (chain.class[p], p));
    let mut known: std::collections::HashMap<usize, f64> = Default::default();
    let k_max = chain.k_max;
    let base_factor = (2 * k_max + 3) as f64;
    let mut out = ClusterOutcome { samples: npts, ..Default::default() };

    // ḡ at cloud point i given the constants known so far.
    let value = |i: usize, known: &std::collections::HashMap<usize, f64>| -> Result<f64> {
        if !cloud.in_e[i] {
            return Ok(cloud.base[i]);
        }
        let Some(o) = cloud.owner[i] else { return Ok(0.0) };
        let x = &cloud.points[i * d..(i + 1) * d];
        if chain.e(chain.class[o] + 1).contains(x) {
            return Ok(0.0);
        }
        known.get(&o).copied().ok_or_else(|| {
            Error::Numeric(format!("cell of covering ball {} is needed before its constant is known", chain.members[o]))
        })
    };

    for &j in &order {
        let k = chain.class[j];
        let upper = chain.e(k + 1);
        let (mut s_a, mut s_b, mut vol, mut vol2, mut l1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in by_ball.get(&j).map(Vec::as_slice).unwrap_or(&[]) {
            let x = &cloud.points[i * d..(i + 1) * d];
            let w = cloud.weight[i];
            if !cloud.in_e[i] {
                l1 += w * cloud.base[i].abs();
            }
            if !chain.theta_balls[j].contains(x) {
                continue;
            }
            let in_b = chain.balls[j].contains(x);
            if in_b {
                if let Some(o) = cloud.owner[i] {
                    if o != j && chain.class[o] == k - 1 {
                        out.order_violations += 1;
                    }
                }
            }
            let in_upper = upper.contains(x);
            if !in_b && in_upper {
                s_a += w * value(i, &known)?;
            } else if in_b && !in_upper {
                if cloud.owner[i] == Some(j) {
                    vol += w;
                    vol2 += w * w;
                } else {
                    s_b += w * value(i, &known)?;
                }
            }
        }
        let se = vol2.sqrt();
        if !(vol > 3.0 * se) {
            return Err(Error::DegenerateCell { index: chain.members[j], volume: vol, stderr: se });
        }
        let gj = (s_a - s_b) / vol;
        known.insert(j, gj);
        let bound = base_factor.powi(k + 3) * l1;
        out.cells.push((j, gj, vol, se, vol * gj.abs(), bound));
    }

    let levels = (k_max + 2 - CLASS_MIN) as usize;
    out.level_integrals = vec![0.0; levels];
    out.level_abs = vec![0.0; levels];
    let top = order.iter().map(|&p| chain.class[p]).max().unwrap_or(CLASS_MIN);
    for i in 0..npts {
        let (a, b) = cloud.span[i];
        out.overlap_max = out.overlap_max.max(b - a);
        let x = &cloud.points[i * d..(i + 1) * d];
        let v = cloud.weight[i] * value(i, &known)?;
        for k in CLASS_MIN..=top {
            if chain.e(k).contains(x) {
                out.level_integrals[(k - CLASS_MIN) as usize] += v;
                out.level_abs[(k - CLASS_MIN) as usize] += v.abs();
            }
        }
    }
    Ok(out)
}

/// Constants `g_j` for every covering ball, with `mc_budget` samples per
/// θ²-dilated ball.
pub fn compute_extension_constants<'a>(
    chain: &'a Chain,
    source: &'a SourceField,
    mc_budget: usize,
    seed: u64,
) -> Result<ExtensionField<'a>> {
    let m = chain.members.len();
    let theta = chain.theta();
    let big: Vec<Ball> = chain.theta_balls.iter().map(|b| b.scaled(theta)).collect();
    let index = BallIndex::new(&big);
    let groups = clusters(&big);
    let outcomes = exec::map_indices(groups.len(), |c| solve_cluster(chain, source, &big, &index, &groups[c], mc_budget, seed));
    let levels = (chain.k_max + 2 - CLASS_MIN) as usize;
    let mut f = ExtensionField {
        chain,
        source,
        constants: vec![0.0; m],
        cell_volume: vec![0.0; m],
        cell_stderr: vec![0.0; m],
        bound_lhs: vec![0.0; m],
        bound_rhs: vec![0.0; m],
        level_integrals: vec![0.0; levels],
        level_abs: vec![0.0; levels],
        overlap_max: 0,
        order_violations: 0,
        cluster_samples: 0,
        seed,
    };
    for o in outcomes {
        let o = o?;
        for &(p, g, v, se, lhs, rhs) in &o.cells {
            f.constants[p] = g;
            f.cell_volume[p] = v;
            f.cell_stderr[p] = se;
            f.bound_lhs[p] = lhs;
            f.bound_rhs[p] = rhs;
        }
        for (a, b) in f.level_integrals.iter_mut().zip(&o.level_integrals) {
            *a += b;
        }
        for (a, b) in f.level_abs.iter_mut().zip(&o.level_abs) {
            *a += b;
        }
        f.overlap_max = f.overlap_max.max(o.overlap_max);
        f.order_violations += o.order_violations;
        f.cluster_samples += o.samples;
    }
    Ok(f)
}

pub fn evaluate_extension(f: &ExtensionField<'_>, x: &[f64]) -> f64 {
    let chain = f.chain;
    if !chain.e_eps().contains(x) {
        return f.source.extended(x, chain.e_eps());
    }
    match chain.owner(x) {
        // Good holes, and points the decomposition fails to assign.
        None => 0.0,
        Some(p) => {
            if chain.e(chain.class[p] + 1).contains(x) {
                0.0
            } else {
                f.constants[p]
            }
        }
    }
}

/// Hand-placed three-level clusters in the unit cube, for exercising the
/// multi-class parts of the construction. Realizations at desk scale give
/// either isolated covering balls or one ball swallowing the domain, and
/// neither reaches the nested case.
///
/// Each cluster has a class-1 ball of radius 0.04..0.07, a class −1 ball a
/// sixth of that size centered on its boundary, and a class −3 ball a sixth
/// smaller again centered on the boundary of the middle one. Clusters keep
/// their θ²-balls apart.
pub fn nested_cluster_covering(count: usize, seed: u64) -> Covering {
    let params = CoveringParams::default_for(3);
    let reach = params.theta * params.theta;
    let mut rng = stream(seed, 0x4e43);
    let mut holes: Vec<Ball> = Vec::new();
    let mut classes = Vec::new();
    let unit = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.1 && n <= 1.0 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    };
    let mut attempts = 0;
    while classes.len() < 3 * count && attempts < 10_000 {
        attempts += 1;
        let r1 = rng.random_range(0.04..0.07);
        let c1: Vec<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
        let clear = holes.chunks(3).all(|cl| crate::geometry::dist(&cl[0].center, &c1) > reach * (cl[0].radius + r1) * 1.2);
        if !clear {
            continue;
        }
        let r2 = r1 / 6.0 * rng.random_range(0.8..1.2);
        let u = unit(&mut rng);
        let c2: Vec<f64> = (0..3).map(|i| c1[i] + r1 * u[i]).collect();
        let r3 = r2 / 6.0 * rng.random_range(0.8..1.2);
        let v = unit(&mut rng);
        let c3: Vec<f64> = (0..3).map(|i| c2[i] + r2 * v[i]).collect();
        holes.extend([Ball::new(c1, r1), Ball::new(c2, r2), Ball::new(c3, r3)]);
        classes.extend([1, -1, -3]);
    }
    let n = holes.len();
    Covering {
        d: 3,
        epsilon: 0.1,
        params,
        holes,
        good: vec![],
        bad: (0..n).collect(),
        class_of: classes.iter().map(|&k| Some(k)).collect(),
        members: (0..n).collect(),
        lambda: vec![1.0; n],
        role: classes.iter().map(|&k| HoleRole::Member(k)).collect(),
        rounds: 1,
    }
}

pub mod check_id {
    pub const GLOBAL_MEAN: &str = "global_mean";
    pub const SOURCE_MEAN: &str = "source_mean";
    pub const CELL_BOUND: &str = "cell_bound";
    pub const CELL_BOUND_MAX: &str = "cell_bound_max";
    pub const OVERLAP: &str = "overlap_count";
    pub const LQ_CONSTANT: &str = "lq_constant";
    pub const TELESCOPING: &str = "telescoping";
    pub const SUPPORT: &str = "support_outside_Dr_bar";
    pub const CELL_ORDER: &str = "cell_order";
}

#[derive(Clone, Debug)]
pub struct ExtensionReport {
    pub rows: Vec<CheckRow>,
    pub global_mean: f64,
    pub global_stderr: f64,
    pub lq_constant: f64,
    pub overlap_max: usize,
}

impl ExtensionReport {
    pub fn violations(&self, id: &str) -> usize {
        self.rows.iter().filter(|r| r.check_id == id).map(|r| r.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.violations == 0)
    }
}

/// Checks on a computed extension: global mean, the per-cell bound, the
/// overlap count, the L^q constant, level telescoping and the support.
pub fn verify_extension(f: &ExtensionField<'_>, mc_budget: usize, seed: u64) -> ExtensionReport {
    let src = f.source;
    let chain = f.chain;
    let d = chain.d;
    let vol = src.domain.volume(d);
    let samples = mc_budget.max(1);
    let blocks = samples.div_ceil(MC_BLOCK);
    let outer = src.shell / 2.0;
    let parts = exec::map_indices(blocks, |b| {
        let mut rng = block_rng(seed, b);
        let n = MC_BLOCK.min(samples - b * MC_BLOCK);
        let (mut s1, mut s2, mut gq, mut outside) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..n {
            let x = src.domain.sample(d, &mut rng);
            let v = evaluate_extension(f, &x);
            s1 += v;
            s2 += v * v;
            if src.in_support(&x, chain.e_eps()) {
                gq += v.abs().powf(src.q);
            }
            if v != 0.0 && src.domain.boundary_distance(&x) <= outer {
                outside += 1;
            }
        }
        (s1, s2, gq, outside)
    });
    let (mut s1, mut s2, mut gq, mut outside) = (0.0, 0.0, 0.0, 0usize);
    for (a, b, c, e) in parts {
        s1 += a;
        s2 += b;
        gq += c;
        outside += e;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let global_mean = vol * mean;
    // The source is only mean-zero up to its recentering error.
    let global_stderr = (vol * vol * (s2 / n - mean * mean).max(0.0) / n + src.offset_stderr.powi(2)).sqrt();
    let row = |id: &str, index: String, value: f64, stderr: f64, violations: usize, samples: usize| CheckRow {
        check_id: id.into(),
        index,
        value,
        stderr,
        violations,
        samples,
        seed,
    };
    let mut rows = vec![
        row(check_id::GLOBAL_MEAN, "all".into(), global_mean, global_stderr, usize::from(global_mean.abs() > 3.0 * global_stderr), samples),
        row(check_id::SOURCE_MEAN, "all".into(), src.mean, src.mean_stderr, usize::from(src.mean.abs() > 3.0 * src.mean_stderr), 0),
    ];

    let mut worst = 0.0f64;
    let mut bad = 0;
    for p in 0..f.constants.len() {
        let (lhs, rhs) = (f.bound_lhs[p], f.bound_rhs[p]);
        let violated = lhs > rhs * (1.0 + 1e-12) + 1e-300;
        if violated {
            bad += 1;
        }
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(ratio);
        if f.constants[p] != 0.0 || violated {
            rows.push(row(check_id::CELL_BOUND, chain.members[p].to_string(), ratio, 0.0, usize::from(violated), 0));
        }
    }
    rows.push(row(check_id::CELL_BOUND_MAX, "all".into(), worst, 0.0, bad, f.cluster_samples));
    rows.push(row(
        check_id::OVERLAP,
        "all".into(),
        f.overlap_max as f64,
        0.0,
        usize::from(f.overlap_max as i32 > chain.k_max + 1),
        f.cluster_samples,
    ));
    // ‖ḡ‖_q^q = ‖g‖_q^q + Σ |Ẽ_j| |g_j|^q.
    let gq_norm = vol * gq / n;
    let cells: f64 = (0..f.constants.len()).map(|p| f.cell_volume[p] * f.constants[p].abs().powf(src.q)).sum();
    let lq_constant = if gq_norm > 0.0 { 1.0 + cells / gq_norm } else if cells > 0.0 { f64::INFINITY } else { 1.0 };
    rows.push(row(check_id::LQ_CONSTANT, "all".into(), lq_constant, 0.0, 0, samples));
    for k in CLASS_MIN..=chain.k_max {
        let slot = (k - CLASS_MIN) as usize;
        let (a, b) = (f.level_integrals[slot], f.level_integrals[slot + 1]);
        let scale = f.level_abs[slot] + f.level_abs[slot + 1];
        if scale == 0.0 {
            continue;
        }
        let diff = a - b;
        rows.push(row(check_id::TELESCOPING, k.to_string(), diff, 0.0, usize::from(diff.abs() > 1e-9 * scale), f.cluster_samples));
    }
    rows.push(row(check_id::SUPPORT, "all".into(), outside as f64, 0.0, outside, samples));
    rows.push(row(check_id::CELL_ORDER, "all".into(), f.order_violations as f64, 0.0, f.order_violations, f.cluster_samples));
    let overlap_max = f.overlap_max;
    ExtensionReport { rows, global_mean, global_stderr, lq_constant, overlap_max }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manual(balls: &[([f64; 3], f64, i32, f64)]) -> Covering {
        let n = balls.len();
        Covering {
            d: 3,
            epsilon: 0.1,
            params: CoveringParams::default_for(3),
            holes: balls.iter().map(|(c, r, _, _)| Ball::new(c.to_vec(), *r)).collect(),
            good: vec![],
            bad: (0..n).collect(),
            class_of: balls.iter().map(|b| Some(b.2)).collect(),
            members: (0..n).collect(),
            lambda: balls.iter().map(|b| b.3).collect(),
            role: balls.iter().map(|b| HoleRole::Member(b.2)).collect(),
            rounds: 1,
        }
    }

    fn linear_source(shell: f64) -> SourceField {
        SourceField::new(DomainSpec::unit_cube(), 3, shell, 4.0, Arc::new(|x: &[f64]| x[0])).unwrap()
    }

    #[test]
    fn isolated_lowest_class_ball_gets_zero() {
        let c = manual(&[([0.1, 0.0, 0.0], 0.05, -3, 1.0)]);
        let chain = Chain::build(&c);
        let g = linear_source(0.05);
        let f = compute_extension_constants(&chain, &g, 2000, 1).unwrap();
        assert_eq!(f.constants, vec![0.0]);
        assert!(f.cell_volume[0] > 0.0);
        assert_eq!(evaluate_extension(&f, &[0.1, 0.0, 0.0]), 0.0);
        assert_eq!(evaluate_extension(&f, &[-0.3, 0.0, 0.0]), -0.3);
    }

    /// A class −3 ball straddling the boundary of a class-1 ball. The half
    /// of its annulus inside the big ball carries the source (it is cut out
    /// of E^ε), so the small constant must carry that flux across.
    #[test]
    fn two_class_cluster_balances_flux() {
        let (rs, theta) = (0.004, 1.2);
        let c = manual(&[([0.0; 3], 0.1, 1, 1.0), ([0.1, 0.0, 0.0], rs, -3, 1.0)]);
        let chain = Chain::build(&c);
        let g = SourceField::new(DomainSpec::unit_cube(), 3, 0.05, 4.0, Arc::new(|_: &[f64]| 1.0)).unwrap();
        let f = compute_extension_constants(&chain, &g, 40_000, 3).unwrap();
        let rep = verify_extension(&f, 20_000, 4);
        for id in [check_id::TELESCOPING, check_id::OVERLAP, check_id::CELL_ORDER] {
            assert_eq!(rep.violations(id), 0, "{id}: {:?}", rep.rows);
        }

        // Oracle: plain uniform sampling of the small θ-ball, independent of
        // the weighted cluster cloud.
        let mut rng = stream(77, 0);
        let tb = Ball::new(vec![0.1, 0.0, 0.0], theta * rs);
        let (mut annulus_in, mut cell, mut x) = (0usize, 0usize, vec![0.0; 3]);
        let n = 400_000;
        for _ in 0..n {
            sample_in_ball(&mut rng, &tb, &mut x);
            let in_big = x.iter().map(|v| v * v).sum::<f64>() < 0.01;
            let in_small = crate::geometry::dist(&x, &[0.1, 0.0, 0.0]) < rs;
            if in_big && !in_small {
                annulus_in += 1;
            }
            if in_small && !in_big {
                cell += 1;
            }
        }
        let unit = tb.volume() / n as f64;
        let (a_vol, cell_vol) = (annulus_in as f64 * unit, cell as f64 * unit);
        let small = chain.position(1).unwrap();
        let big = chain.position(0).unwrap();
        let want = a_vol / cell_vol;
        assert!((f.constants[small] - want).abs() < 0.03 * want, "{} vs {want}", f.constants[small]);
        assert!((f.cell_volume[small] - cell_vol).abs() < 0.03 * cell_vol);
        // The big ball hands the same flux back.
        let back = f.constants[big] * f.cell_volume[big];
        assert!((back + a_vol).abs() < 0.05 * a_vol, "{back} vs {a_vol}");
    }

    #[test]
    fn linearity_and_scaling_are_exact() {
        let c = manual(&[([0.0; 3], 0.1, 1, 1.0), ([0.1, 0.0, 0.0], 0.004, -3, 1.0)]);
        let chain = Chain::build(&c);
        let g1 = SourceField::new(DomainSpec::unit_cube(), 3, 0.05, 4.0, smooth_source(3, 1)).unwrap();
        let g2 = SourceField::new(DomainSpec::unit_cube(), 3, 0.05, 4.0, smooth_source(3, 2)).unwrap();
        let g12 = SourceField::sum(&g1, &g2);
        let g1s = g1.scaled(-2.5);
        let f1 = compute_extension_constants(&chain, &g1, 4000, 9).unwrap();
        let f2 = compute_extension_constants(&chain, &g2, 4000, 9).unwrap();
        let f12 = compute_extension_constants(&chain, &g12, 4000, 9).unwrap();
        let f1s = compute_extension_constants(&chain, &g1s, 4000, 9).unwrap();
        for p in 0..2 {
            let s = f1.constants[p] + f2.constants[p];
            assert!((f12.constants[p] - s).abs() <= 1e-12 * (1.0 + s.abs()));
            let t = -2.5 * f1.constants[p];
            assert!((f1s.constants[p] - t).abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn zero_source_gives_zero_constants() {
        let c = manual(&[([0.0; 3], 0.1, 1, 1.0), ([0.1, 0.0, 0.0], 0.004, -3, 1.0)]);
        let chain = Chain::build(&c);
        let g = SourceField::zero(DomainSpec::unit_cube(), 3, 0.05, 4.0).unwrap();
        let f = compute_extension_constants(&chain, &g, 2000, 1).unwrap();
        assert!(f.constants.iter().all(|&v| v == 0.0));
        let rep = verify_extension(&f, 20_000, 2);
        assert!(rep.passed(), "{:?}", rep.rows);
    }

    #[test]
    fn nested_clusters_pass_all_checks() {
        let c = nested_cluster_covering(4, 5);
        assert_eq!(c.members.len(), 12);
        let chain = Chain::build(&c);
        let domain = DomainSpec::unit_cube();
        let g = SourceField::recentered(domain, 3, 0.05, 4.0, smooth_source(3, 8), chain.e_eps(), 100_000, 8).unwrap();
        let f = compute_extension_constants(&chain, &g, 4000, 8).unwrap();
        assert!(f.constants.iter().filter(|v| **v != 0.0).count() >= 8, "{:?}", f.constants);
        let rep = verify_extension(&f, 100_000, 9);
        assert!(rep.passed(), "{:?}", rep.rows.iter().filter(|r| r.violations > 0).collect::<Vec<_>>());
    }

    #[test]
    fn q_must_exceed_dimension() {
        assert!(SourceField::zero(DomainSpec::unit_cube(), 3, 0.1, 3.0).is_err());
    }
}
