//! The nested-cluster set chain E_{k_max+1} = ∅, …, E_{−3}, the set
//! E^ε = E_{−3} ∪ H_g, the per-ball cells E^{z_j}_k, and Monte Carlo checks
//! of the identities relating them.
//!
//! Reading of the recursion used throughout:
//! E_{k−1} = (E_k ∖ ∪_{j∈J_{k−1}} A_j) ∪ ∪_{j∈J_{k−1}} B_j, and for j ∈ J_l,
//! E^{z_j}_k = B_j ∖ ∪_{m=k}^{l−1} ∪_{i∈J_m} B_{i,θ}. The decomposition
//! check is E_k = ⊔_{l≥k} ⊔_{j∈J_l} E^{z_j}_k.

use std::collections::HashMap;

use crate::covering::{Covering, CLASS_MIN};
use crate::exec;
use crate::geometry::{Ball, BallIndex};
use crate::region::{block_rng, sample_in_ball, Region, UnionSampler, MC_BLOCK};
use crate::rng::mix;

#[derive(Debug)]
pub struct Chain {
    pub d: usize,
    pub k_max: i32,
    /// E_k for k = −3 ..= k_max+1, stored at `k + 3`.
    levels: Vec<Region>,
    e_eps: Region,
    /// Covering anchors (sorted) with class, B_j and B_{j,θ}.
    pub members: Vec<usize>,
    pub class: Vec<i32>,
    pub balls: Vec<Ball>,
    pub theta_balls: Vec<Ball>,
    position: HashMap<usize, usize>,
    ball_index: BallIndex,
    theta_index: BallIndex,
    pub good_holes: Vec<Ball>,
}

impl Chain {
    pub fn build(c: &Covering) -> Chain {
        let d = c.d;
        let members = c.members.clone();
        let class: Vec<i32> = members.iter().map(|&j| c.class(j)).collect();
        let balls: Vec<Ball> = members.iter().map(|&j| c.ball(j)).collect();
        let theta_balls: Vec<Ball> = members.iter().map(|&j| c.theta_ball(j)).collect();
        let k_max = c.params.k_max;

        let mut levels = vec![Region::empty(d); (k_max + 5) as usize];
        let mut current = Region::empty(d);
        for k in (CLASS_MIN..=k_max).rev() {
            let at: Vec<usize> = (0..members.len()).filter(|&p| class[p] == k).collect();
            if !at.is_empty() {
                let annuli = Region::annuli(d, at.iter().map(|&p| (theta_balls[p].clone(), balls[p].clone())).collect());
                let covers = Region::balls(d, at.iter().map(|&p| balls[p].clone()).collect());
                current = Region::union(d, vec![covers, Region::difference(current, annuli)]);
            }
            levels[(k + 3) as usize] = current.clone();
        }
        let good_holes: Vec<Ball> = c.good.iter().map(|&g| c.holes[g].clone()).collect();
        let e_eps = Region::union(d, vec![current, Region::balls(d, good_holes.clone())]);
        let position = members.iter().enumerate().map(|(p, &j)| (j, p)).collect();
        let ball_index = BallIndex::new(&balls);
        let theta_index = BallIndex::new(&theta_balls);
        Chain { d, k_max, levels, e_eps, members, class, balls, theta_balls, position, ball_index, theta_index, good_holes }
    }

    /// E_k for −3 ≤ k ≤ k_max+1.
    pub fn e(&self, k: i32) -> &Region {
        assert!((CLASS_MIN..=self.k_max + 1).contains(&k), "level {k} out of range");
        &self.levels[(k + 3) as usize]
    }

    /// E^ε = E_{−3} ∪ H_g.
    pub fn e_eps(&self) -> &Region {
        &self.e_eps
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.position.get(&j).copied()
    }

    /// x ∈ E^{z_j}_k where `p` is the position of j in `members`.
    pub fn in_cell(&self, p: usize, k: i32, x: &[f64]) -> bool {
        let l = self.class[p];
        if !self.balls[p].contains(x) {
            return false;
        }
        !self.theta_index.any(x, 0.0, |q| {
            let m = self.class[q];
            k <= m && m < l && self.theta_balls[q].contains(x)
        })
    }

    /// Positions of covering balls containing x.
    pub fn covering_at(&self, x: &[f64], out: &mut Vec<usize>) {
        out.clear();
        self.ball_index.any(x, 0.0, |p| {
            if self.balls[p].contains(x) {
                out.push(p);
            }
            false
        });
    }

    /// Position of the covering ball whose cell E^{z_j} contains x, if any.
    /// The decomposition makes it unique for x ∈ E_{−3}.
    pub fn owner(&self, x: &[f64]) -> Option<usize> {
        let mut found = None;
        self.ball_index.any(x, 0.0, |p| {
            if self.balls[p].contains(x) && self.in_cell(p, CLASS_MIN, x) {
                found = Some(p);
                true
            } else {
                false
            }
        });
        found
    }

    /// θ-dilation factor of the covering (B_{j,θ} radius over B_j radius).
    pub fn theta(&self) -> f64 {
        self.theta_balls.first().zip(self.balls.first()).map_or(1.0, |(t, b)| t.radius / b.radius)
    }

    /// Positions of θ-dilated balls containing x.
    pub fn theta_at(&self, x: &[f64], out: &mut Vec<usize>) {
        out.clear();
        self.theta_index.any(x, 0.0, |p| {
            if self.theta_balls[p].contains(x) {
                out.push(p);
            }
            false
        });
    }

    /// Region E^{z_j}_k for every k from l = class(j) down to −3, returned
    /// as `(k, region)` pairs in that order.
    pub fn cell_regions(&self, j: usize) -> Vec<(i32, Region)> {
        let p = self.position(j).expect("index is not a covering anchor");
        let l = self.class[p];
        let mut near = Vec::new();
        self.theta_index.candidates(&self.balls[p].center, self.balls[p].radius, &mut near);
        let mut out = Vec::new();
        for k in (CLASS_MIN..=l).rev() {
            let cut: Vec<Ball> = near
                .iter()
                .copied()
                .filter(|&q| (k..l).contains(&self.class[q]) && self.theta_balls[q].intersects(&self.balls[p]))
                .map(|q| self.theta_balls[q].clone())
                .collect();
            let r = Region::difference(Region::ball(self.balls[p].clone()), Region::balls(self.d, cut));
            out.push((k, r));
        }
        out
    }

    /// Sampler on ∪_J B_{j,θ}, which contains every E_k.
    pub fn support_sampler(&self) -> UnionSampler {
        UnionSampler::new(self.theta_balls.clone())
    }
}

/// E^{z_j}_k for all −3 ≤ k ≤ class(j); E^{z_j} is the last entry.
pub fn build_ez(chain: &Chain, j: usize) -> Vec<(i32, Region)> {
    chain.cell_regions(j)
}

pub fn build_e_chain(c: &Covering) -> Chain {
    Chain::build(c)
}

/// One CSV row: `check_id, index, value, stderr, violations, samples, seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check_id: String,
    pub index: String,
    pub value: f64,
    pub stderr: f64,
    pub violations: usize,
    pub samples: usize,
    pub seed: u64,
}

impl CheckRow {
    pub fn csv_header() -> &'static str {
        "check_id,index,value,stderr,violations,samples,seed"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.10e},{:.10e},{},{},{}",
            self.check_id, self.index, self.value, self.stderr, self.violations, self.samples, self.seed
        )
    }
}

pub mod check_id {
    pub const DECOMPOSITION: &str = "disjoint_decomposition";
    pub const CELL_INDICATOR: &str = "cell_indicator";
    pub const BALLS_IN_ANNULUS: &str = "balls_in_annulus";
    pub const CELL_HOLE_RATIO: &str = "cell_hole_ratio";
    pub const CELL_HOLE_RATIO_MIN: &str = "cell_hole_ratio_min";
    pub const HOLES_IN_E: &str = "holes_in_E";
    pub const E_IN_HOLES_OR_DB: &str = "E_in_H_or_Db";
}

#[derive(Clone, Debug, Default)]
struct PointTally {
    points: usize,
    decomposition_tested: Vec<usize>,
    decomposition_bad: Vec<usize>,
    char_tested: usize,
    char_bad: usize,
    annulus_tested: usize,
    annulus_bad: usize,
}

impl PointTally {
    fn new(levels: usize) -> Self {
        PointTally { decomposition_tested: vec![0; levels], decomposition_bad: vec![0; levels], ..Default::default() }
    }

    fn merge(&mut self, o: &PointTally) {
        self.points += o.points;
        for (a, b) in self.decomposition_tested.iter_mut().zip(&o.decomposition_tested) {
            *a += b;
        }
        for (a, b) in self.decomposition_bad.iter_mut().zip(&o.decomposition_bad) {
            *a += b;
        }
        self.char_tested += o.char_tested;
        self.char_bad += o.char_bad;
        self.annulus_tested += o.annulus_tested;
        self.annulus_bad += o.annulus_bad;
    }
}

fn test_point(chain: &Chain, x: &[f64], t: &mut PointTally, cov: &mut Vec<usize>, th: &mut Vec<usize>) {
    t.points += 1;
    chain.theta_at(x, th);
    chain.covering_at(x, cov);
    // Membership on both sides only changes at classes of θ-balls
    // containing x, so those levels (and −3) cover every level.
    let mut levels: Vec<i32> = th.iter().map(|&p| chain.class[p]).collect();
    levels.push(CLASS_MIN);
    levels.sort_unstable();
    levels.dedup();
    for &k in &levels {
        let in_e = chain.e(k).contains(x);
        let owners = cov.iter().filter(|&&p| chain.class[p] >= k && chain.in_cell(p, k, x)).count();
        let slot = (k - CLASS_MIN) as usize;
        if in_e {
            t.decomposition_tested[slot] += 1;
        }
        if (in_e && owners != 1) || (!in_e && owners != 0) {
            t.decomposition_bad[slot] += 1;
        }
    }
    let in_e = chain.e_eps().contains(x);
    let in_low_cell = |bound: i32| cov.iter().any(|&p| chain.class[p] <= bound && chain.in_cell(p, CLASS_MIN, x));
    for &p in cov.iter() {
        let k = chain.class[p];
        let lhs = chain.in_cell(p, CLASS_MIN, x);
        let rhs = in_e && !in_low_cell(k - 2);
        t.char_tested += 1;
        if lhs != rhs {
            t.char_bad += 1;
        }
    }
    for &p in th.iter() {
        if chain.balls[p].contains(x) {
            continue;
        }
        let k = chain.class[p];
        if !chain.e(k + 1).contains(x) {
            continue;
        }
        t.annulus_tested += 1;
        if in_e != in_low_cell(k - 2) {
            t.annulus_bad += 1;
        }
    }
}

/// Pointwise checks of the decomposition, the E^{z_j} characterization and
/// the annulus identity on `samples` points drawn uniformly from ∪ B_{j,θ}.
pub fn check_identities(chain: &Chain, samples: usize, seed: u64) -> Vec<CheckRow> {
    let nlev = (chain.k_max + 2 - CLASS_MIN) as usize;
    let mut tally = PointTally::new(nlev);
    if !chain.members.is_empty() && samples > 0 {
        let sampler = chain.support_sampler();
        let blocks = samples.div_ceil(MC_BLOCK);
        let parts = exec::map_indices(blocks, |b| {
            let mut rng = block_rng(seed, b);
            let n = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut t = PointTally::new(nlev);
            let mut x = vec![0.0; chain.d];
            let (mut cov, mut th) = (Vec::new(), Vec::new());
            for _ in 0..n {
                sampler.sample(&mut rng, &mut x);
                test_point(chain, &x, &mut t, &mut cov, &mut th);
            }
            t
        });
        for p in &parts {
            tally.merge(p);
        }
    }
    let row = |id: &str, index: String, value: f64, violations: usize| CheckRow {
        check_id: id.to_string(),
        index,
        value,
        stderr: 0.0,
        violations,
        samples,
        seed,
    };
    let mut rows = Vec::new();
    for (slot, (&tested, &bad)) in tally.decomposition_tested.iter().zip(&tally.decomposition_bad).enumerate() {
        if tested > 0 || bad > 0 {
            let k = slot as i32 + CLASS_MIN;
            rows.push(row(check_id::DECOMPOSITION, k.to_string(), tested as f64, bad));
        }
    }
    rows.push(row(
        check_id::DECOMPOSITION,
        "all".into(),
        tally.decomposition_tested.iter().sum::<usize>() as f64,
        tally.decomposition_bad.iter().sum(),
    ));
    rows.push(row(check_id::CELL_INDICATOR, "all".into(), tally.char_tested as f64, tally.char_bad));
    rows.push(row(check_id::BALLS_IN_ANNULUS, "all".into(), tally.annulus_tested as f64, tally.annulus_bad));
    rows
}

/// |E^{z_j} ∖ E_{k+1}| / |B_j| for one covering ball, by uniform sampling in
/// B_j. Returns (ratio, stderr, samples used); balls whose B_j meets no
/// other θ-ball have ratio exactly 1 and use no samples.
pub fn cell_ratio(chain: &Chain, p: usize, samples: usize, seed: u64) -> (f64, f64, usize) {
    let b = &chain.balls[p];
    let mut near = Vec::new();
    chain.theta_index.candidates(&b.center, b.radius, &mut near);
    if near.iter().all(|&q| q == p || !chain.theta_balls[q].intersects(b)) {
        return (1.0, 0.0, 0);
    }
    let k = chain.class[p];
    let upper = chain.e(k + 1);
    let mut rng = block_rng(seed, p);
    let mut x = vec![0.0; chain.d];
    let mut hits = 0usize;
    for _ in 0..samples {
        sample_in_ball(&mut rng, b, &mut x);
        if chain.in_cell(p, CLASS_MIN, &x) && !upper.contains(&x) {
            hits += 1;
        }
    }
    let q = hits as f64 / samples as f64;
    (q, (q * (1.0 - q) / samples as f64).sqrt(), samples)
}

/// Per-ball cell-to-hole volume ratios. Rows are emitted for balls that needed
/// sampling; the last row reports the minimum over all balls.
pub fn check_cell_ratios(chain: &Chain, samples_per_ball: usize, seed: u64, threshold: f64) -> Vec<CheckRow> {
    let res = exec::map_indices(chain.members.len(), |p| cell_ratio(chain, p, samples_per_ball, mix(seed, p as u64)));
    let mut rows = Vec::new();
    let mut min: Option<(usize, f64, f64)> = None;
    for (p, &(v, se, n)) in res.iter().enumerate() {
        let bad = usize::from(v < threshold - 3.0 * se);
        if n > 0 || bad > 0 {
            rows.push(CheckRow {
                check_id: check_id::CELL_HOLE_RATIO.into(),
                index: chain.members[p].to_string(),
                value: v,
                stderr: se,
                violations: bad,
                samples: n,
                seed: mix(seed, p as u64),
            });
        }
        if min.is_none_or(|(_, m, _)| v < m) {
            min = Some((p, v, se));
        }
    }
    let violations = res.iter().filter(|(v, se, _)| *v < threshold - 3.0 * se).count();
    let (idx, v, se) = min.map_or(("none".to_string(), 1.0, 0.0), |(p, v, se)| (chain.members[p].to_string(), v, se));
    rows.push(CheckRow {
        check_id: check_id::CELL_HOLE_RATIO_MIN.into(),
        index: idx,
        value: v,
        stderr: se,
        violations,
        samples: res.iter().map(|r| r.2).sum(),
        seed,
    });
    rows
}

/// H ⊆ E^ε on points sampled in the holes, and E^ε ⊆ H ∪ D_b on points
/// sampled in D_b ∪ H_g.
pub fn check_inclusions(c: &Covering, chain: &Chain, samples: usize, seed: u64) -> Vec<CheckRow> {
    let holes = UnionSampler::new(c.holes.clone());
    let hole_index = BallIndex::new(&c.holes);
    let in_holes = |x: &[f64]| hole_index.any(x, 0.0, |i| c.holes[i].contains(x));
    let mut rows = Vec::new();
    let count = |sampler: &UnionSampler, stream: u64, test: &(dyn Fn(&[f64]) -> bool + Sync)| -> usize {
        if sampler.is_empty() {
            return 0;
        }
        let blocks = samples.div_ceil(MC_BLOCK);
        exec::map_indices(blocks, |b| {
            let mut rng = block_rng(mix(seed, stream), b);
            let n = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut x = vec![0.0; chain.d];
            (0..n)
                .filter(|_| {
                    sampler.sample(&mut rng, &mut x);
                    !test(&x)
                })
                .count()
        })
        .into_iter()
        .sum()
    };
    let v1 = count(&holes, 1, &|x| chain.e_eps().contains(x));
    rows.push(CheckRow {
        check_id: check_id::HOLES_IN_E.into(),
        index: "all".into(),
        value: samples as f64,
        stderr: 0.0,
        violations: v1,
        samples,
        seed: mix(seed, 1),
    });
    let mut support = chain.theta_balls.clone();
    support.extend(chain.good_holes.iter().cloned());
    let sup = UnionSampler::new(support);
    let v2 = count(&sup, 2, &|x| {
        !chain.e_eps().contains(x) || in_holes(x) || chain.theta_index.any(x, 0.0, |q| chain.theta_balls[q].contains(x))
    });
    rows.push(CheckRow {
        check_id: check_id::E_IN_HOLES_OR_DB.into(),
        index: "all".into(),
        value: samples as f64,
        stderr: 0.0,
        violations: v2,
        samples,
        seed: mix(seed, 2),
    });
    rows
}

/// All set-algebra checks for one covering.
pub fn check_covering_sets(c: &Covering, chain: &Chain, samples: usize, samples_per_ball: usize, seed: u64) -> Vec<CheckRow> {
    let mut rows = check_identities(chain, samples, mix(seed, 10));
    rows.extend(check_cell_ratios(chain, samples_per_ball, mix(seed, 11), 1e-2));
    rows.extend(check_inclusions(c, chain, samples, mix(seed, 12)));
    rows
}
