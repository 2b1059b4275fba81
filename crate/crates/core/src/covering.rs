//! Good/bad classification of holes, size classes and dilated covering balls.
//!
//! Construction:
//! 1. good candidates are holes of radius ≤ ε^{1+2δ} whose center has no
//!    other point within 2ε^{δ/2} (z-units);
//! 2. the remaining holes are bad; they are sorted into size classes and
//!    merged into dilated covering balls by [`select_dilations`];
//! 3. good holes too close to the dilated covering are demoted and the
//!    covering is rebuilt from scratch until nothing changes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{dist, Ball, BallIndex, PointGrid};
use crate::point_process::{isolated_indices, MarkedRealization};

/// Lowest size class index.
pub const CLASS_MIN: i32 = -3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoveringParams {
    pub delta: f64,
    pub theta: f64,
    pub lambda_max: f64,
    pub k_max: i32,
}

impl CoveringParams {
    /// δ = 0.05, θ = 1.2, Λ = 10³, k_max = ⌈(1/δ)(d/(d−2) − 1)⌉.
    pub fn default_for(d: usize) -> Self {
        let delta = 0.05;
        CoveringParams {
            delta,
            theta: 1.2,
            lambda_max: 1e3,
            k_max: default_k_max(d, delta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.theta > 1.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must exceed 1, got {}", self.theta)));
        }
        if !(self.lambda_max >= 1.0) {
            return Err(Error::Config(format!("Lambda must be at least 1, got {}", self.lambda_max)));
        }
        if self.k_max < 0 {
            return Err(Error::Config(format!("k_max must be non-negative, got {}", self.k_max)));
        }
        Ok(())
    }
}

pub fn default_k_max(d: usize, delta: f64) -> i32 {
    let exponent = d as f64 / (d as f64 - 2.0) - 1.0;
    ((exponent / delta) - 1e-12).ceil().max(0.0) as i32
}

/// Lower radius threshold ε^{1−δk} of class k (k ≥ −2); also the upper
/// threshold of class k−1.
pub fn class_threshold(epsilon: f64, delta: f64, k: i32) -> f64 {
    epsilon.powf(1.0 - delta * k as f64)
}

/// Size class of a scaled radius.
pub fn size_class(radius: f64, epsilon: f64, delta: f64, k_max: i32) -> Result<i32> {
    if radius < class_threshold(epsilon, delta, -2) {
        return Ok(CLASS_MIN);
    }
    for k in -2..=k_max {
        if radius < class_threshold(epsilon, delta, k + 1) {
            return Ok(k);
        }
    }
    Err(Error::EpsilonTooLarge {
        epsilon,
        detail: format!(
            "hole radius {radius:.6e} exceeds the top class bound {:.6e} (k_max = {k_max})",
            class_threshold(epsilon, delta, k_max + 1)
        ),
    })
}

/// Assign each listed hole (index, radius) to its size class.
pub fn partition_size_classes(
    bad: &[(usize, f64)],
    epsilon: f64,
    delta: f64,
    k_max: i32,
) -> Result<BTreeMap<i32, Vec<usize>>> {
    let mut classes: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for &(i, r) in bad {
        classes.entry(size_class(r, epsilon, delta, k_max)?).or_default().push(i);
    }
    for v in classes.values_mut() {
        v.sort_unstable();
    }
    Ok(classes)
}

/// Result of [`select_dilations`].
#[derive(Clone, Debug, Default)]
pub struct Dilations {
    /// Surviving covering-ball anchors, sorted.
    pub members: Vec<usize>,
    /// Dilation factor per surviving anchor (same order as `members`).
    pub lambda: Vec<f64>,
    /// `(absorbed, absorber)` pairs in the order the merges happened.
    pub absorbed: Vec<(usize, usize)>,
}

struct Candidate {
    hole: usize,
    class: i32,
    lambda: f64,
    alive: bool,
}

/// Strict total order "a is larger than b": larger covering radius first,
/// then lexicographically smaller center, then smaller mark, then index.
fn larger(holes: &[Ball], a: &Candidate, b: &Candidate) -> bool {
    let ra = a.lambda * holes[a.hole].radius;
    let rb = b.lambda * holes[b.hole].radius;
    match ra.partial_cmp(&rb).unwrap_or(Ordering::Equal) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    for (x, y) in holes[a.hole].center.iter().zip(&holes[b.hole].center) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    match holes[a.hole].radius.partial_cmp(&holes[b.hole].radius).unwrap_or(Ordering::Equal) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    a.hole < b.hole
}

struct Selector<'a> {
    holes: &'a [Ball],
    params: CoveringParams,
    epsilon: f64,
    d: usize,
    cands: Vec<Candidate>,
    absorbed: Vec<(usize, usize)>,
}

impl<'a> Selector<'a> {
    fn radius(&self, c: usize) -> f64 {
        self.cands[c].lambda * self.holes[self.cands[c].hole].radius
    }

    fn center(&self, c: usize) -> &'a [f64] {
        &self.holes[self.cands[c].hole].center
    }

    /// Pairwise conflict between two alive candidates.
    fn conflict(&self, a: usize, b: usize) -> bool {
        let t2 = self.params.theta * self.params.theta;
        let dab = dist(self.center(a), self.center(b));
        let (ra, rb) = (self.radius(a), self.radius(b));
        if (self.cands[a].class - self.cands[b].class).abs() <= 1 {
            dab <= t2 * (ra + rb)
        } else {
            dab <= ra + rb
        }
    }

    /// Merge the smaller of `a`, `b` into the larger; returns the survivor.
    fn merge(&mut self, a: usize, b: usize) -> Result<usize> {
        let (big, small) = if larger(self.holes, &self.cands[a], &self.cands[b]) { (a, b) } else { (b, a) };
        let need = dist(self.center(big), self.center(small)) + self.radius(small);
        let r_big = self.holes[self.cands[big].hole].radius;
        // Grow by a factor theta past the minimal cover so the absorbed hole
        // also sits inside the theta-dilated ball.
        let grown = self.params.theta * need / r_big;
        if grown > self.cands[big].lambda {
            self.cands[big].lambda = grown;
        }
        self.cands[small].alive = false;
        self.absorbed.push((self.cands[small].hole, self.cands[big].hole));
        let lam = self.cands[big].lambda;
        if lam > self.params.lambda_max {
            return Err(Error::EpsilonTooLarge {
                epsilon: self.epsilon,
                detail: format!(
                    "dilation {lam:.4e} of hole {} exceeds Lambda = {:.4e}",
                    self.cands[big].hole, self.params.lambda_max
                ),
            });
        }
        let bound = self.params.lambda_max * self.epsilon.powf(2.0 * self.d as f64 * self.params.delta);
        if lam * r_big > bound {
            return Err(Error::EpsilonTooLarge {
                epsilon: self.epsilon,
                detail: format!(
                    "covering radius {:.4e} of hole {} exceeds Lambda*eps^(2d delta) = {bound:.4e}",
                    lam * r_big,
                    self.cands[big].hole
                ),
            });
        }
        Ok(big)
    }

    fn alive_sorted(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.cands.len()).filter(|&c| self.cands[c].alive).collect();
        v.sort_by(|&a, &b| {
            if a == b {
                Ordering::Equal
            } else if larger(self.holes, &self.cands[a], &self.cands[b]) {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        });
        v
    }

    fn index(&self, alive: &[usize], dilation: f64) -> BallIndex {
        BallIndex::from_iter(alive.iter().map(|&c| (self.center(c), dilation * self.radius(c))), self.d)
    }

    /// Resolve pairwise conflicts; returns whether anything merged.
    fn pairwise_pass(&mut self) -> Result<bool> {
        let order = self.alive_sorted();
        let t2 = self.params.theta * self.params.theta;
        let index = self.index(&order, t2);
        let mut any = false;
        let mut stack = Vec::new();
        let mut near = Vec::new();
        for &c0 in &order {
            stack.push(c0);
            while let Some(c) = stack.pop() {
                if !self.cands[c].alive {
                    continue;
                }
                index.candidates(self.center(c), t2 * self.radius(c), &mut near);
                // Grown balls may reach further than the index assumed;
                // anything missed here is caught by the next pass.
                let mut partners: Vec<usize> = near
                    .iter()
                    .map(|&k| order[k])
                    .filter(|&o| o != c && self.cands[o].alive && self.conflict(c, o))
                    .collect();
                partners.sort_by(|&a, &b| {
                    if larger(self.holes, &self.cands[a], &self.cands[b]) {
                        Ordering::Less
                    } else {
                        Ordering::Greater
                    }
                });
                let mut merged = false;
                for o in partners {
                    if !self.cands[o].alive || !self.conflict(c, o) {
                        continue;
                    }
                    let survivor = self.merge(c, o)?;
                    any = true;
                    merged = true;
                    if survivor != c {
                        stack.push(survivor);
                        break;
                    }
                }
                if merged && self.cands[c].alive {
                    stack.push(c);
                }
            }
        }
        Ok(any)
    }

    /// Make sure no hole is cut by an annulus without being re-covered by a
    /// ball of the same or a lower class; returns whether anything merged.
    fn annulus_pass(&mut self, bad: &[usize]) -> Result<bool> {
        let order = self.alive_sorted();
        let theta = self.params.theta;
        let index = self.index(&order, theta);
        let mut touched = vec![false; self.cands.len()];
        let mut any = false;
        let mut near = Vec::new();
        for &h in bad {
            let hb = &self.holes[h];
            index.candidates(&hb.center, hb.radius, &mut near);
            // Balls grown earlier in this pass are re-examined next pass.
            if near.iter().any(|&k| touched[order[k]]) {
                continue;
            }
            let mut cut_by: Option<usize> = None;
            let mut containing: Vec<usize> = Vec::new();
            for &k in &near {
                let c = order[k];
                if !self.cands[c].alive {
                    continue;
                }
                let dc = dist(&hb.center, self.center(c));
                let rc = self.radius(c);
                if dc + hb.radius <= rc {
                    containing.push(c);
                } else if dc <= hb.radius + theta * rc {
                    cut_by = match cut_by {
                        Some(p) if self.cands[p].class <= self.cands[c].class => Some(p),
                        _ => Some(c),
                    };
                }
            }
            // Only the lowest-class annulus matters: a re-covering ball of
            // class ≤ that annulus is added after every other cut.
            let Some(i) = cut_by else { continue };
            let ki = self.cands[i].class;
            if containing.iter().any(|&m| self.cands[m].class <= ki) {
                continue;
            }
            let best = containing
                .iter()
                .copied()
                .reduce(|p, q| if larger(self.holes, &self.cands[p], &self.cands[q]) { p } else { q });
            let Some(c) = best else {
                return Err(Error::Numeric(format!("bad hole {h} is not covered by any covering ball")));
            };
            touched[i] = true;
            touched[c] = true;
            self.merge(i, c)?;
            any = true;
        }
        Ok(any)
    }
}

/// Merge conflicting balls until (i) θ²-dilated balls of equal or adjacent
/// classes are disjoint, (ii) covering balls of non-adjacent classes are
/// disjoint, and (iii) every bad hole meeting an annulus B_{i,θ}∖B_i is
/// contained in a covering ball of class ≤ class(i). Smaller balls are
/// absorbed into larger ones, whose dilation grows to θ times the radius
/// needed to contain the absorbed ball.
pub fn select_dilations(
    holes: &[Ball],
    classes: &BTreeMap<i32, Vec<usize>>,
    params: &CoveringParams,
    epsilon: f64,
) -> Result<Dilations> {
    params.validate()?;
    let d = holes.first().map_or(3, |b| b.dim());
    let mut cands: Vec<Candidate> = classes
        .iter()
        .flat_map(|(&k, v)| v.iter().map(move |&h| Candidate { hole: h, class: k, lambda: 1.0, alive: true }))
        .collect();
    cands.sort_by_key(|c| c.hole);
    let bad: Vec<usize> = cands.iter().map(|c| c.hole).collect();
    let mut sel = Selector { holes, params: *params, epsilon, d, cands, absorbed: Vec::new() };
    loop {
        if sel.pairwise_pass()? {
            continue;
        }
        if sel.annulus_pass(&bad)? {
            continue;
        }
        break;
    }
    let mut members = Vec::new();
    let mut lambda = Vec::new();
    for c in &sel.cands {
        if c.alive {
            members.push(c.hole);
            lambda.push(c.lambda);
        }
    }
    Ok(Dilations { members, lambda, absorbed: sel.absorbed })
}

/// Role of a hole in the covering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HoleRole {
    Good,
    /// Bad hole anchoring a covering ball of the given class.
    Member(i32),
    /// Bad hole absorbed into another covering ball.
    Absorbed,
}

#[derive(Clone, Debug)]
pub struct Covering {
    pub d: usize,
    pub epsilon: f64,
    pub params: CoveringParams,
    /// One ball per point of the realization, B(εz_i, ε^{d/(d−2)}ρ_i).
    pub holes: Vec<Ball>,
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
    /// Class of every bad hole (including absorbed ones), `None` for good.
    pub class_of: Vec<Option<i32>>,
    /// Covering-ball anchors J, sorted.
    pub members: Vec<usize>,
    /// λ_j per hole; 1 for holes outside J.
    pub lambda: Vec<f64>,
    pub role: Vec<HoleRole>,
    /// Number of demotion rounds until the good set was stable.
    pub rounds: usize,
}

impl Covering {
    pub fn class(&self, j: usize) -> i32 {
        self.class_of[j].expect("hole has no class")
    }

    /// Covering ball B_j = B(εz_j, λ_j r_j).
    pub fn ball(&self, j: usize) -> Ball {
        self.holes[j].scaled(self.lambda[j])
    }

    /// B_{j,θ} = B(εz_j, θλ_j r_j).
    pub fn theta_ball(&self, j: usize) -> Ball {
        self.holes[j].scaled(self.lambda[j] * self.params.theta)
    }

    /// θB_{j,θ} = B(εz_j, θ²λ_j r_j).
    pub fn theta2_ball(&self, j: usize) -> Ball {
        self.holes[j].scaled(self.lambda[j] * self.params.theta * self.params.theta)
    }

    pub fn covering_radius(&self, j: usize) -> f64 {
        self.lambda[j] * self.holes[j].radius
    }

    /// Members of J grouped by class (every class from −3 to k_max present).
    pub fn classes(&self) -> BTreeMap<i32, Vec<usize>> {
        let mut m: BTreeMap<i32, Vec<usize>> = (CLASS_MIN..=self.params.k_max).map(|k| (k, Vec::new())).collect();
        for &j in &self.members {
            m.entry(self.class(j)).or_default().push(j);
        }
        m
    }

    /// D_b = ∪_J B_{j,θ}.
    pub fn bad_region_balls(&self) -> Vec<Ball> {
        self.members.iter().map(|&j| self.theta_ball(j)).collect()
    }

    /// Structured text dump: params header, then `index class lambda` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "epsilon {:.16e}", self.epsilon);
        let _ = writeln!(s, "delta {:.16e}", p.delta);
        let _ = writeln!(s, "theta {:.16e}", p.theta);
        let _ = writeln!(s, "Lambda {:.16e}", p.lambda_max);
        let _ = writeln!(s, "k_max {}", p.k_max);
        let _ = writeln!(s, "holes {}", self.holes.len());
        for (i, role) in self.role.iter().enumerate() {
            match role {
                HoleRole::Good => {
                    let _ = writeln!(s, "{i} good 1");
                }
                HoleRole::Member(k) => {
                    let _ = writeln!(s, "{i} {k} {:.16e}", self.lambda[i]);
                }
                HoleRole::Absorbed => {
                    let _ = writeln!(s, "{i} absorbed 1");
                }
            }
        }
        s
    }
}

/// Good candidates: small holes with no other point within 2ε^{δ/2}.
fn good_candidates(r: &MarkedRealization, params: &CoveringParams) -> Vec<usize> {
    let eta = 2.0 * r.epsilon.powf(params.delta / 2.0);
    let size = r.epsilon.powf(1.0 + 2.0 * params.delta);
    isolated_indices(r, eta).into_iter().filter(|&i| r.hole_radius(i) <= size).collect()
}

/// Good holes lying within ε^{1+δ} of D_b.
fn safety_violators(holes: &[Ball], good: &[usize], dil: &Dilations, theta: f64, layer: f64) -> Vec<usize> {
    if dil.members.is_empty() {
        return Vec::new();
    }
    let d = holes[good.first().copied().unwrap_or(0)].dim();
    let index = BallIndex::from_iter(
        dil.members.iter().zip(&dil.lambda).map(|(&j, &l)| (&holes[j].center[..], theta * l * holes[j].radius)),
        d,
    );
    good.iter()
        .copied()
        .filter(|&g| {
            let hg = &holes[g];
            index.any(&hg.center, hg.radius + layer, |k| {
                let j = dil.members[k];
                let gap = dist(&hg.center, &holes[j].center) - hg.radius - theta * dil.lambda[k] * holes[j].radius;
                gap <= layer
            })
        })
        .collect()
}

/// Full construction of the covering for a realization.
pub fn build_covering(r: &MarkedRealization, params: &CoveringParams) -> Result<Covering> {
    params.validate()?;
    let holes = crate::point_process::holes(r);
    let n = holes.len();
    let layer = r.epsilon.powf(1.0 + params.delta);
    let mut is_good = vec![false; n];
    for g in good_candidates(r, params) {
        is_good[g] = true;
    }
    let mut rounds = 0;
    let (classes, dil) = loop {
        rounds += 1;
        let bad: Vec<(usize, f64)> = (0..n).filter(|&i| !is_good[i]).map(|i| (i, holes[i].radius)).collect();
        let classes = partition_size_classes(&bad, r.epsilon, params.delta, params.k_max)?;
        let dil = select_dilations(&holes, &classes, params, r.epsilon)?;
        let good: Vec<usize> = (0..n).filter(|&i| is_good[i]).collect();
        let demote = safety_violators(&holes, &good, &dil, params.theta, layer);
        if demote.is_empty() {
            break (classes, dil);
        }
        for g in demote {
            is_good[g] = false;
        }
    };
    let mut class_of = vec![None; n];
    for (&k, v) in &classes {
        for &i in v {
            class_of[i] = Some(k);
        }
    }
    let mut lambda = vec![1.0; n];
    let mut role: Vec<HoleRole> = (0..n).map(|i| if is_good[i] { HoleRole::Good } else { HoleRole::Absorbed }).collect();
    for (&j, &l) in dil.members.iter().zip(&dil.lambda) {
        lambda[j] = l;
        role[j] = HoleRole::Member(class_of[j].expect("member without class"));
    }
    Ok(Covering {
        d: r.d,
        epsilon: r.epsilon,
        params: *params,
        holes,
        good: (0..n).filter(|&i| is_good[i]).collect(),
        bad: (0..n).filter(|&i| !is_good[i]).collect(),
        class_of,
        members: dil.members,
        lambda,
        role,
        rounds,
    })
}

/// Good/bad split of the holes (see [`build_covering`]).
pub fn classify_holes(r: &MarkedRealization, params: &CoveringParams) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = build_covering(r, params)?;
    Ok((c.good, c.bad))
}

/// Outcome of one checked property.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
}

impl PropertyCheck {
    fn new(name: &'static str) -> Self {
        PropertyCheck { name, checked: 0, violations: 0, first_violation: None }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(what());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct CoveringReport {
    pub checks: Vec<PropertyCheck>,
}

impl CoveringReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

/// Property names reported by [`verify_covering`].
pub mod property {
    pub const PARTITION: &str = "partition";
    pub const ORDER_CLASSES: &str = "order_classes";
    pub const COVER: &str = "cover";
    pub const DILATION_BOUNDS: &str = "dilation_bounds";
    pub const SEPARATION: &str = "similar_size_apart";
    pub const GOOD_SIZE: &str = "good_size";
    pub const GOOD_SEPARATION: &str = "good_separation";
    pub const SAFETY_LAYER: &str = "safety_layer";
    pub const HOLE_CONTAINMENT: &str = "hole_containment";
}

/// Check every covering invariant with exact predicates.
pub fn verify_covering(c: &Covering) -> CoveringReport {
    use property::*;
    let n = c.holes.len();
    let p = &c.params;
    let eps = c.epsilon;
    let mut checks = Vec::new();

    let mut part = PropertyCheck::new(PARTITION);
    let mut seen = vec![0u8; n];
    for &g in &c.good {
        seen[g] |= 1;
    }
    for &b in &c.bad {
        seen[b] |= 2;
    }
    for (i, s) in seen.iter().enumerate() {
        part.record(*s == 1 || *s == 2, || format!("hole {i} good/bad flags {s}"));
    }
    let mut in_bad = vec![false; n];
    for &b in &c.bad {
        in_bad[b] = true;
    }
    for &j in &c.members {
        part.record(in_bad[j], || format!("covering anchor {j} is not a bad hole"));
    }
    checks.push(part);

    let mut order = PropertyCheck::new(ORDER_CLASSES);
    for &j in &c.members {
        let r = c.holes[j].radius;
        let Some(k) = c.class_of[j] else {
            order.record(false, || format!("member {j} has no class"));
            continue;
        };
        let ok = if k == CLASS_MIN {
            r < class_threshold(eps, p.delta, -2)
        } else {
            (-2..=p.k_max).contains(&k)
                && class_threshold(eps, p.delta, k) <= r
                && r < class_threshold(eps, p.delta, k + 1)
        };
        order.record(ok, || format!("member {j} radius {r:.6e} not in class {k}"));
    }
    checks.push(order);

    let member_index = BallIndex::from_iter(c.members.iter().map(|&j| (&c.holes[j].center[..], c.covering_radius(j))), c.d);
    let mut cover = PropertyCheck::new(COVER);
    for &h in &c.bad {
        let hb = &c.holes[h];
        let ok = member_index.any(&hb.center, hb.radius, |k| {
            let j = c.members[k];
            dist(&hb.center, &c.holes[j].center) + hb.radius <= c.covering_radius(j)
        });
        cover.record(ok, || format!("bad hole {h} not inside any covering ball"));
    }
    checks.push(cover);

    let mut bounds = PropertyCheck::new(DILATION_BOUNDS);
    let rad_bound = p.lambda_max * eps.powf(2.0 * c.d as f64 * p.delta);
    for &j in &c.members {
        let l = c.lambda[j];
        bounds.record((1.0..=p.lambda_max).contains(&l), || format!("lambda_{j} = {l:.6e} outside [1, {}]", p.lambda_max));
        let rr = c.covering_radius(j);
        bounds.record(rr <= rad_bound, || format!("lambda_{j} r_{j} = {rr:.6e} > {rad_bound:.6e}"));
    }
    checks.push(bounds);

    let t2 = p.theta * p.theta;
    let t2_index = BallIndex::from_iter(c.members.iter().map(|&j| (&c.holes[j].center[..], t2 * c.covering_radius(j))), c.d);
    let mut sep = PropertyCheck::new(SEPARATION);
    let mut near = Vec::new();
    for (a, &i) in c.members.iter().enumerate() {
        let ri = t2 * c.covering_radius(i);
        t2_index.candidates(&c.holes[i].center, ri, &mut near);
        for &b in &near {
            let j = c.members[b];
            if b <= a || (c.class(i) - c.class(j)).abs() > 1 {
                continue;
            }
            let rj = t2 * c.covering_radius(j);
            let dij = dist(&c.holes[i].center, &c.holes[j].center);
            sep.record(dij > ri + rj, || format!("theta^2 balls of {i} (class {}) and {j} (class {}) intersect", c.class(i), c.class(j)));
        }
    }
    checks.push(sep);

    let mut gsize = PropertyCheck::new(GOOD_SIZE);
    let size = eps.powf(1.0 + 2.0 * p.delta);
    for &g in &c.good {
        let r = c.holes[g].radius;
        gsize.record(r <= size, || format!("good hole {g} radius {r:.6e} > {size:.6e}"));
    }
    checks.push(gsize);

    let mut gsep = PropertyCheck::new(GOOD_SEPARATION);
    let min_sep = 2.0 * eps.powf(1.0 + p.delta / 2.0);
    if !c.good.is_empty() {
        let grid = PointGrid::new(c.good.iter().map(|&g| &c.holes[g].center[..]), c.d, min_sep);
        for (a, &g) in c.good.iter().enumerate() {
            grid.candidates(&c.holes[g].center, min_sep, &mut near);
            let mut ok = true;
            let mut other = 0;
            for &b in &near {
                if b != a && dist(&c.holes[g].center, &c.holes[c.good[b]].center) < min_sep {
                    ok = false;
                    other = c.good[b];
                }
            }
            gsep.record(ok, || format!("good holes {g} and {other} closer than {min_sep:.6e}"));
        }
    }
    checks.push(gsep);

    let mut safety = PropertyCheck::new(SAFETY_LAYER);
    let layer = eps.powf(1.0 + p.delta);
    let theta_index = BallIndex::from_iter(c.members.iter().map(|&j| (&c.holes[j].center[..], p.theta * c.covering_radius(j))), c.d);
    for &g in &c.good {
        let hg = &c.holes[g];
        let mut offender = None;
        theta_index.any(&hg.center, hg.radius + layer, |k| {
            let j = c.members[k];
            let gap = dist(&hg.center, &c.holes[j].center) - hg.radius - p.theta * c.covering_radius(j);
            if gap <= layer {
                offender = Some(j);
                true
            } else {
                false
            }
        });
        safety.record(offender.is_none(), || format!("good hole {g} within {layer:.6e} of D_b ball {}", offender.unwrap_or(0)));
    }
    checks.push(safety);

    let mut contain = PropertyCheck::new(HOLE_CONTAINMENT);
    for &h in &c.bad {
        let hb = &c.holes[h];
        theta_index.candidates(&hb.center, hb.radius, &mut near);
        let mut lowest_cut: Option<i32> = None;
        let mut lowest_cover: Option<i32> = None;
        for &k in &near {
            let j = c.members[k];
            let dj = dist(&hb.center, &c.holes[j].center);
            let kj = c.class(j);
            if dj + hb.radius <= c.covering_radius(j) {
                lowest_cover = Some(lowest_cover.map_or(kj, |m| m.min(kj)));
            } else if dj <= hb.radius + p.theta * c.covering_radius(j) {
                lowest_cut = Some(lowest_cut.map_or(kj, |m| m.min(kj)));
            }
        }
        let ok = match (lowest_cut, lowest_cover) {
            (None, Some(_)) => true,
            (Some(cut), Some(cov)) => cov <= cut,
            (_, None) => false,
        };
        contain.record(ok, || format!("bad hole {h} is cut by an annulus of class {lowest_cut:?} and not re-covered"));
    }
    checks.push(contain);

    CoveringReport { checks }
}
