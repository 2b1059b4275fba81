//! Boolean expression trees over closed balls with exact membership and
//! Monte Carlo volumes.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{Aabb, Ball, BallIndex};
use crate::rng::{mix, stream, StreamRng};

/// Union of many balls behind a spatial index.
#[derive(Debug)]
pub struct BallSet {
    balls: Vec<Ball>,
    index: BallIndex,
}

impl BallSet {
    pub fn new(balls: Vec<Ball>) -> Self {
        let index = BallIndex::new(&balls);
        BallSet { balls, index }
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.index.any(x, 0.0, |i| self.balls[i].contains(x))
    }

    /// Index of some ball containing `x`.
    pub fn find(&self, x: &[f64]) -> Option<usize> {
        let mut hit = None;
        self.index.any(x, 0.0, |i| {
            if self.balls[i].contains(x) {
                hit = Some(i);
                true
            } else {
                false
            }
        });
        hit
    }
}

/// Union of annuli `outer_i ∖ inner_i` (closed outer, open-complement of the
/// closed inner ball; concentric or not).
#[derive(Debug)]
pub struct AnnulusSet {
    outer: Vec<Ball>,
    inner: Vec<Ball>,
    index: BallIndex,
}

impl AnnulusSet {
    pub fn new(pairs: Vec<(Ball, Ball)>) -> Self {
        let (outer, inner): (Vec<Ball>, Vec<Ball>) = pairs.into_iter().unzip();
        let index = BallIndex::new(&outer);
        AnnulusSet { outer, inner, index }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.index.any(x, 0.0, |i| self.outer[i].contains(x) && !self.inner[i].contains(x))
    }
}

#[derive(Debug)]
enum Node {
    Empty,
    Ball(Ball),
    BallSet(BallSet),
    AnnulusSet(AnnulusSet),
    Union(Vec<Region>),
    Intersection(Region, Region),
    Difference(Region, Region),
}

/// Immutable region; cloning shares the expression tree.
#[derive(Clone, Debug)]
pub struct Region {
    node: Arc<Node>,
    bbox: Aabb,
}

impl Region {
    pub fn empty(d: usize) -> Region {
        Region { node: Arc::new(Node::Empty), bbox: Aabb::empty(d) }
    }

    pub fn ball(b: Ball) -> Region {
        let bbox = b.bbox();
        Region { node: Arc::new(Node::Ball(b)), bbox }
    }

    pub fn balls(d: usize, balls: Vec<Ball>) -> Region {
        if balls.is_empty() {
            return Region::empty(d);
        }
        let bbox = balls.iter().fold(Aabb::empty(d), |acc, b| acc.union(&b.bbox()));
        Region { node: Arc::new(Node::BallSet(BallSet::new(balls))), bbox }
    }

    /// Union of `outer ∖ inner` pairs.
    pub fn annuli(d: usize, pairs: Vec<(Ball, Ball)>) -> Region {
        if pairs.is_empty() {
            return Region::empty(d);
        }
        let bbox = pairs.iter().fold(Aabb::empty(d), |acc, (o, _)| acc.union(&o.bbox()));
        Region { node: Arc::new(Node::AnnulusSet(AnnulusSet::new(pairs))), bbox }
    }

    pub fn union(d: usize, parts: Vec<Region>) -> Region {
        let parts: Vec<Region> = parts.into_iter().filter(|r| !r.is_empty()).collect();
        match parts.len() {
            0 => Region::empty(d),
            1 => parts.into_iter().next().expect("one part"),
            _ => {
                let bbox = parts.iter().fold(Aabb::empty(d), |acc, r| acc.union(&r.bbox));
                Region { node: Arc::new(Node::Union(parts)), bbox }
            }
        }
    }

    pub fn intersection(a: Region, b: Region) -> Region {
        let bbox = a.bbox.intersection(&b.bbox);
        if a.is_empty() || b.is_empty() || bbox.is_empty() {
            return Region::empty(a.dim());
        }
        Region { node: Arc::new(Node::Intersection(a, b)), bbox }
    }

    pub fn difference(a: Region, b: Region) -> Region {
        if a.is_empty() {
            return a;
        }
        if b.is_empty() || b.bbox.intersection(&a.bbox).is_empty() {
            return a;
        }
        let bbox = a.bbox.clone();
        Region { node: Arc::new(Node::Difference(a, b)), bbox }
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    /// Structurally empty (no leaves); a non-trivial tree may still denote
    /// the empty set.
    pub fn is_empty(&self) -> bool {
        matches!(*self.node, Node::Empty)
    }

    pub fn ptr_eq(&self, other: &Region) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    /// Exact membership (closed balls).
    pub fn contains(&self, x: &[f64]) -> bool {
        if !self.bbox.contains(x) {
            return false;
        }
        match &*self.node {
            Node::Empty => false,
            Node::Ball(b) => b.contains(x),
            Node::BallSet(s) => s.contains(x),
            Node::AnnulusSet(s) => s.contains(x),
            Node::Union(parts) => parts.iter().any(|r| r.contains(x)),
            Node::Intersection(a, b) => a.contains(x) && b.contains(x),
            Node::Difference(a, b) => a.contains(x) && !b.contains(x),
        }
    }
}

/// Hit-or-miss volume estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Samples per independent random stream in the Monte Carlo helpers.
pub const MC_BLOCK: usize = 8192;

/// Random stream for Monte Carlo block `b` of a run keyed by `seed`.
pub fn block_rng(seed: u64, b: usize) -> StreamRng {
    stream(mix(seed, 0x4d43), b as u64)
}

/// Hit counts per block, merged in block order.
fn count_hits<F>(samples: usize, seed: u64, draw_and_test: F) -> usize
where
    F: Fn(&mut StreamRng) -> bool + Sync + Send,
{
    let blocks = samples.div_ceil(MC_BLOCK);
    exec::map_indices(blocks, |b| {
        let mut rng = block_rng(seed, b);
        let n = MC_BLOCK.min(samples - b * MC_BLOCK);
        (0..n).filter(|_| draw_and_test(&mut rng)).count()
    })
    .into_iter()
    .sum()
}

pub fn sample_in_box<R: Rng>(rng: &mut R, bb: &Aabb, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = bb.min[k] + (bb.max[k] - bb.min[k]) * rng.random::<f64>();
    }
}

/// Uniform point in a ball.
pub fn sample_in_ball<R: Rng>(rng: &mut R, b: &Ball, out: &mut [f64]) {
    let d = b.dim();
    loop {
        let mut n2 = 0.0;
        for o in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *o = g;
            n2 += g * g;
        }
        if n2 > 0.0 {
            let s = b.radius * rng.random::<f64>().powf(1.0 / d as f64) / n2.sqrt();
            for (o, c) in out.iter_mut().zip(&b.center) {
                *o = c + *o * s;
            }
            return;
        }
    }
}

/// Unbiased hit-or-miss estimate of |region| over its bounding box.
pub fn mc_volume(region: &Region, samples: usize, seed: u64) -> Result<VolumeEstimate> {
    if samples < 1000 {
        return Err(Error::Config(format!("mc_volume needs at least 1000 samples, got {samples}")));
    }
    let bb = region.bbox();
    if region.is_empty() || bb.is_empty() {
        return Ok(VolumeEstimate { value: 0.0, stderr: 0.0, samples, seed });
    }
    let vbox = bb.volume();
    if !(vbox > 0.0 && vbox.is_finite()) {
        return Err(Error::Numeric(format!("degenerate bounding box (volume {vbox:e})")));
    }
    let d = region.dim();
    if d > 8 {
        return Err(Error::UnsupportedDimension(d));
    }
    let hits = count_hits(samples, seed, |rng| {
        let mut x = [0.0f64; 8];
        sample_in_box(rng, bb, &mut x[..d]);
        region.contains(&x[..d])
    });
    let p = hits as f64 / samples as f64;
    Ok(VolumeEstimate {
        value: vbox * p,
        stderr: vbox * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        seed,
    })
}

/// Uniform sampler on a union of balls: pick a ball with probability
/// proportional to its volume, draw uniformly inside it and accept with
/// probability 1/(number of balls containing the point).
#[derive(Debug)]
pub struct UnionSampler {
    balls: Vec<Ball>,
    cumulative: Vec<f64>,
    index: BallIndex,
}

impl UnionSampler {
    pub fn new(balls: Vec<Ball>) -> Self {
        let mut acc = 0.0;
        let cumulative = balls
            .iter()
            .map(|b| {
                acc += b.volume();
                acc
            })
            .collect();
        let index = BallIndex::new(&balls);
        UnionSampler { balls, cumulative, index }
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Sum of the ball volumes (an upper bound on the union volume).
    pub fn total_volume(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn multiplicity(&self, x: &[f64]) -> usize {
        let mut m = 0;
        self.index.any(x, 0.0, |i| {
            if self.balls[i].contains(x) {
                m += 1;
            }
            false
        });
        m
    }

    /// Draw one point; returns the number of proposals used.
    pub fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        assert!(!self.balls.is_empty(), "sampling from an empty union");
        let total = self.total_volume();
        let mut tries = 0;
        loop {
            tries += 1;
            let u = rng.random::<f64>() * total;
            let i = self.cumulative.partition_point(|&c| c <= u).min(self.balls.len() - 1);
            sample_in_ball(rng, &self.balls[i], out);
            let m = self.multiplicity(out).max(1);
            if m == 1 || rng.random::<f64>() * (m as f64) < 1.0 {
                return tries;
            }
        }
    }
}
