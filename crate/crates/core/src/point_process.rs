//! Marked Poisson process of holes.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{ball_volume, Aabb, Ball, PointGrid};
use crate::rng::{stream, STREAM_MARKS, STREAM_POINTS};

/// Bounded domain centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainSpec {
    Cube { half_width: f64 },
    Ball { radius: f64 },
}

impl DomainSpec {
    pub fn unit_cube() -> Self {
        DomainSpec::Cube { half_width: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let size = match *self {
            DomainSpec::Cube { half_width } => half_width,
            DomainSpec::Ball { radius } => radius,
        };
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::Config(format!("domain size must be positive, got {size}")));
        }
        Ok(())
    }

    pub fn volume(&self, d: usize) -> f64 {
        match *self {
            DomainSpec::Cube { half_width } => (2.0 * half_width).powi(d as i32),
            DomainSpec::Ball { radius } => ball_volume(d, radius),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) >= 0.0
    }

    /// Signed distance to the boundary, positive inside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match *self {
            DomainSpec::Cube { half_width } => {
                half_width - x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }
            DomainSpec::Ball { radius } => radius - x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn bbox(&self, d: usize) -> Aabb {
        let s = match *self {
            DomainSpec::Cube { half_width } => half_width,
            DomainSpec::Ball { radius } => radius,
        };
        Aabb::cube(d, s)
    }

    pub fn scaled(&self, factor: f64) -> DomainSpec {
        match *self {
            DomainSpec::Cube { half_width } => DomainSpec::Cube { half_width: half_width * factor },
            DomainSpec::Ball { radius } => DomainSpec::Ball { radius: radius * factor },
        }
    }

    /// Uniform point by rejection from the bounding box.
    pub fn sample<R: Rng>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        let bb = self.bbox(d);
        loop {
            let x: Vec<f64> = (0..d).map(|k| rng.random_range(bb.min[k]..bb.max[k])).collect();
            if self.contains(&x) {
                return x;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusFamily {
    Pareto { min_scale: f64, alpha: f64 },
    Constant { rho0: f64 },
    Uniform { a: f64, b: f64 },
}

/// Distribution of the radius marks together with the moment margin β.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusLaw {
    pub family: RadiusFamily,
    pub beta: f64,
}

impl Default for RadiusLaw {
    fn default() -> Self {
        RadiusLaw {
            family: RadiusFamily::Pareto { min_scale: 1.0, alpha: 2.5 },
            beta: 0.4,
        }
    }
}

impl RadiusLaw {
    pub fn constant(rho0: f64) -> Self {
        RadiusLaw { family: RadiusFamily::Constant { rho0 }, beta: 1.0 }
    }

    pub fn pareto(min_scale: f64, alpha: f64, beta: f64) -> Self {
        RadiusLaw { family: RadiusFamily::Pareto { min_scale, alpha }, beta }
    }

    /// Checks parameter ranges and that the (d−2)+β moment is finite.
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        match self.family {
            RadiusFamily::Pareto { min_scale, alpha } => {
                if !(min_scale > 0.0) {
                    return Err(Error::Config("Pareto min_scale must be positive".into()));
                }
                let need = (d as f64 - 2.0) + self.beta;
                if !(alpha > need) {
                    return Err(Error::Config(format!(
                        "Pareto tail exponent {alpha} must exceed d-2+beta = {need}"
                    )));
                }
            }
            RadiusFamily::Constant { rho0 } => {
                if !(rho0 > 0.0) {
                    return Err(Error::Config("constant radius must be positive".into()));
                }
            }
            RadiusFamily::Uniform { a, b } => {
                if !(a > 0.0 && b > a) {
                    return Err(Error::Config(format!("uniform radius law needs 0 < a < b, got ({a}, {b})")));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.family {
            RadiusFamily::Pareto { min_scale, alpha } => {
                // 1 - U lies in (0, 1], so the power is finite.
                let u: f64 = 1.0 - rng.random::<f64>();
                min_scale * u.powf(-1.0 / alpha)
            }
            RadiusFamily::Constant { rho0 } => rho0,
            RadiusFamily::Uniform { a, b } => rng.random_range(a..b),
        }
    }

    /// ⟨ρ^p⟩ in closed form.
    pub fn moment(&self, p: f64) -> Result<f64> {
        match self.family {
            RadiusFamily::Pareto { min_scale, alpha } => {
                if p >= alpha {
                    return Err(Error::MomentDivergence { order: p });
                }
                Ok(alpha * min_scale.powf(p) / (alpha - p))
            }
            RadiusFamily::Constant { rho0 } => Ok(rho0.powf(p)),
            RadiusFamily::Uniform { a, b } => {
                if (p + 1.0).abs() < 1e-300 {
                    return Ok((b / a).ln() / (b - a));
                }
                Ok((b.powf(p + 1.0) - a.powf(p + 1.0)) / ((p + 1.0) * (b - a)))
            }
        }
    }
}

/// ⟨ρ^p⟩ under the law.
pub fn empirical_moment(law: &RadiusLaw, p: f64) -> Result<f64> {
    law.moment(p)
}

/// Scaling exponent d/(d−2) that maps marks to physical hole radii.
pub fn radius_scale(epsilon: f64, d: usize) -> f64 {
    epsilon.powf(d as f64 / (d as f64 - 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPoint {
    /// Position in the blown-up domain (1/ε)D.
    pub z: Vec<f64>,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkedRealization {
    pub d: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub domain: DomainSpec,
    pub law: RadiusLaw,
    pub points: Vec<MarkedPoint>,
}

impl MarkedRealization {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical radius of hole i.
    pub fn hole_radius(&self, i: usize) -> f64 {
        radius_scale(self.epsilon, self.d) * self.points[i].rho
    }

    pub fn hole_center(&self, i: usize) -> Vec<f64> {
        self.points[i].z.iter().map(|v| v * self.epsilon).collect()
    }

    pub fn hole(&self, i: usize) -> Ball {
        Ball::new(self.hole_center(i), self.hole_radius(i))
    }
}

fn check_dimension(d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    Ok(())
}

/// Sample N ~ Poisson(λ|D|/ε^d) points uniformly in (1/ε)D with i.i.d. marks.
pub fn sample_realization(
    domain: DomainSpec,
    d: usize,
    lambda: f64,
    law: RadiusLaw,
    epsilon: f64,
    seed: u64,
) -> Result<MarkedRealization> {
    check_dimension(d)?;
    domain.validate()?;
    law.validate(d)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("intensity must be non-negative, got {lambda}")));
    }
    let mean = lambda * domain.volume(d) / epsilon.powi(d as i32);
    let mut prng = stream(seed, STREAM_POINTS);
    let n = if mean > 0.0 {
        let dist = Poisson::new(mean).map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?;
        dist.sample(&mut prng) as usize
    } else {
        0
    };
    let blown = domain.scaled(1.0 / epsilon);
    let mut mrng = stream(seed, STREAM_MARKS);
    let points = (0..n)
        .map(|_| MarkedPoint { z: blown.sample(d, &mut prng), rho: law.sample(&mut mrng) })
        .collect();
    Ok(MarkedRealization { d, epsilon, lambda, seed, domain, law, points })
}

/// One ball B(εz_j, ε^{d/(d−2)}ρ_j) per point.
pub fn holes(r: &MarkedRealization) -> Vec<Ball> {
    (0..r.len()).map(|i| r.hole(i)).collect()
}

/// Indices of points whose nearest neighbor (in z-units) is at distance ≥ η.
pub fn isolated_indices(r: &MarkedRealization, eta: f64) -> Vec<usize> {
    if r.is_empty() {
        return Vec::new();
    }
    let grid = PointGrid::new(r.points.iter().map(|p| &p.z[..]), r.d, eta);
    let mut cand = Vec::new();
    let eta2 = eta * eta;
    (0..r.len())
        .filter(|&i| {
            grid.candidates(&r.points[i].z, eta, &mut cand);
            cand.iter().all(|&j| {
                j == i || crate::geometry::dist2(&r.points[i].z, &r.points[j].z) >= eta2
            })
        })
        .collect()
}

/// Keep exactly the points whose nearest neighbor is at distance ≥ η.
pub fn thin(r: &MarkedRealization, eta: f64) -> MarkedRealization {
    let keep = isolated_indices(r, eta);
    MarkedRealization {
        points: keep.into_iter().map(|i| r.points[i].clone()).collect(),
        ..r.clone()
    }
}

/// Query region for [`count`].
#[derive(Clone, Debug)]
pub enum CountRegion {
    Domain(DomainSpec),
    Ball(Ball),
    Box(Aabb),
}

/// Number of points with εz ∈ E.
pub fn count(r: &MarkedRealization, region: &CountRegion) -> usize {
    let mut x = vec![0.0; r.d];
    r.points
        .iter()
        .filter(|p| {
            for (xi, zi) in x.iter_mut().zip(&p.z) {
                *xi = zi * r.epsilon;
            }
            match region {
                CountRegion::Domain(dom) => dom.contains(&x),
                CountRegion::Ball(b) => b.contains(&x),
                CountRegion::Box(bb) => bb.contains(&x),
            }
        })
        .count()
}

impl RadiusLaw {
    pub fn to_text(&self) -> String {
        match self.family {
            RadiusFamily::Pareto { min_scale, alpha } => {
                format!("pareto {min_scale:e} {alpha:e} beta {:e}", self.beta)
            }
            RadiusFamily::Constant { rho0 } => format!("constant {rho0:e} beta {:e}", self.beta),
            RadiusFamily::Uniform { a, b } => format!("uniform {a:e} {b:e} beta {:e}", self.beta),
        }
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let tok: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            tok.get(i)
                .ok_or_else(|| Error::Parse(format!("radius law truncated: {s:?}")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("radius law {s:?}: {e}")))
        };
        let (family, bi) = match tok.first().copied() {
            Some("pareto") => (RadiusFamily::Pareto { min_scale: num(1)?, alpha: num(2)? }, 3),
            Some("constant") => (RadiusFamily::Constant { rho0: num(1)? }, 2),
            Some("uniform") => (RadiusFamily::Uniform { a: num(1)?, b: num(2)? }, 3),
            _ => return Err(Error::Parse(format!("unknown radius law {s:?}"))),
        };
        if tok.get(bi) != Some(&"beta") {
            return Err(Error::Parse(format!("radius law missing beta: {s:?}")));
        }
        Ok(RadiusLaw { family, beta: num(bi + 1)? })
    }
}

impl DomainSpec {
    pub fn to_text(&self) -> String {
        match *self {
            DomainSpec::Cube { half_width } => format!("cube {half_width:e}"),
            DomainSpec::Ball { radius } => format!("ball {radius:e}"),
        }
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let kind = it.next();
        let v: f64 = it
            .next()
            .ok_or_else(|| Error::Parse(format!("domain truncated: {s:?}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("domain {s:?}: {e}")))?;
        match kind {
            Some("cube") => Ok(DomainSpec::Cube { half_width: v }),
            Some("ball") => Ok(DomainSpec::Ball { radius: v }),
            _ => Err(Error::Parse(format!("unknown domain {s:?}"))),
        }
    }
}

/// Line-based text format: `key value` header lines, then one row per point
/// (`z_1 … z_d rho`, 17 significant digits). Lines starting with `#` are
/// comments and are passed through from `extra_comments`.
pub fn write_realization(r: &MarkedRealization, extra_comments: &[String]) -> String {
    let mut s = String::new();
    for c in extra_comments {
        let _ = writeln!(s, "# {c}");
    }
    let _ = writeln!(s, "d {}", r.d);
    let _ = writeln!(s, "epsilon {:.16e}", r.epsilon);
    let _ = writeln!(s, "lambda {:.16e}", r.lambda);
    let _ = writeln!(s, "seed {}", r.seed);
    let _ = writeln!(s, "domain {}", r.domain.to_text());
    let _ = writeln!(s, "law {}", r.law.to_text());
    let _ = writeln!(s, "points {}", r.len());
    for p in &r.points {
        for z in &p.z {
            let _ = write!(s, "{z:.16e} ");
        }
        let _ = writeln!(s, "{:.16e}", p.rho);
    }
    s
}

pub fn read_realization(text: &str) -> Result<MarkedRealization> {
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing header {key}")))?;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| Error::Parse(format!("expected header {key}, got {line:?}")))?;
        Ok(rest.trim().to_string())
    };
    let pf = |s: String| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let d: usize = header("d")?.parse().map_err(|e| Error::Parse(format!("d: {e}")))?;
    let epsilon = pf(header("epsilon")?)?;
    let lambda = pf(header("lambda")?)?;
    let seed: u64 = header("seed")?.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?;
    let domain = DomainSpec::from_text(&header("domain")?)?;
    let law = RadiusLaw::from_text(&header("law")?)?;
    let n: usize = header("points")?.parse().map_err(|e| Error::Parse(format!("points: {e}")))?;
    let mut points = Vec::with_capacity(n);
    for line in lines {
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != d + 1 {
            return Err(Error::Parse(format!("row has {} values, expected {}", vals.len(), d + 1)));
        }
        points.push(MarkedPoint { z: vals[..d].to_vec(), rho: vals[d] });
    }
    if points.len() != n {
        return Err(Error::Parse(format!("expected {n} points, found {}", points.len())));
    }
    Ok(MarkedRealization { d, epsilon, lambda, seed, domain, law, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(z: &[f64], rho: f64) -> MarkedPoint {
        MarkedPoint { z: z.to_vec(), rho }
    }

    fn manual(points: Vec<MarkedPoint>, epsilon: f64, d: usize) -> MarkedRealization {
        MarkedRealization {
            d,
            epsilon,
            lambda: 1.0,
            seed: 0,
            domain: DomainSpec::unit_cube(),
            law: RadiusLaw::constant(1.0),
            points,
        }
    }

    #[test]
    fn hole_radius_formula() {
        let r = manual(vec![pt(&[1.0, 0.0, 0.0], 2.0)], 0.1, 3);
        let h = holes(&r);
        assert_relative_eq!(h[0].center[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(h[0].radius, 0.002, max_relative = 1e-12);
        let r4 = manual(vec![pt(&[0.0; 4], 1.0)], 0.1, 4);
        assert_relative_eq!(holes(&r4)[0].radius, 0.01, max_relative = 1e-12);
        assert!(holes(&manual(vec![], 0.1, 3)).is_empty());
    }

    #[test]
    fn zero_intensity_is_empty() {
        let r = sample_realization(DomainSpec::unit_cube(), 3, 0.0, RadiusLaw::default(), 0.1, 3).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn moments() {
        assert_eq!(RadiusLaw::constant(2.0).moment(1.0).unwrap(), 2.0);
        assert_relative_eq!(RadiusLaw::pareto(1.0, 3.0, 0.4).moment(1.0).unwrap(), 1.5, epsilon = 1e-14);
        assert!(matches!(
            RadiusLaw::pareto(1.0, 2.5, 0.4).moment(3.0),
            Err(Error::MomentDivergence { .. })
        ));
        let u = RadiusLaw { family: RadiusFamily::Uniform { a: 1.0, b: 3.0 }, beta: 1.0 };
        assert_relative_eq!(u.moment(1.0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn law_validation() {
        assert!(RadiusLaw::pareto(1.0, 1.3, 0.4).validate(3).is_err());
        assert!(RadiusLaw::pareto(1.0, 1.5, 0.4).validate(3).is_ok());
        assert!(RadiusLaw::pareto(1.0, 2.5, 0.4).validate(4).is_ok());
        assert!(RadiusLaw::pareto(1.0, 2.4, 0.4).validate(4).is_err());
    }

    #[test]
    fn thin_examples() {
        let eta = 1.0;
        let r = manual(vec![pt(&[0.0, 0.0, 0.0], 1.0), pt(&[0.5, 0.0, 0.0], 1.0)], 0.1, 3);
        assert!(thin(&r, eta).is_empty());
        let r = manual(vec![pt(&[0.0, 0.0, 0.0], 1.0), pt(&[2.0, 0.0, 0.0], 1.0)], 0.1, 3);
        assert_eq!(thin(&r, eta).len(), 2);
    }

    #[test]
    fn text_round_trip() {
        let r = sample_realization(DomainSpec::unit_cube(), 3, 5.0, RadiusLaw::default(), 0.5, 11).unwrap();
        let s = write_realization(&r, &["config_hash=abc".into()]);
        let back = read_realization(&s).unwrap();
        assert_eq!(back, r);
    }
}
