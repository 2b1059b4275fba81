//! Property tests over random geometry: sampling, coverings, region algebra
//! and capacity bounds.

use proptest::prelude::*;

use perfolab_core::capacity::{ball_capacity, covering_cap_upper, subadditive_cap_upper};
use perfolab_core::chain::Chain;
use perfolab_core::covering::{build_covering, verify_covering, CoveringParams, HoleRole};
use perfolab_core::exec;
use perfolab_core::geometry::Ball;
use perfolab_core::point_process::{
    count, read_realization, sample_realization, thin, write_realization, CountRegion, DomainSpec, RadiusLaw,
};
use perfolab_core::region::Region;

fn ball_strategy() -> impl Strategy<Value = Ball> {
    (prop::array::uniform3(-1.0..1.0f64), 0.05..0.8f64).prop_map(|(c, r)| Ball::new(c.to_vec(), r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_algebra_matches_pointwise_logic(
        a in ball_strategy(),
        b in ball_strategy(),
        c in ball_strategy(),
        xs in prop::collection::vec(prop::array::uniform3(-1.5..1.5f64), 50),
    ) {
        let ra = Region::ball(a.clone());
        let rb = Region::ball(b.clone());
        let rc = Region::ball(c.clone());
        let u = Region::union(3, vec![ra.clone(), rb.clone()]);
        let i = Region::intersection(u.clone(), rc.clone());
        let dif = Region::difference(u.clone(), rc.clone());
        let ann = Region::annuli(3, vec![(a.scaled(1.5), a.clone())]);
        for x in &xs {
            let (ia, ib, ic) = (a.contains(x), b.contains(x), c.contains(x));
            prop_assert_eq!(u.contains(x), ia || ib);
            prop_assert_eq!(i.contains(x), (ia || ib) && ic);
            prop_assert_eq!(dif.contains(x), (ia || ib) && !ic);
            // Intersection and difference split the union.
            prop_assert_eq!(u.contains(x), i.contains(x) ^ dif.contains(x));
            prop_assert_eq!(ann.contains(x), a.scaled(1.5).contains(x) && !ia);
        }
    }

    #[test]
    fn subadditive_bound_dominates_each_ball(balls in prop::collection::vec(ball_strategy(), 1..8)) {
        let bound = subadditive_cap_upper(&balls, 3).unwrap();
        prop_assert_eq!(bound.components, balls.len());
        for b in &balls {
            prop_assert!(bound.value >= ball_capacity(b.radius, 3).unwrap());
        }
        let sum: f64 = balls.iter().map(|b| 4.0 * std::f64::consts::PI * b.radius).sum();
        prop_assert!((bound.value - sum).abs() <= 1e-12 * sum);
    }

    #[test]
    fn realizations_round_trip_through_text(seed in 0u64..1000, eps in 0.15..0.5f64, lambda in 0.0..20.0f64) {
        let law = RadiusLaw::pareto(1.0, 2.5, 0.4);
        let r = sample_realization(DomainSpec::unit_cube(), 3, lambda, law, eps, seed).unwrap();
        let again = sample_realization(DomainSpec::unit_cube(), 3, lambda, law, eps, seed).unwrap();
        prop_assert_eq!(&r, &again);
        let back = read_realization(&write_realization(&r, &["note".into()])).unwrap();
        prop_assert_eq!(&back, &r);
        for i in 0..r.len() {
            prop_assert!(DomainSpec::unit_cube().contains(&r.hole_center(i)));
            prop_assert!(r.points[i].rho >= 1.0);
        }
        prop_assert_eq!(count(&r, &CountRegion::Domain(DomainSpec::unit_cube())), r.len());
    }

    #[test]
    fn thinning_keeps_exactly_the_isolated_points(seed in 0u64..500, eta in 0.2..3.0f64) {
        let r = sample_realization(DomainSpec::unit_cube(), 3, 5.0, RadiusLaw::constant(1.0), 0.3, seed).unwrap();
        let t = thin(&r, eta);
        for p in &r.points {
            let isolated = r.points.iter().filter(|q| *q != p).all(|q| {
                perfolab_core::geometry::dist(&p.z, &q.z) >= eta
            });
            prop_assert_eq!(isolated, t.points.contains(p));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn coverings_pass_every_exact_check(seed in 0u64..10_000, eps in prop::sample::select(vec![0.3, 0.25, 0.2])) {
        let law = RadiusLaw::pareto(1.0, 2.5, 0.4);
        let r = sample_realization(DomainSpec::unit_cube(), 3, 10.0, law, eps, seed).unwrap();
        let c = build_covering(&r, &CoveringParams::default_for(3)).unwrap();
        let report = verify_covering(&c);
        prop_assert!(report.passed(), "{:?}", report.checks.iter().filter(|k| !k.passed()).collect::<Vec<_>>());
        // Every hole is good or sits inside a covering ball.
        for (i, hole) in c.holes.iter().enumerate() {
            match c.role[i] {
                HoleRole::Good => prop_assert!(c.good.contains(&i)),
                _ => prop_assert!(c.members.iter().any(|&j| c.ball(j).contains_ball(hole))),
            }
        }
        // The covered bad set lies in E^ε.
        let chain = Chain::build(&c);
        for &j in &c.members {
            prop_assert!(chain.e_eps().contains(&c.ball(j).center));
        }
        prop_assert!(covering_cap_upper(&c).unwrap().value >= 0.0);
    }
}

#[test]
fn poisson_counts_have_the_right_mean_and_variance() {
    // λ|D|/ε³ = 8 · 27 = 216 expected points; 400 seeds.
    let counts: Vec<f64> = (0..400)
        .map(|s| sample_realization(DomainSpec::unit_cube(), 3, 8.0, RadiusLaw::constant(1.0), 1.0 / 3.0, s).unwrap().len() as f64)
        .collect();
    let m = counts.iter().sum::<f64>() / counts.len() as f64;
    let v = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    let expected = 8.0 * 27.0;
    // stderr of the mean is sqrt(216/400) ≈ 0.73.
    assert!((m - expected).abs() < 4.0 * (expected / 400.0).sqrt(), "mean {m}");
    assert!((v / expected - 1.0).abs() < 0.3, "variance {v}");
}

#[test]
fn zero_intensity_gives_no_holes() {
    let r = sample_realization(DomainSpec::unit_cube(), 3, 0.0, RadiusLaw::constant(1.0), 0.1, 3).unwrap();
    assert!(r.is_empty());
    let c = build_covering(&r, &CoveringParams::default_for(3)).unwrap();
    assert!(c.members.is_empty() && c.good.is_empty());
    assert_eq!(covering_cap_upper(&c).unwrap().value, 0.0);
}

#[test]
fn blocked_sums_do_not_depend_on_scheduling() {
    let n = 100_003;
    let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
    let a = exec::block_sum(n, f);
    let b = exec::block_sum(n, f);
    assert_eq!(a.to_bits(), b.to_bits());
    let seq: f64 = (0..n).map(f).sum();
    assert!((a - seq).abs() < 1e-12);
}
