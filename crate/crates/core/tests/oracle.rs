mod common;

use common::{brute_force_criterion, tiny_sample};
use convex_hazard::{check, fit, LifetimeSample, PiecewiseLinearHazard, SolverConfig};
use std::f64::consts::SQRT_2;

#[test]
fn two_point_closed_form() {
    let s = LifetimeSample::new(vec![1.0, 2.0]).unwrap();
    let r = fit(&s, &SolverConfig::default()).unwrap();
    let h = &r.hazard;
    assert!(h.intercept().abs() < 1e-6);
    assert!(h.dec_knots().iter().all(|k| k.weight < 1e-9));
    assert_eq!(h.inc_knots().len(), 1);
    assert!((h.inc_knots()[0].location - (1.0 - 1.0 / SQRT_2)).abs() < 1e-6);
    assert!((h.inc_knots()[0].weight - (2.0 - SQRT_2)).abs() < 1e-6);
    assert!((r.criterion - 0.9406868).abs() < 1e-6);
    assert!((brute_force_criterion(&[1.0, 2.0]) - (0.5 - 0.5 * (SQRT_2 - 1.0).ln())).abs() < 1e-10);
    assert!(check(h, &s, 1e-8).unwrap().passed);
}

#[test]
fn single_observation_gives_zero_hazard() {
    let s = LifetimeSample::new(vec![7.0]).unwrap();
    let r = fit(&s, &SolverConfig::default()).unwrap();
    assert_eq!(r.hazard.eval(3.0).unwrap(), 0.0);
    assert_eq!(r.criterion, 0.0);
}

#[test]
fn brute_force_agrees_on_tiny_samples() {
    for seed in 0..25u64 {
        let n = 2 + (seed % 2) as usize;
        let xs = tiny_sample(n, seed);
        let s = LifetimeSample::new(xs.clone()).unwrap();
        let r = fit(&s, &SolverConfig::default()).unwrap();
        let oracle = brute_force_criterion(&xs);
        assert!(
            (r.criterion - oracle).abs() < 1e-7,
            "seed {seed} {xs:?}: solver {} oracle {oracle}",
            r.criterion
        );
    }
}

#[test]
fn different_starts_reach_the_same_hazard() {
    let truth = convex_hazard::HsDistribution::new(1.0, 0.3).unwrap();
    let config = SolverConfig::default();
    for seed in 0..10u64 {
        let s = truth.sample(40 + 10 * seed as usize, seed).unwrap();
        let a = fit(&s, &config).unwrap();
        let end = s.max();
        let start =
            PiecewiseLinearHazard::from_hinges(0.5, &[(0.3 * end, 2.0)], &[(0.7 * end, 1.0)], end)
                .unwrap();
        let b = convex_hazard::solver::fit_from(&s, &config, &start).unwrap();
        for &x in &s.values()[..s.len() - 1] {
            let (u, v) = (a.hazard.eval(x).unwrap(), b.hazard.eval(x).unwrap());
            assert!(
                (u - v).abs() < 1e-6 * (1.0 + u.abs()),
                "seed {seed} at {x}: {u} vs {v}"
            );
        }
    }
}
