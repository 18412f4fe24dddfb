//! Frozen Monte Carlo outputs of the built-in toy profile. Any change here
//! means the simulated system changed, not just its speed.

use sparse_ura::config::SystemConfig;
use sparse_ura::harness::{Harness, Scenario};

fn harness(sets: &[&str]) -> Harness {
    let mut cfg = SystemConfig::profile("toy-ka16").unwrap();
    for s in sets {
        cfg.set(s).unwrap();
    }
    Harness::new(Scenario::new(cfg).unwrap(), 1).unwrap()
}

#[test]
fn toy_ka16_at_8_db() {
    let p = harness(&[]).estimate_pupe(8.0, 1000).unwrap();
    assert_eq!((p.missed_total, p.users_per_trial), (54, 16));
    assert_eq!(p.pupe, 0.003375);
}

#[test]
fn toy_ka16_bisection() {
    let res = harness(&[]).find_min_ebn0(0.05, (1.0, 3.0), 50).unwrap();
    let trace: Vec<(f64, usize)> = res
        .points
        .iter()
        .map(|p| (p.eb_n0_db, p.missed_total))
        .collect();
    assert_eq!(
        trace,
        [
            (1.0, 82),
            (1.5, 46),
            (1.5625, 43),
            (1.625, 35),
            (1.75, 29),
            (2.0, 21),
            (3.0, 6)
        ]
    );
    assert_eq!(res.min_eb_n0_db, Some(1.625));
    assert!(res.crossing_found);
}

#[test]
fn toy_ka16_power_division_plan_and_sweep() {
    let res = harness(&["pd_enabled=true"])
        .sweep(&[2.0, 4.0, 6.0], 50)
        .unwrap();
    assert_eq!(res.m, 1);
    assert_eq!(res.gamma0, Some(0.02295566467108793));
    let missed: Vec<usize> = res.points.iter().map(|p| p.missed_total).collect();
    assert_eq!(missed, [21, 2, 2]);
    assert_eq!(res.min_eb_n0_db, Some(2.0));
}
