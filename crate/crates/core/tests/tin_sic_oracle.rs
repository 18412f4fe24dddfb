//! The TIN-SIC error approximation against a direct evaluation built on
//! `statrs` for the normal tail and plain loops for the stage recursion.

use approx::assert_relative_eq;
use proptest::prelude::*;
use sparse_ura::power_division::{tin_sic_pupe, TinSicParams};
use statrs::distribution::{ContinuousCDF, Normal};

fn reference(gamma: f64, k0: usize, n0: usize, b0: usize) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rate = b0 as f64 / n0 as f64;
    let ln2 = std::f64::consts::LN_2;
    let stage = |k: usize| {
        let alpha = gamma / (1.0 + (k0 - k) as f64 * gamma);
        let c = 0.5 * (1.0 + alpha).ln() / ln2;
        let v = alpha / 2.0 * (alpha + 2.0) / (alpha + 1.0).powi(2) * ln2 * ln2;
        normal
            .sf((c - rate) / (v / n0 as f64).sqrt())
            .powi((k0 - k + 1) as i32)
    };
    (1..=k0)
        .map(|k| {
            let survive: f64 = (1..k).map(|j| 1.0 - stage(j)).product();
            (k0 - k + 1) as f64 / k0 as f64 * stage(k) * survive
        })
        .sum()
}

fn eps(gamma: f64, users: usize, channel_uses: usize, bits: usize) -> f64 {
    tin_sic_pupe(&TinSicParams {
        gamma,
        users,
        channel_uses,
        bits,
    })
}

#[test]
fn agrees_with_reference_in_the_normal_range() {
    for &(n0, b0) in &[(1000, 100), (1875, 61), (48, 16), (512, 24)] {
        for k0 in [1, 2, 3, 5, 8, 20] {
            for gamma in [0.005, 0.02, 0.05, 0.1, 0.3, 1.0] {
                let want = reference(gamma, k0, n0, b0);
                if want < 1e-250 {
                    continue;
                }
                assert_relative_eq!(eps(gamma, k0, n0, b0), want, max_relative = 1e-9);
            }
        }
    }
}

#[test]
fn zero_users_cost_nothing() {
    assert_eq!(eps(1.0, 0, 100, 10), 0.0);
}

proptest! {
    #[test]
    fn single_user_is_one_tail(gamma in 1e-2f64..1.0, n0 in 32usize..1024, load in 0.5f64..1.5) {
        // Rates near capacity keep the tail within range.
        let b0 = ((0.5 * gamma.ln_1p() / std::f64::consts::LN_2 * n0 as f64 * load) as usize).max(1);
        let want = reference(gamma, 1, n0, b0);
        prop_assume!(want > 1e-250);
        prop_assert!((eps(gamma, 1, n0, b0) - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn more_power_never_hurts_a_lone_user(g in 1e-3f64..5.0, n0 in 32usize..2048, b0 in 1usize..100) {
        prop_assert!(eps(2.0 * g, 1, n0, b0) <= eps(g, 1, n0, b0));
    }
}
