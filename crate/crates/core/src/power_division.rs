//! TIN-SIC power division.
//!
//! Codebook columns are split into `m` equally sized groups. Group `j` gets
//! power `P_j = P_1 σ_j² / σ_1²` with `σ_j² = σ² + Σ_{i<j} P_i K_a/m`, so that
//! when groups are decoded from strongest to weakest, cancelling each before
//! moving on, every group sees the same effective SNR `γ₀`.
//!
//! `γ₀` comes from a closed-form approximation of the per-user error
//! probability of a treat-interference-as-noise receiver with successive
//! cancellation ([`tin_sic_pupe`]) built on the finite-blocklength normal
//! approximation, and `m` minimizes `(1 + γ₀ K_a/m)^m`.

use std::f64::consts::{LN_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::config::{PdBlocklength, SystemConfig};
use crate::error::{Error, Result};

/// Bracket searched for `γ₀`.
pub const GAMMA_LO: f64 = 1e-6;
pub const GAMMA_HI: f64 = 1e4;

/// `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `ln Q(x)`, accurate where `Q` underflows or rounds to one.
pub fn ln_q_function(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return (-q_function(-x)).ln_1p();
    }
    if x <= 30.0 {
        return q_function(x).ln();
    }
    if x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    // Q(x) = φ(x) / (x + 1/(x + 2/(x + 3/(x + ...)))), backward evaluation.
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - tail.ln()
}

/// Inputs of the error-probability approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinSicParams {
    /// Per-user, per-channel-use SNR.
    pub gamma: f64,
    pub users: usize,
    pub channel_uses: usize,
    pub bits: usize,
}

impl TinSicParams {
    pub fn rate(&self) -> f64 {
        self.bits as f64 / self.channel_uses as f64
    }
}

/// Probability that none of `remaining` users decodes at one SIC stage when
/// each sees SINR `alpha`.
fn stage_failure(alpha: f64, rate: f64, n0: f64, remaining: usize) -> f64 {
    let capacity = 0.5 * (1.0 + alpha).log2();
    let dispersion = 0.5 * alpha * (alpha + 2.0) / ((alpha + 1.0) * (alpha + 1.0)) * LN_2 * LN_2;
    let ln_q = if dispersion < 1e-300 {
        if capacity < rate {
            0.0
        } else if capacity == rate {
            0.5f64.ln()
        } else {
            f64::NEG_INFINITY
        }
    } else {
        ln_q_function((capacity - rate) / (dispersion / n0).sqrt())
    };
    (remaining as f64 * ln_q).exp()
}

/// Approximate per-user error probability of `users` equal-power users
/// decoded by TIN with SIC: stage `k` leaves `users − k + 1` undecoded users
/// and stopping there costs that many errors.
pub fn tin_sic_pupe(params: &TinSicParams) -> f64 {
    let TinSicParams {
        gamma,
        users,
        channel_uses,
        ..
    } = *params;
    if users == 0 {
        return 0.0;
    }
    let rate = params.rate();
    let n0 = channel_uses as f64;
    let k0 = users as f64;
    let mut total = 0.0;
    let mut survive = 1.0;
    for k in 1..=users {
        let remaining = users - k + 1;
        let alpha = gamma / (1.0 + (users - k) as f64 * gamma);
        let p_stop = stage_failure(alpha, rate, n0, remaining);
        total += remaining as f64 / k0 * p_stop * survive;
        survive *= 1.0 - p_stop;
    }
    total.clamp(0.0, 1.0)
}

/// How a `γ₀` search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// A crossing was found and refined.
    Converged,
    /// The target is already met at the bottom of the bracket.
    BelowBracket,
    /// The target is not reachable inside the bracket.
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma0 {
    pub gamma0: f64,
    /// `ε(γ₀)` as evaluated.
    pub pupe: f64,
    pub status: SolveStatus,
    /// Whether the coarse scan found `ε(γ) − ε_t` changing sign more than once.
    pub non_monotone: bool,
}

fn log_grid(points: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (GAMMA_LO.ln(), GAMMA_HI.ln());
    (0..points).map(move |i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
}

/// Smallest `γ` in `[GAMMA_LO, GAMMA_HI]` minimizing `|ε(γ) − ε_t|`.
pub fn solve_gamma0(users: usize, channel_uses: usize, bits: usize, target: f64) -> Result<Gamma0> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::out_of_range("target PUPE", target, "(0, 1)"));
    }
    if channel_uses == 0 || bits == 0 {
        return Err(Error::Config(
            "solve_gamma0 needs positive n0 and B0".into(),
        ));
    }
    let eps = |gamma: f64| {
        tin_sic_pupe(&TinSicParams {
            gamma,
            users,
            channel_uses,
            bits,
        })
    };
    let lo_val = eps(GAMMA_LO);
    if lo_val <= target {
        return Ok(Gamma0 {
            gamma0: GAMMA_LO,
            pupe: lo_val,
            status: SolveStatus::BelowBracket,
            non_monotone: false,
        });
    }

    let first_crossing = |points: usize| -> (Option<(f64, f64)>, usize) {
        let grid: Vec<f64> = log_grid(points).collect();
        let above: Vec<bool> = grid.iter().map(|&g| eps(g) > target).collect();
        let changes = above.windows(2).filter(|w| w[0] != w[1]).count();
        let cell = above
            .windows(2)
            .position(|w| w[0] && !w[1])
            .map(|i| (grid[i], grid[i + 1]));
        (cell, changes)
    };
    let (mut cell, changes) = first_crossing(64);
    let non_monotone = changes > 1;
    if non_monotone {
        cell = first_crossing(512).0;
    }
    let Some((mut lo, mut hi)) = cell else {
        // Keep the bracket point closest to the target.
        let best = log_grid(512).map(|g| (g, (eps(g) - target).abs())).fold(
            (GAMMA_HI, f64::INFINITY),
            |acc, x| if x.1 < acc.1 { x } else { acc },
        );
        return Ok(Gamma0 {
            gamma0: best.0,
            pupe: eps(best.0),
            status: SolveStatus::Unreachable,
            non_monotone,
        });
    };
    for _ in 0..200 {
        let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        if eps(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (e_lo, e_hi) = (eps(lo), eps(hi));
    let (gamma0, pupe) = if (e_lo - target).abs() <= (e_hi - target).abs() {
        (lo, e_lo)
    } else {
        (hi, e_hi)
    };
    Ok(Gamma0 {
        gamma0,
        pupe,
        status: SolveStatus::Converged,
        non_monotone,
    })
}

/// One row of the group-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCountRow {
    pub m: usize,
    pub users_per_group: usize,
    pub gamma0: f64,
    pub status: SolveStatus,
    /// `m · ln(1 + γ₀ K_a/m)`.
    pub ln_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub m: usize,
    pub gamma0: f64,
    pub objective: f64,
    pub table: Vec<GroupCountRow>,
}

/// Evaluates `(1 + γ₀(m) K_a/m)^m` for `m = 1..=m_max` and returns the
/// minimizer (ties go to the smaller `m`). `γ₀(m)` is solved for
/// `ceil(K_a/m)` users.
pub fn optimize_group_count(
    k_a: usize,
    channel_uses: usize,
    bits: usize,
    target: f64,
    m_max: usize,
) -> Result<GroupCount> {
    if m_max == 0 || k_a == 0 {
        return Err(Error::Config(
            "group search needs K_a ≥ 1 and m_max ≥ 1".into(),
        ));
    }
    let mut table = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let users = k_a.div_ceil(m);
        let sol = solve_gamma0(users, channel_uses, bits, target)?;
        let load = k_a as f64 / m as f64;
        table.push(GroupCountRow {
            m,
            users_per_group: users,
            gamma0: sol.gamma0,
            status: sol.status,
            ln_objective: m as f64 * (sol.gamma0 * load).ln_1p(),
        });
    }
    // Rows whose target is unreachable only count when nothing else is feasible.
    let feasible: Vec<&GroupCountRow> = table
        .iter()
        .filter(|r| r.status != SolveStatus::Unreachable)
        .collect();
    let pool = if feasible.is_empty() {
        table.iter().collect()
    } else {
        feasible
    };
    let best = pool
        .into_iter()
        .reduce(|b, r| {
            if r.ln_objective < b.ln_objective {
                r
            } else {
                b
            }
        })
        .expect("m_max ≥ 1");
    Ok(GroupCount {
        m: best.m,
        gamma0: best.gamma0,
        objective: best.ln_objective.exp(),
        table,
    })
}

/// Per-group powers and the amplitude ratios applied by the transmitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPlan {
    pub m: usize,
    pub gamma0: f64,
    /// Raw powers `P_1 ≤ … ≤ P_m`.
    #[serde(rename = "P")]
    pub raw_powers: Vec<f64>,
    /// Amplitude ratios `p_j` with `Σ p_j² / m = 1`.
    #[serde(rename = "p")]
    pub ratios: Vec<f64>,
    /// `(1 + γ₀ K_a/m)^m`.
    pub objective: f64,
}

/// Grid on which transmit amplitudes are quantized, so that superposition
/// and cancellation of a handful of users is exact in `f64`.
const AMPLITUDE_GRID: f64 = (1u64 << 24) as f64;

impl PowerPlan {
    /// Every user at unit amplitude.
    pub fn uniform() -> Self {
        PowerPlan {
            m: 1,
            gamma0: f64::NAN,
            raw_powers: vec![1.0],
            ratios: vec![1.0],
            objective: f64::NAN,
        }
    }

    /// Ratios quantized to multiples of 2⁻²⁴, as used on air.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.ratios
            .iter()
            .map(|p| (p * AMPLITUDE_GRID).round() / AMPLITUDE_GRID)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Builds the group powers from `P_1 = γ₀ σ²` and normalizes them to unit
/// mean-square amplitude.
pub fn build_power_plan(m: usize, gamma0: f64, k_a: usize, sigma2: f64) -> Result<PowerPlan> {
    if m == 0 {
        return Err(Error::out_of_range("group count", m, "≥ 1"));
    }
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::out_of_range("gamma0", gamma0, "(0, ∞)"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::NonFinite("sigma2"));
    }
    let load = k_a as f64 / m as f64;
    let p1 = gamma0 * sigma2;
    let mut raw = Vec::with_capacity(m);
    let mut interference = 0.0;
    for _ in 0..m {
        let sigma_j2 = sigma2 + interference;
        let pj = p1 * sigma_j2 / sigma2;
        raw.push(pj);
        interference += pj * load;
    }
    let total: f64 = raw.iter().sum();
    let ratios = raw
        .iter()
        .map(|&pj| (m as f64 * pj / total).sqrt())
        .collect();
    Ok(PowerPlan {
        m,
        gamma0,
        raw_powers: raw,
        ratios,
        objective: (m as f64 * (gamma0 * load).ln_1p()).exp(),
    })
}

/// Plans power division for a scenario: `m̂` and `γ₀` over the configured
/// blocklength, then the group powers at the configured `sigma2`.
pub fn plan_for_config(cfg: &SystemConfig) -> Result<PowerPlan> {
    let channel_uses = match cfg.pd_blocklength {
        PdBlocklength::Full => cfg.n,
        PdBlocklength::Chunk => cfg.n_p,
    };
    let m_max = cfg.m_max.min(cfg.num_patterns()).max(1);
    let gc = optimize_group_count(cfg.k_a, channel_uses, cfg.b, cfg.target_pupe, m_max)?;
    build_power_plan(gc.m, gc.gamma0, cfg.k_a, cfg.sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps(gamma: f64, users: usize, n0: usize, b0: usize) -> f64 {
        tin_sic_pupe(&TinSicParams {
            gamma,
            users,
            channel_uses: n0,
            bits: b0,
        })
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((ln_q_function(0.0) - 0.5f64.ln()).abs() < 1e-16);
        // Continuity where the tail switches to the continued fraction.
        let (a, b) = (ln_q_function(30.0), ln_q_function(30.0 + 1e-9));
        assert!((a - b).abs() < 1e-6);
        assert!(ln_q_function(40.0).is_finite());
        assert!((ln_q_function(-40.0)).abs() < 1e-300);
    }

    #[test]
    fn single_user_at_capacity_is_one_half() {
        let (n0, b0) = (1000, 100);
        let gamma = 2f64.powf(2.0 * b0 as f64 / n0 as f64) - 1.0;
        assert!((eps(gamma, 1, n0, b0) - 0.5).abs() < 1e-9);
        assert!(eps(1e6, 1, n0, b0) < 1e-300);
        assert_eq!(eps(0.0, 1, n0, b0), 1.0);
        assert_eq!(eps(0.0, 7, n0, b0), 1.0);
    }

    #[test]
    fn alpha_increases_with_gamma() {
        for users in [2usize, 5, 20] {
            for k in 1..=users {
                let alpha = |g: f64| g / (1.0 + (users - k) as f64 * g);
                let mut prev = 0.0;
                for i in 1..200 {
                    let a = alpha(i as f64 * 0.05);
                    assert!(a > prev);
                    prev = a;
                }
            }
        }
    }

    #[test]
    fn gamma0_examples() {
        let g = solve_gamma0(1, 1000, 100, 0.5).unwrap();
        let want = 2f64.powf(0.2) - 1.0;
        assert_eq!(g.status, SolveStatus::Converged);
        assert!(
            (g.gamma0 / want - 1.0).abs() < 1e-6,
            "{} vs {want}",
            g.gamma0
        );

        let star = 0.37;
        let target = eps(star, 4, 1875, 61);
        let g = solve_gamma0(4, 1875, 61, target).unwrap();
        assert!((g.gamma0 / star - 1.0).abs() < 1e-6);

        let g = solve_gamma0(10, 30000, 61, 0.05).unwrap();
        let e = eps(g.gamma0, 10, 30000, 61);
        assert!((e - 0.05).abs() <= 1e-6, "{e}");
        assert!(solve_gamma0(1, 1000, 100, 1.5).is_err());
    }

    #[test]
    fn gamma0_flags() {
        // A huge user count cannot be served inside the bracket.
        let g = solve_gamma0(500, 100, 100, 0.05).unwrap();
        assert_eq!(g.status, SolveStatus::Unreachable);
        // Tiny rate: met even at the bracket floor.
        let g = solve_gamma0(1, 1_000_000_000, 1, 0.999_999).unwrap();
        assert_eq!(g.status, SolveStatus::BelowBracket);
        assert_eq!(g.gamma0, GAMMA_LO);
    }

    #[test]
    fn group_count_edges() {
        let one = optimize_group_count(300, 30000, 61, 0.05, 1).unwrap();
        assert_eq!(one.m, 1);
        let small = optimize_group_count(2, 30000, 61, 0.05, 8).unwrap();
        assert_eq!(small.m, 1);
        assert_eq!(small.table.len(), 8);
    }

    #[test]
    fn plan_examples() {
        let p = build_power_plan(1, 0.3, 100, 0.7).unwrap();
        assert_eq!(p.ratios, vec![1.0]);

        let p = build_power_plan(2, 1e-9, 10, 1.0).unwrap();
        assert!((p.raw_powers[1] / p.raw_powers[0] - 1.0).abs() < 1e-7);
        assert!(p.ratios.iter().all(|r| (r - 1.0).abs() < 1e-7));

        for m in 1..=64 {
            let p = build_power_plan(m, 0.05, 300, 0.4).unwrap();
            let ms = p.ratios.iter().map(|r| r * r).sum::<f64>() / m as f64;
            assert!((ms - 1.0).abs() < 1e-12);
            assert!(p.raw_powers.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(build_power_plan(0, 0.1, 1, 1.0).is_err());
        assert!(build_power_plan(2, 0.0, 1, 1.0).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let p = build_power_plan(2, 0.1, 4, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        for key in ["m", "gamma0", "P", "p", "objective"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn amplitudes_are_dyadic() {
        let p = build_power_plan(5, 0.1, 64, 1.0).unwrap();
        for (a, r) in p.amplitudes().iter().zip(&p.ratios) {
            assert!((a - r).abs() <= 0.5 / AMPLITUDE_GRID);
            assert_eq!((a * AMPLITUDE_GRID).fract(), 0.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn pupe_is_a_probability(
            gamma in 1e-4f64..1e3,
            users in 1usize..40,
            n0 in 50usize..5000,
            b0 in 1usize..200,
        ) {
            let e = eps(gamma, users, n0, b0);
            proptest::prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
