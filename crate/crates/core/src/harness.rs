//! Monte Carlo driver: random payloads → encoder → channel → receiver, with
//! per-user error accounting, E_b/N_0 sweeps and bisection for the minimum
//! E_b/N_0 that meets a target PUPE.
//!
//! Trial `t` always uses the seed derived from `(master_seed, t)` whatever the
//! operating point, so different E_b/N_0 values (and PD on/off) see the same
//! payloads and the same noise shape. Results are independent of the worker
//! count: trials are collected in index order and only integer counts are
//! aggregated.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel_code::{CodeSpec, LdpcCode};
use crate::codebook::PatternCodebook;
use crate::config::SystemConfig;
use crate::encoder::{encode_ue, split_bits};
use crate::error::{Error, Result};
use crate::gmac_channel::transmit;
use crate::power_division::{plan_for_config, PowerPlan};
use crate::seeds::{derive_seed, rng_from_seed, Stream};
use crate::sic_receiver::decode_frame;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Everything fixed across trials of one scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SystemConfig,
    pub codebook: PatternCodebook,
    pub code: LdpcCode,
    pub plan: PowerPlan,
    /// Transmit amplitude of every power group.
    pub amplitudes: Vec<f64>,
}

impl Scenario {
    /// Validates the configuration, plans power division when enabled and
    /// builds codebook and channel code from seeds derived from
    /// `master_seed`.
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        cfg.ensure_valid()?;
        let plan = if cfg.pd_enabled {
            plan_for_config(&cfg)?
        } else {
            PowerPlan::uniform()
        };
        Scenario::with_plan(cfg, plan)
    }

    /// Like [`new`](Self::new) with an explicit power plan.
    pub fn with_plan(cfg: SystemConfig, plan: PowerPlan) -> Result<Self> {
        cfg.ensure_valid()?;
        let seed = cfg.master_seed;
        let codebook = PatternCodebook::generate(
            cfg.n_p,
            cfg.n_c,
            cfg.b_p,
            derive_seed(seed, Stream::Codebook, 0),
        )?
        .assign_groups(plan.m, derive_seed(seed, Stream::GroupAssignment, 0))?;
        let code = LdpcCode::new(CodeSpec {
            info_bits: cfg.b_c,
            code_bits: cfg.n_c,
            seed: derive_seed(seed, Stream::ChannelCode, 0),
            bp_iters: cfg.bp_iters,
        })?;
        let amplitudes = plan.amplitudes();
        Ok(Scenario {
            cfg,
            codebook,
            code,
            plan,
            amplitudes,
        })
    }

    pub fn trial_seed(&self, trial: u64) -> u64 {
        derive_seed(self.cfg.master_seed, Stream::Payload, trial)
    }
}

/// Outcome of one simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_seed: u64,
    pub transmitted: Vec<Vec<u8>>,
    pub recovered: Vec<Vec<u8>>,
    /// Transmitted messages absent from the recovered list.
    pub missed: usize,
    /// Users sharing chunk and pattern with a user sending something else.
    pub collided: usize,
    /// Recovered messages nobody sent.
    pub falsely_recovered: usize,
    pub outer_rounds: usize,
    pub wall_time_s: f64,
}

impl TrialRecord {
    pub fn pupe(&self) -> f64 {
        if self.transmitted.is_empty() {
            0.0
        } else {
            self.missed as f64 / self.transmitted.len() as f64
        }
    }
}

/// Draws `K_a` uniform payloads from `trial_seed`.
pub fn draw_payloads(cfg: &SystemConfig, trial_seed: u64) -> Vec<Vec<u8>> {
    let mut rng = rng_from_seed(derive_seed(trial_seed, Stream::Payload, 0));
    (0..cfg.k_a)
        .map(|_| (0..cfg.b).map(|_| rng.random_range(0..2u8)).collect())
        .collect()
}

/// Simulates one frame from explicit payloads.
pub fn run_trial_with(
    scn: &Scenario,
    payloads: Vec<Vec<u8>>,
    sigma2: f64,
    noise_seed: u64,
) -> Result<TrialRecord> {
    let start = Instant::now();
    let cfg = &scn.cfg;
    let mut signals = Vec::with_capacity(payloads.len());
    let mut slots: HashMap<(usize, usize), HashSet<&[u8]>> = HashMap::new();
    let messages = payloads
        .iter()
        .map(|bits| split_bits(bits, cfg))
        .collect::<Result<Vec<_>>>()?;
    for (msg, bits) in messages.iter().zip(&payloads) {
        let amp = scn.amplitudes[scn.codebook.group_of(msg.pattern_index)];
        signals.push((
            msg.chunk_index,
            encode_ue(msg, &scn.codebook, &scn.code, amp)?,
        ));
        slots
            .entry((msg.chunk_index, msg.pattern_index))
            .or_default()
            .insert(bits.as_slice());
    }
    let collided = messages
        .iter()
        .filter(|m| slots[&(m.chunk_index, m.pattern_index)].len() > 1)
        .count();
    let frame = transmit(&signals, cfg.j, cfg.n_p, sigma2, noise_seed)?;
    let out = decode_frame(&frame, &scn.codebook, &scn.code, &scn.amplitudes, cfg)?;
    let recovered: Vec<Vec<u8>> = out.recovered.iter().map(|m| m.bits().to_vec()).collect();
    let listed: HashSet<&[u8]> = recovered.iter().map(Vec::as_slice).collect();
    let sent: HashSet<&[u8]> = payloads.iter().map(Vec::as_slice).collect();
    let missed = payloads
        .iter()
        .filter(|u| !listed.contains(u.as_slice()))
        .count();
    let falsely_recovered = listed.iter().filter(|u| !sent.contains(*u)).count();
    Ok(TrialRecord {
        trial_seed: 0,
        missed,
        collided,
        falsely_recovered,
        outer_rounds: out.rounds.len(),
        recovered,
        transmitted: payloads,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Simulates trial `trial_seed` at noise variance `sigma2`.
pub fn run_trial(scn: &Scenario, sigma2: f64, trial_seed: u64) -> Result<TrialRecord> {
    let payloads = draw_payloads(&scn.cfg, trial_seed);
    let noise_seed = derive_seed(trial_seed, Stream::Noise, 0);
    let mut rec = run_trial_with(scn, payloads, sigma2, noise_seed)?;
    rec.trial_seed = trial_seed;
    Ok(rec)
}

/// Aggregated PUPE at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointEstimate {
    pub eb_n0_db: f64,
    pub trials: usize,
    pub users_per_trial: usize,
    pub missed_total: usize,
    pub collided_total: usize,
    pub falsely_recovered_total: usize,
    pub pupe: f64,
    pub ci_halfwidth: f64,
    pub runtime_s: f64,
}

/// PUPE and 95% half-width over `slots` user slots with `missed` errors:
/// normal approximation with continuity correction, capped at 0.5.
pub fn pupe_interval(missed: usize, slots: usize) -> (f64, f64) {
    if slots == 0 {
        return (0.0, 0.5);
    }
    let n = slots as f64;
    let p = missed as f64 / n;
    let half = Z95 * (p * (1.0 - p) / n).sqrt() + 0.5 / n;
    (p, half.min(0.5))
}

/// Sweep or bisection trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub pd_enabled: bool,
    pub m: usize,
    pub gamma0: Option<f64>,
    pub target_pupe: f64,
    /// Sorted by E_b/N_0.
    pub points: Vec<PointEstimate>,
    /// Smallest evaluated E_b/N_0 meeting the target, for bisections.
    pub min_eb_n0_db: Option<f64>,
    /// False when a bisection bracket held no crossing.
    pub crossing_found: bool,
}

/// Scenario plus the worker pool that runs its trials.
pub struct Harness {
    scenario: Scenario,
    pool: rayon::ThreadPool,
}

impl Harness {
    pub fn new(scenario: Scenario, workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Harness { scenario, pool })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Runs trials `0..n_trials` at one E_b/N_0.
    pub fn estimate_pupe(&self, eb_n0_db: f64, n_trials: usize) -> Result<PointEstimate> {
        if n_trials == 0 {
            return Err(Error::out_of_range("trial count", 0, "≥ 1"));
        }
        let start = Instant::now();
        let scn = &self.scenario;
        let sigma2 = scn.cfg.eb_n0_to_sigma2(eb_n0_db)?;
        let records: Vec<TrialRecord> = self.pool.install(|| {
            (0..n_trials as u64)
                .into_par_iter()
                .map(|t| run_trial(scn, sigma2, scn.trial_seed(t)))
                .collect::<Result<Vec<_>>>()
        })?;
        let missed: usize = records.iter().map(|r| r.missed).sum();
        let slots = n_trials * scn.cfg.k_a;
        let (pupe, ci) = pupe_interval(missed, slots);
        Ok(PointEstimate {
            eb_n0_db,
            trials: n_trials,
            users_per_trial: scn.cfg.k_a,
            missed_total: missed,
            collided_total: records.iter().map(|r| r.collided).sum(),
            falsely_recovered_total: records.iter().map(|r| r.falsely_recovered).sum(),
            pupe,
            ci_halfwidth: ci,
            runtime_s: start.elapsed().as_secs_f64(),
        })
    }

    fn result(&self, mut points: Vec<PointEstimate>) -> SweepResult {
        points.sort_by(|a, b| a.eb_n0_db.total_cmp(&b.eb_n0_db));
        let plan = &self.scenario.plan;
        SweepResult {
            pd_enabled: self.scenario.cfg.pd_enabled,
            m: plan.m,
            gamma0: plan.gamma0.is_finite().then_some(plan.gamma0),
            target_pupe: self.scenario.cfg.target_pupe,
            points,
            min_eb_n0_db: None,
            crossing_found: false,
        }
    }

    /// Evaluates every grid point.
    pub fn sweep(&self, grid_db: &[f64], n_trials: usize) -> Result<SweepResult> {
        let points = grid_db
            .iter()
            .map(|&db| self.estimate_pupe(db, n_trials))
            .collect::<Result<Vec<_>>>()?;
        let mut res = self.result(points);
        let target = res.target_pupe;
        res.min_eb_n0_db = res
            .points
            .iter()
            .find(|p| p.pupe <= target)
            .map(|p| p.eb_n0_db);
        res.crossing_found = res.min_eb_n0_db.is_some();
        Ok(res)
    }

    /// Bisects E_b/N_0 in `bracket_db` down to 0.1 dB.
    pub fn find_min_ebn0(
        &self,
        target_pupe: f64,
        bracket_db: (f64, f64),
        n_trials: usize,
    ) -> Result<SweepResult> {
        let trace = bisect_min_ebn0(
            |db| self.estimate_pupe(db, n_trials),
            target_pupe,
            bracket_db,
            BISECTION_RESOLUTION_DB,
        )?;
        let mut res = self.result(trace.points);
        res.target_pupe = target_pupe;
        res.min_eb_n0_db = trace.min_eb_n0_db;
        res.crossing_found = trace.crossing_found;
        Ok(res)
    }
}

pub const BISECTION_RESOLUTION_DB: f64 = 0.1;

/// Trace of a bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionTrace {
    pub points: Vec<PointEstimate>,
    pub min_eb_n0_db: Option<f64>,
    pub crossing_found: bool,
}

/// Finds the smallest E_b/N_0 (to within `resolution_db`) whose estimated
/// PUPE is at most `target`. The returned value is the upper end of the
/// final bracket, i.e. a point that was observed to meet the target.
pub fn bisect_min_ebn0<F>(
    mut eval: F,
    target: f64,
    bracket_db: (f64, f64),
    resolution_db: f64,
) -> Result<BisectionTrace>
where
    F: FnMut(f64) -> Result<PointEstimate>,
{
    let (mut lo, mut hi) = bracket_db;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("bad bracket [{lo}, {hi}]")));
    }
    let mut points = Vec::new();
    let at_lo = eval(lo)?;
    let lo_ok = at_lo.pupe <= target;
    points.push(at_lo);
    if lo_ok {
        return Ok(BisectionTrace {
            points,
            min_eb_n0_db: Some(lo),
            crossing_found: true,
        });
    }
    let at_hi = eval(hi)?;
    let hi_ok = at_hi.pupe <= target;
    points.push(at_hi);
    if !hi_ok {
        return Ok(BisectionTrace {
            points,
            min_eb_n0_db: None,
            crossing_found: false,
        });
    }
    while hi - lo > resolution_db {
        let mid = 0.5 * (lo + hi);
        let p = eval(mid)?;
        if p.pupe <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        points.push(p);
    }
    Ok(BisectionTrace {
        points,
        min_eb_n0_db: Some(hi),
        crossing_found: true,
    })
}

pub const CSV_HEADER: [&str; 10] = [
    "eb_n0_db",
    "trials",
    "users_per_trial",
    "missed_total",
    "pupe",
    "ci_halfwidth",
    "pd_enabled",
    "m",
    "gamma0",
    "runtime_s",
];

/// Writes one row per point. Wall-clock runtimes are written only when
/// `timing` is set (otherwise `0`), so that fixed-seed output is
/// byte-reproducible.
pub fn write_csv<W: Write>(res: &SweepResult, out: W, timing: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in &res.points {
        w.write_record([
            p.eb_n0_db.to_string(),
            p.trials.to_string(),
            p.users_per_trial.to_string(),
            p.missed_total.to_string(),
            p.pupe.to_string(),
            p.ci_halfwidth.to_string(),
            res.pd_enabled.to_string(),
            res.m.to_string(),
            res.gamma0.map(|g| g.to_string()).unwrap_or_default(),
            if timing {
                format!("{:.3}", p.runtime_s)
            } else {
                "0".to_string()
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary mirroring [`SweepResult`].
pub fn to_json(res: &SweepResult) -> String {
    serde_json::to_string_pretty(res).expect("sweep result serializes")
}
