//! Gaussian-approximation multi-user detection over one chunk.
//!
//! Each candidate pattern `i` with power ratio `p_i` sees, at every channel
//! use `j` it occupies,
//!
//! ```text
//! r_j = p_i x_ij + ξ_ij,   ξ_ij ~ N(E(ξ_ij), Var(ξ_ij))
//! ```
//!
//! where `ξ_ij` lumps every other candidate at `j` plus noise. One inner
//! iteration is:
//!
//! 1. interference statistics from the other candidates' symbol moments,
//! 2. detector LLRs `L^m = 2 p_i (r_j − E(ξ)) / Var(ξ)`,
//! 3. channel decoding of each candidate's `L^m`, keeping only the extrinsic
//!    part `L^d = L^post − L^m`,
//! 4. symbol moments `E(x) = tanh(L^d / 2)`, `Var(x) = 1 − E(x)²`,
//!
//! followed by an activity score `L(b_i)` per candidate, whose sign says
//! whether the pattern looks active.
//!
//! The candidate set is a superset of the active patterns. Unless disabled,
//! each candidate enters the other candidates' interference scaled by its
//! current probability of being active, so spurious candidates do not
//! inflate `Var(ξ)`.

use crate::channel_code::{SoftCode, LLR_CLIP};
use crate::codebook::PatternCodebook;
use crate::config::PriorMode;
use crate::error::Result;

/// A pattern under consideration together with its power ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pattern: usize,
    pub power: f64,
}

/// Candidates of one chunk and, per channel use, who occupies it.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
    positions: Vec<Vec<u16>>,
    /// Per channel use: `(candidate, slot)` where `slot` is the codeword
    /// position of that use within the candidate's pattern.
    occupancy: Vec<Vec<(u32, u32)>>,
}

impl CandidateSet {
    /// Builds the set from explicit candidates.
    pub fn new(candidates: Vec<Candidate>, codebook: &PatternCodebook) -> Self {
        let positions = candidates
            .iter()
            .map(|c| codebook.positions(c.pattern).to_vec())
            .collect();
        let mut set = CandidateSet {
            candidates,
            positions,
            occupancy: vec![Vec::new(); codebook.n_p()],
        };
        set.rebuild_occupancy();
        set
    }

    fn rebuild_occupancy(&mut self) {
        for users in &mut self.occupancy {
            users.clear();
        }
        for (k, pos) in self.positions.iter().enumerate() {
            for (slot, &j) in pos.iter().enumerate() {
                self.occupancy[j as usize].push((k as u32, slot as u32));
            }
        }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positions(&self, k: usize) -> &[u16] {
        &self.positions[k]
    }

    /// Candidates covering channel use `j`.
    pub fn occupants(&self, j: usize) -> &[(u32, u32)] {
        &self.occupancy[j]
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.candidates.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.positions.retain(|_| *it.next().unwrap());
        self.rebuild_occupancy();
    }
}

/// `ln σ(x) = −ln(1 + e^{−x})`, stable for any finite `x`.
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// One term of the activity score:
///
/// `ln Σ_{x=±1} P(x) N(r; p x + m, v) − ln N(r; m, v)`
///
/// with `P(+1) = σ(prior_llr)`, evaluated in log space.
pub fn activity_term(r: f64, power: f64, mean: f64, var: f64, prior_llr: f64) -> f64 {
    let a = power * (r - mean) / var;
    let plus = ln_sigmoid(prior_llr) + a;
    let minus = ln_sigmoid(-prior_llr) - a;
    let hi = plus.max(minus);
    let lse = hi + ((plus - hi).exp() + (minus - hi).exp()).ln();
    lse - power * power / (2.0 * var)
}

/// Interference assumed when scoring patterns before any detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitInterference {
    /// `kbar − p_i²`: every user is counted at every channel use.
    Literal { kbar: f64 },
    /// `(kbar − 1) · n_c / n_p`: the expected number of other users at a
    /// channel use, each of unit average power.
    Occupancy { kbar: f64 },
}

impl InitInterference {
    /// Variance of `ξ` for a pattern of amplitude `power`, floored at
    /// `sigma2`.
    pub fn variance(self, power: f64, sigma2: f64, codebook: &PatternCodebook) -> f64 {
        let extra = match self {
            InitInterference::Literal { kbar } => kbar - power * power,
            InitInterference::Occupancy { kbar } => {
                (kbar - 1.0) * codebook.n_c() as f64 / codebook.n_p() as f64
            }
        };
        (extra + sigma2).max(sigma2)
    }
}

/// Scores every pattern of the codebook against a received chunk under
/// uniform symbol priors and zero-mean interference (see
/// [`InitInterference`]), then keeps the `cap` best.
///
/// `powers[g]` is the amplitude ratio of power group `g`. Ties go to the
/// lower pattern index.
pub fn init_candidates(
    chunk: &[f64],
    codebook: &PatternCodebook,
    powers: &[f64],
    interference: InitInterference,
    sigma2: f64,
    cap: usize,
) -> CandidateSet {
    let scores = pattern_scores(chunk, codebook, powers, interference, sigma2);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let cap = cap.min(order.len());
    if cap < order.len() && cap > 0 {
        order.select_nth_unstable_by(cap - 1, by_score);
    }
    order.truncate(cap);
    order.sort_unstable_by(by_score);
    let candidates = order
        .into_iter()
        .map(|pattern| Candidate {
            pattern,
            power: powers[codebook.group_of(pattern)],
        })
        .collect();
    CandidateSet::new(candidates, codebook)
}

/// Initial activity score of every pattern (see [`init_candidates`]).
pub fn pattern_scores(
    chunk: &[f64],
    codebook: &PatternCodebook,
    powers: &[f64],
    interference: InitInterference,
    sigma2: f64,
) -> Vec<f64> {
    let terms: Vec<Vec<f64>> = powers
        .iter()
        .map(|&p| {
            let var = interference.variance(p, sigma2, codebook);
            chunk
                .iter()
                .map(|&r| activity_term(r, p, 0.0, var, 0.0))
                .collect()
        })
        .collect();
    (0..codebook.len())
        .map(|i| {
            let t = &terms[codebook.group_of(i)];
            codebook.positions(i).iter().map(|&j| t[j as usize]).sum()
        })
        .collect()
}

/// Per-candidate soft state of the detector.
///
/// Per-symbol vectors are flattened as `k * n_c + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub n_c: usize,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_xi: Vec<f64>,
    pub var_xi: Vec<f64>,
    /// Detector-side LLRs `L^m`.
    pub llr_m: Vec<f64>,
    /// Decoder-side extrinsic LLRs `L^d`.
    pub llr_d: Vec<f64>,
    /// Activity score `L(b_i)` per candidate.
    pub activity: Vec<f64>,
    /// Probability that each candidate is active; scales its contribution
    /// to the other candidates' interference statistics.
    pub activity_prob: Vec<f64>,
    /// Parity check outcome of the latest decode per candidate.
    pub parity_ok: Vec<bool>,
    /// Hard-decision codeword of the latest decode per candidate.
    pub codewords: Vec<Vec<u8>>,
    /// `E(r_j)` and `Var(r_j)` per channel use.
    pub mean_r: Vec<f64>,
    pub var_r: Vec<f64>,
}

impl DetectorState {
    /// Uniform symbol priors: `E(x)=0`, `Var(x)=1`, `E(ξ)=0`,
    /// `Var(ξ)=kbar+sigma2`.
    pub fn new(cands: &CandidateSet, n_c: usize, n_p: usize, kbar: f64, sigma2: f64) -> Self {
        let k = cands.len();
        DetectorState {
            n_c,
            mean_x: vec![0.0; k * n_c],
            var_x: vec![1.0; k * n_c],
            mean_xi: vec![0.0; k * n_c],
            var_xi: vec![kbar + sigma2; k * n_c],
            llr_m: vec![0.0; k * n_c],
            llr_d: vec![0.0; k * n_c],
            activity: vec![0.0; k],
            activity_prob: vec![1.0; k],
            parity_ok: vec![false; k],
            codewords: vec![Vec::new(); k],
            mean_r: vec![0.0; n_p],
            var_r: vec![sigma2; n_p],
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        let n_c = self.n_c;
        for v in [
            &mut self.mean_x,
            &mut self.var_x,
            &mut self.mean_xi,
            &mut self.var_xi,
            &mut self.llr_m,
            &mut self.llr_d,
        ] {
            let mut out = Vec::with_capacity(v.len());
            for (k, row) in v.chunks_exact(n_c).enumerate() {
                if keep[k] {
                    out.extend_from_slice(row);
                }
            }
            *v = out;
        }
        let mut it = keep.iter();
        self.activity.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.activity_prob.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.parity_ok.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.codewords.retain(|_| *it.next().unwrap());
    }
}

/// Interference statistics at every occupied channel use.
///
/// `E(r_j) = Σ π p E(x)`, `Var(r_j) = Σ p² (π Var(x) + π(1−π) E(x)²) + σ²`
/// with `π` the activity probability (so `π = 1` gives the plain sums of
/// `p E(x)` and `p² Var(x)`); each candidate's
/// `E(ξ)`/`Var(ξ)` is the same sum over the *other* candidates, computed
/// directly from prefix and suffix sums rather than by subtraction so that a
/// lone candidate sees exactly `E(ξ)=0`, `Var(ξ)=σ²`.
pub fn update_statistics(state: &mut DetectorState, cands: &CandidateSet, sigma2: f64) {
    let n_c = state.n_c;
    let mut pre_m: Vec<f64> = Vec::new();
    let mut pre_v: Vec<f64> = Vec::new();
    for j in 0..state.mean_r.len() {
        let occ = cands.occupants(j);
        pre_m.clear();
        pre_v.clear();
        let (mut sm, mut sv) = (0.0, 0.0);
        for &(k, slot) in occ {
            let (dm, dv) = contribution(state, cands, k as usize, slot as usize);
            pre_m.push(sm);
            pre_v.push(sv);
            sm += dm;
            sv += dv;
        }
        state.mean_r[j] = sm;
        state.var_r[j] = sv + sigma2;
        let (mut suf_m, mut suf_v) = (0.0, 0.0);
        for (t, &(k, slot)) in occ.iter().enumerate().rev() {
            let (dm, dv) = contribution(state, cands, k as usize, slot as usize);
            let idx = k as usize * n_c + slot as usize;
            state.mean_xi[idx] = pre_m[t] + suf_m;
            state.var_xi[idx] = sigma2 + (pre_v[t] + suf_v);
            suf_m += dm;
            suf_v += dv;
        }
    }
}

/// Mean and variance of `b p x` for one candidate symbol.
fn contribution(state: &DetectorState, cands: &CandidateSet, k: usize, slot: usize) -> (f64, f64) {
    let p = cands.candidates[k].power;
    let pi = state.activity_prob[k];
    let idx = k * state.n_c + slot;
    let m = state.mean_x[idx];
    let var = pi * state.var_x[idx] + pi * (1.0 - pi) * m * m;
    (p * pi * m, p * p * var)
}

/// Detector LLRs `L^m = 2 p (r − E(ξ)) / Var(ξ)`.
pub fn compute_prior_llrs(state: &mut DetectorState, cands: &CandidateSet, chunk: &[f64]) {
    let n_c = state.n_c;
    for (k, c) in cands.candidates.iter().enumerate() {
        for (slot, &j) in cands.positions[k].iter().enumerate() {
            let idx = k * n_c + slot;
            state.llr_m[idx] =
                2.0 * c.power * (chunk[j as usize] - state.mean_xi[idx]) / state.var_xi[idx];
        }
    }
}

/// Decodes every candidate's `L^m` (slot order equals codeword order) and
/// stores the extrinsic part of the decoder output as `L^d`.
pub fn exchange_with_decoder(state: &mut DetectorState, code: &dyn SoftCode) -> Result<()> {
    let n_c = state.n_c;
    for k in 0..state.activity.len() {
        let input = &state.llr_m[k * n_c..(k + 1) * n_c];
        let out = code.decode_soft(input)?;
        for (slot, &post) in out.llrs.iter().enumerate() {
            let lm = input[slot].clamp(-LLR_CLIP, LLR_CLIP);
            state.llr_d[k * n_c + slot] = (post - lm).clamp(-LLR_CLIP, LLR_CLIP);
        }
        state.parity_ok[k] = out.parity_ok;
        state.codewords[k] = out.codeword;
    }
    Ok(())
}

/// `E(x) = tanh(L^d / 2)`, `Var(x) = 1 − E(x)²`.
pub fn update_moments(state: &mut DetectorState) {
    for ((m, v), &l) in state
        .mean_x
        .iter_mut()
        .zip(state.var_x.iter_mut())
        .zip(&state.llr_d)
    {
        *m = (0.5 * l).tanh();
        *v = 1.0 - *m * *m;
    }
}

/// Activity score of every candidate from the current statistics.
pub fn score_activity(
    state: &mut DetectorState,
    cands: &CandidateSet,
    chunk: &[f64],
    mode: PriorMode,
) {
    let n_c = state.n_c;
    for (k, c) in cands.candidates.iter().enumerate() {
        let mut score = 0.0;
        for (slot, &j) in cands.positions[k].iter().enumerate() {
            let idx = k * n_c + slot;
            let prior = match mode {
                PriorMode::Literal => state.llr_m[idx],
                PriorMode::Refined => state.llr_m[idx] + state.llr_d[idx],
                PriorMode::Extrinsic => state.llr_d[idx],
            };
            score += activity_term(
                chunk[j as usize],
                c.power,
                state.mean_xi[idx],
                state.var_xi[idx],
                prior,
            );
        }
        state.activity[k] = score;
    }
}

/// Removes candidates scoring below `threshold`; returns how many went.
pub fn drop_inactive(state: &mut DetectorState, cands: &mut CandidateSet, threshold: f64) -> usize {
    let keep: Vec<bool> = state.activity.iter().map(|&a| a >= threshold).collect();
    let dropped = keep.iter().filter(|&&k| !k).count();
    if dropped > 0 {
        state.retain(&keep);
        cands.retain(&keep);
    }
    dropped
}

/// Inner-loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub iterations: usize,
    pub sigma2: f64,
    pub kbar: f64,
    pub mode: PriorMode,
    pub drop_threshold: f64,
    pub activity_weighting: bool,
}

/// Smallest and largest starting activity probability.
const PROB_FLOOR: f64 = 1e-6;

/// Weight of the fresh estimate when updating activity probabilities;
/// undamped updates oscillate between "all active" and "none active".
pub const ACTIVITY_DAMPING: f64 = 0.5;

/// Moves activity probabilities towards the posterior implied by the scores
/// and the prior log-odds.
pub fn update_activity_prob(state: &mut DetectorState, prior_logit: f64) {
    for (pi, &l) in state.activity_prob.iter_mut().zip(&state.activity) {
        let fresh = 1.0 / (1.0 + (-(l + prior_logit)).exp());
        *pi += ACTIVITY_DAMPING * (fresh - *pi);
    }
}

/// Runs the full inner loop on one chunk.
pub fn run_inner_loop(
    chunk: &[f64],
    mut cands: CandidateSet,
    code: &dyn SoftCode,
    params: &InnerLoop,
) -> Result<(CandidateSet, DetectorState)> {
    let n_c = code.code_len();
    let mut state = DetectorState::new(&cands, n_c, chunk.len(), params.kbar, params.sigma2);
    // With weighting, every candidate starts equally likely, with the
    // expected active count equal to `kbar`.
    let prior = (params.kbar / cands.len().max(1) as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if params.activity_weighting {
        state.activity_prob.fill(prior);
    }
    update_statistics(&mut state, &cands, params.sigma2);
    for _ in 0..params.iterations {
        if cands.is_empty() {
            break;
        }
        compute_prior_llrs(&mut state, &cands, chunk);
        exchange_with_decoder(&mut state, code)?;
        update_moments(&mut state);
        update_statistics(&mut state, &cands, params.sigma2);
        score_activity(&mut state, &cands, chunk, params.mode);
        if params.activity_weighting {
            update_activity_prob(&mut state, (prior / (1.0 - prior)).ln());
        }
        let dropped = drop_inactive(&mut state, &mut cands, params.drop_threshold);
        if dropped > 0 || params.activity_weighting {
            update_statistics(&mut state, &cands, params.sigma2);
        }
    }
    Ok((cands, state))
}
