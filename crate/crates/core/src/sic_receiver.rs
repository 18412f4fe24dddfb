//! Outer receiver loop: per-chunk detection, qualification of decoded
//! messages, and successive interference cancellation.

use std::collections::HashSet;

use crate::channel_code::SoftCode;
use crate::codebook::PatternCodebook;
use crate::config::{InitVariance, SystemConfig};
use crate::encoder::{encode_ue, UeMessage};
use crate::error::Result;
use crate::ga_mud::{init_candidates, run_inner_loop, InitInterference, InnerLoop};
use crate::gmac_channel::ReceivedFrame;

/// A message that passed its parity check with a positive activity score.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredMessage {
    pub message: UeMessage,
    /// Outer round (from 0) in which it qualified.
    pub round: usize,
    /// Activity score at qualification.
    pub activity: f64,
}

impl RecoveredMessage {
    pub fn chunk_index(&self) -> usize {
        self.message.chunk_index
    }

    pub fn pattern_index(&self) -> usize {
        self.message.pattern_index
    }

    pub fn bits(&self) -> &[u8] {
        self.message.bits()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundDiagnostics {
    pub round: usize,
    /// Chunks whose inner loop ran this round.
    pub chunks_processed: usize,
    pub recovered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    /// At most `K_a` messages, highest activity first.
    pub recovered: Vec<RecoveredMessage>,
    /// Received chunks minus every cancelled signal.
    pub residual: Vec<Vec<f64>>,
    pub rounds: Vec<RoundDiagnostics>,
}

/// Smallest noise variance the detector assumes; keeps its statistics finite
/// on noiseless frames.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Subtracts a re-encoded message from a chunk residual.
pub fn subtract(
    residual: &mut [f64],
    message: &UeMessage,
    codebook: &PatternCodebook,
    code: &dyn SoftCode,
    power_ratio: f64,
) -> Result<()> {
    let signal = encode_ue(message, codebook, code, power_ratio)?;
    for &j in codebook.occupied_positions(message.pattern_index)? {
        residual[j as usize] -= signal.samples[j as usize];
    }
    Ok(())
}

/// Decodes a whole frame.
///
/// Each round runs the inner loop on every chunk whose residual changed in
/// the previous round (a chunk left untouched would reproduce its previous,
/// fruitless result), cancels every newly qualified message, and stops when a
/// round recovers nothing or after `outer_iters` rounds. `powers[g]` is the
/// amplitude of power group `g`.
pub fn decode_frame(
    frame: &ReceivedFrame,
    codebook: &PatternCodebook,
    code: &dyn SoftCode,
    powers: &[f64],
    cfg: &SystemConfig,
) -> Result<ReceiverOutput> {
    let mut residual = frame.chunks.clone();
    let mut recovered: Vec<RecoveredMessage> = Vec::new();
    let mut rounds = Vec::new();
    if cfg.k_a == 0 {
        return Ok(ReceiverOutput {
            recovered,
            residual,
            rounds,
        });
    }
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut per_chunk = vec![0usize; residual.len()];
    let mut dirty = vec![true; residual.len()];
    let kbar = cfg.users_per_chunk();
    let sigma2 = frame.sigma2.max(NOISE_FLOOR);

    for round in 0..cfg.outer_iters {
        let mut fresh = Vec::new();
        let mut processed = 0;
        for (c, chunk) in residual.iter().enumerate() {
            if !dirty[c] {
                continue;
            }
            processed += 1;
            let remaining = (kbar - per_chunk[c] as f64).max(0.0);
            let interference = match cfg.init_variance {
                InitVariance::Literal => InitInterference::Literal { kbar: remaining },
                InitVariance::Occupancy => InitInterference::Occupancy { kbar: remaining },
            };
            let cands = init_candidates(
                chunk,
                codebook,
                powers,
                interference,
                sigma2,
                cfg.candidate_cap,
            );
            let params = InnerLoop {
                iterations: cfg.inner_iters,
                sigma2,
                kbar: remaining,
                mode: cfg.prior_mode,
                drop_threshold: cfg.drop_threshold,
                activity_weighting: cfg.activity_weighting,
            };
            let (cands, state) = run_inner_loop(chunk, cands, code, &params)?;
            for (k, cand) in cands.candidates().iter().enumerate() {
                if !(state.parity_ok[k] && state.activity[k] > 0.0) {
                    continue;
                }
                if !seen.insert((c, cand.pattern)) {
                    continue;
                }
                let payload = state.codewords[k][..code.info_len()].to_vec();
                fresh.push(RecoveredMessage {
                    message: UeMessage::from_parts(c, cand.pattern, payload, cfg),
                    round,
                    activity: state.activity[k],
                });
            }
        }
        dirty.iter_mut().for_each(|d| *d = false);
        for msg in &fresh {
            let c = msg.chunk_index();
            let power = powers[codebook.group_of(msg.pattern_index())];
            subtract(&mut residual[c], &msg.message, codebook, code, power)?;
            per_chunk[c] += 1;
            dirty[c] = true;
        }
        rounds.push(RoundDiagnostics {
            round,
            chunks_processed: processed,
            recovered: fresh.len(),
        });
        let done = fresh.is_empty();
        recovered.extend(fresh);
        if done || recovered.len() >= cfg.k_a {
            break;
        }
    }

    recovered.sort_by(|a, b| {
        b.activity
            .total_cmp(&a.activity)
            .then(a.chunk_index().cmp(&b.chunk_index()))
            .then(a.pattern_index().cmp(&b.pattern_index()))
    });
    recovered.truncate(cfg.k_a);
    Ok(ReceiverOutput {
        recovered,
        residual,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_code::{CodeSpec, LdpcCode};
    use crate::config::{CodeRate, SystemConfig};
    use crate::encoder::split_bits;
    use crate::gmac_channel::transmit;

    fn setup() -> (SystemConfig, PatternCodebook, LdpcCode) {
        let cfg = SystemConfig::derived(2, 2, 8, 16, 256, CodeRate::ONE_THIRD, 0.05, 3);
        let cb = PatternCodebook::generate(cfg.n_p, cfg.n_c, cfg.b_p, 1).unwrap();
        let code = LdpcCode::new(CodeSpec {
            info_bits: 16,
            code_bits: 48,
            seed: 2,
            bp_iters: 30,
        })
        .unwrap();
        (cfg, cb, code)
    }

    fn message(cfg: &SystemConfig, chunk: usize, pattern: usize, salt: u8) -> UeMessage {
        let payload: Vec<u8> = (0..cfg.b_c)
            .map(|i| (i as u8 * 7 + salt).is_multiple_of(3) as u8)
            .collect();
        UeMessage::from_parts(chunk, pattern, payload, cfg)
    }

    #[test]
    fn nobody_active() {
        let (mut cfg, cb, code) = setup();
        cfg.k_a = 0;
        let frame = transmit(&[], cfg.j, cfg.n_p, 0.1, 4).unwrap();
        let out = decode_frame(&frame, &cb, &code, &[1.0], &cfg).unwrap();
        assert!(out.recovered.is_empty());
        assert_eq!(out.residual, frame.chunks);
    }

    #[test]
    fn single_user_recovered() {
        let (mut cfg, cb, code) = setup();
        cfg.k_a = 1;
        let msg = message(&cfg, 1, 77, 1);
        let sig = encode_ue(&msg, &cb, &code, 1.0).unwrap();
        let frame = transmit(&[(1, sig)], cfg.j, cfg.n_p, 0.01, 5).unwrap();
        let out = decode_frame(&frame, &cb, &code, &[1.0], &cfg).unwrap();
        assert_eq!(out.recovered.len(), 1);
        assert_eq!(out.recovered[0].bits(), msg.bits());
        let energy: f64 = out.residual[1].iter().map(|x| x * x).sum();
        // Only noise remains: about n_p · σ².
        assert!(energy < 2.0 * 256.0 * 0.01, "{energy}");
    }

    #[test]
    fn subtract_examples() {
        let (cfg, cb, code) = setup();
        let msg = message(&cfg, 0, 5, 2);
        let sig = encode_ue(&msg, &cb, &code, 1.0).unwrap();
        let mut r = sig.samples.clone();
        subtract(&mut r, &msg, &cb, &code, 1.0).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));

        // Re-adding restores integer-valued residuals exactly.
        let original: Vec<f64> = (0..256).map(|i| (i % 5) as f64 - 2.0).collect();
        let mut r = original.clone();
        subtract(&mut r, &msg, &cb, &code, 1.0).unwrap();
        for (x, s) in r.iter_mut().zip(&sig.samples) {
            *x += s;
        }
        assert_eq!(r, original);

        // Wrong payload: 4 per flipped symbol.
        let wrong = message(&cfg, 0, 5, 1);
        let mut r = sig.samples.clone();
        subtract(&mut r, &wrong, &cb, &code, 1.0).unwrap();
        let wrong_sig = encode_ue(&wrong, &cb, &code, 1.0).unwrap();
        let flips = sig
            .samples
            .iter()
            .zip(&wrong_sig.samples)
            .filter(|(a, b)| a != b)
            .count();
        let energy: f64 = r.iter().map(|x| x * x).sum();
        assert!(flips > 0);
        assert_eq!(energy, 4.0 * flips as f64);
    }

    #[test]
    fn two_users_same_chunk() {
        let (cfg, cb, code) = setup();
        let a = message(&cfg, 0, 10, 1);
        let b = message(&cfg, 0, 200, 2);
        let signals = vec![
            (0, encode_ue(&a, &cb, &code, 1.0).unwrap()),
            (0, encode_ue(&b, &cb, &code, 1.0).unwrap()),
        ];
        let frame = transmit(&signals, cfg.j, cfg.n_p, 0.01, 8).unwrap();
        let out = decode_frame(&frame, &cb, &code, &[1.0], &cfg).unwrap();
        let got: HashSet<Vec<u8>> = out.recovered.iter().map(|m| m.bits().to_vec()).collect();
        assert!(got.contains(a.bits()) && got.contains(b.bits()));
        assert_eq!(out.rounds.iter().map(|r| r.recovered).sum::<usize>(), 2);
        let pairs: HashSet<(usize, usize)> = out
            .recovered
            .iter()
            .map(|m| (m.chunk_index(), m.pattern_index()))
            .collect();
        assert_eq!(pairs.len(), out.recovered.len());
    }

    #[test]
    fn list_never_exceeds_k_a() {
        let (mut cfg, cb, code) = setup();
        cfg.k_a = 1;
        let bits_a: Vec<u8> = (0..cfg.b).map(|i| (i % 2) as u8).collect();
        let bits_b: Vec<u8> = (0..cfg.b).map(|i| (i % 3 == 0) as u8).collect();
        let a = split_bits(&bits_a, &cfg).unwrap();
        let b = split_bits(&bits_b, &cfg).unwrap();
        let signals = vec![
            (a.chunk_index, encode_ue(&a, &cb, &code, 1.0).unwrap()),
            (b.chunk_index, encode_ue(&b, &cb, &code, 1.0).unwrap()),
        ];
        let frame = transmit(&signals, cfg.j, cfg.n_p, 0.01, 8).unwrap();
        let out = decode_frame(&frame, &cb, &code, &[1.0], &cfg).unwrap();
        assert_eq!(out.recovered.len(), 1);
    }
}
