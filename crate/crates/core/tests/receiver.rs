//! Receiver behaviour over seeded batches of small frames.

use rand::seq::index::sample;
use rand::Rng;
use sparse_ura::channel_code::{CodeSpec, LdpcCode};
use sparse_ura::codebook::PatternCodebook;
use sparse_ura::config::{CodeRate, SystemConfig};
use sparse_ura::encoder::{encode_ue, UeMessage};
use sparse_ura::gmac_channel::transmit;
use sparse_ura::seeds::rng_from_seed;
use sparse_ura::sic_receiver::decode_frame;

/// Frames out of 100 in which two same-chunk users on disjoint patterns at
/// σ² = 0.01 are both recovered within two outer rounds.
const TWO_USER_SUCCESSES: usize = 100;

#[test]
fn two_disjoint_users_in_one_chunk() {
    let cfg = SystemConfig::derived(2, 1, 8, 16, 256, CodeRate::ONE_THIRD, 0.05, 3);
    let cb = PatternCodebook::generate(cfg.n_p, cfg.n_c, cfg.b_p, 11).unwrap();
    let code = LdpcCode::new(CodeSpec {
        info_bits: cfg.b_c,
        code_bits: cfg.n_c,
        seed: 12,
        bp_iters: cfg.bp_iters,
    })
    .unwrap();
    let mut successes = 0;
    for t in 0..100u64 {
        let mut rng = rng_from_seed(t);
        let (a, b) = loop {
            let pick = sample(&mut rng, cb.len(), 2);
            let (a, b) = (pick.index(0), pick.index(1));
            let pa = cb.occupied_positions(a).unwrap();
            let pb = cb.occupied_positions(b).unwrap();
            if pa.iter().all(|x| !pb.contains(x)) {
                break (a, b);
            }
        };
        let msgs: Vec<UeMessage> = [a, b]
            .iter()
            .map(|&p| {
                let payload = (0..cfg.b_c).map(|_| rng.random_range(0..2u8)).collect();
                UeMessage::from_parts(0, p, payload, &cfg)
            })
            .collect();
        let signals: Vec<_> = msgs
            .iter()
            .map(|m| (0, encode_ue(m, &cb, &code, 1.0).unwrap()))
            .collect();
        let frame = transmit(&signals, 1, cfg.n_p, 0.01, t).unwrap();
        let out = decode_frame(&frame, &cb, &code, &[1.0], &cfg).unwrap();
        let early = out.recovered.iter().filter(|r| r.round < 2);
        let found = msgs
            .iter()
            .filter(|m| early.clone().any(|r| r.bits() == m.bits()))
            .count();
        successes += (found == 2) as usize;
    }
    assert_eq!(successes, TWO_USER_SUCCESSES);
}
