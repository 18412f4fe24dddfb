//! Per-user transmit chain: split the payload, pick chunk and pattern,
//! channel-encode, BPSK-map, place symbols on the pattern, scale.

use crate::channel_code::SoftCode;
use crate::codebook::PatternCodebook;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// A user's payload split into its three segments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UeMessage {
    pub chunk_index: usize,
    pub pattern_index: usize,
    pub payload: Vec<u8>,
    bits: Vec<u8>,
}

impl UeMessage {
    /// Full `B`-bit message.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Rebuilds a message from its parts (used by the receiver).
    pub fn from_parts(
        chunk_index: usize,
        pattern_index: usize,
        payload: Vec<u8>,
        cfg: &SystemConfig,
    ) -> Self {
        let mut bits = Vec::with_capacity(cfg.b);
        push_be(&mut bits, chunk_index, cfg.b_j);
        push_be(&mut bits, pattern_index, cfg.b_p);
        bits.extend_from_slice(&payload);
        UeMessage {
            chunk_index,
            pattern_index,
            payload,
            bits,
        }
    }
}

fn push_be(out: &mut Vec<u8>, value: usize, width: usize) {
    out.extend((0..width).rev().map(|i| ((value >> i) & 1) as u8));
}

fn read_be(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

/// Splits `B` bits into chunk index (`B_J`, big-endian), pattern index
/// (`B_p`, big-endian) and payload (`B_c`), in that order.
pub fn split_bits(bits: &[u8], cfg: &SystemConfig) -> Result<UeMessage> {
    if bits.len() != cfg.b {
        return Err(Error::length("message bits", cfg.b, bits.len()));
    }
    let (chunk, rest) = bits.split_at(cfg.b_j);
    let (pattern, payload) = rest.split_at(cfg.b_p);
    Ok(UeMessage {
        chunk_index: read_be(chunk),
        pattern_index: read_be(pattern),
        payload: payload.to_vec(),
        bits: bits.to_vec(),
    })
}

/// One user's contribution to its chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSignal {
    pub samples: Vec<f64>,
    pub pattern_index: usize,
    pub power_ratio: f64,
}

/// BPSK: bit 0 → +1, bit 1 → −1.
#[inline]
pub fn bpsk(bit: u8) -> f64 {
    if bit & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Encodes a user's payload and lays the scaled BPSK symbols onto the
/// occupied positions of its pattern, in order.
pub fn encode_ue(
    msg: &UeMessage,
    codebook: &PatternCodebook,
    code: &dyn SoftCode,
    power_ratio: f64,
) -> Result<ChunkSignal> {
    let positions = codebook.occupied_positions(msg.pattern_index)?;
    let cw = code.encode(&msg.payload)?;
    if cw.len() != positions.len() {
        return Err(Error::length(
            "codeword vs pattern",
            positions.len(),
            cw.len(),
        ));
    }
    let mut samples = vec![0.0; codebook.n_p()];
    for (&pos, &bit) in positions.iter().zip(&cw) {
        samples[pos as usize] = power_ratio * bpsk(bit);
    }
    Ok(ChunkSignal {
        samples,
        pattern_index: msg.pattern_index,
        power_ratio,
    })
}
