//! Real-valued Gaussian multiple access channel: superposition plus AWGN.

use rand_distr::{Distribution, StandardNormal};

use crate::encoder::ChunkSignal;
use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

/// Received samples of every chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub chunks: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub noise_seed: u64,
}

/// Sums the signals per chunk and adds i.i.d. `N(0, sigma2)` noise.
///
/// Noise is drawn from a single stream in chunk order, so the frame depends
/// only on `(signals, sigma2, noise_seed)`.
pub fn transmit(
    signals: &[(usize, ChunkSignal)],
    num_chunks: usize,
    n_p: usize,
    sigma2: f64,
    noise_seed: u64,
) -> Result<ReceivedFrame> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::NonFinite("sigma2"));
    }
    let mut chunks = vec![vec![0.0; n_p]; num_chunks];
    for (chunk, sig) in signals {
        if *chunk >= num_chunks {
            return Err(Error::out_of_range(
                "chunk index",
                chunk,
                format!("[0, {num_chunks})"),
            ));
        }
        if sig.samples.len() != n_p {
            return Err(Error::length("chunk signal", n_p, sig.samples.len()));
        }
        for (r, s) in chunks[*chunk].iter_mut().zip(&sig.samples) {
            *r += s;
        }
    }
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        let mut rng = rng_from_seed(noise_seed);
        for chunk in &mut chunks {
            for r in chunk.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *r += sd * z;
            }
        }
    }
    Ok(ReceivedFrame {
        chunks,
        sigma2,
        noise_seed,
    })
}
