//! Sparse-code unsourced random access over the Gaussian multiple-access
//! channel.
//!
//! Every active user splits its `B`-bit payload into a chunk index, a
//! sparse-pattern index and an LDPC-coded part, and transmits BPSK symbols
//! on the `n_c` channel uses its pattern selects inside the chosen chunk. The
//! receiver alternates Gaussian-approximation multi-user detection with soft
//! LDPC decoding per chunk and cancels qualified messages across chunks.
//! Optional power division assigns pattern groups geometric power levels
//! planned from a finite-blocklength analysis of TIN-SIC decoding.
//!
//! ```
//! use sparse_ura::{config::SystemConfig, harness::{Harness, Scenario}};
//!
//! let cfg = SystemConfig::profile("toy-single").unwrap();
//! let harness = Harness::new(Scenario::new(cfg).unwrap(), 1).unwrap();
//! let point = harness.estimate_pupe(10.0, 20).unwrap();
//! assert_eq!(point.missed_total, 0);
//! ```

pub mod channel_code;
pub mod codebook;
pub mod config;
pub mod encoder;
pub mod error;
pub mod ga_mud;
pub mod gmac_channel;
pub mod harness;
pub mod power_division;
pub mod seeds;
pub mod sic_receiver;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/transmitter.md")]
    mod transmitter {}
    #[doc = include_str!("../../../book/src/receiver.md")]
    mod receiver {}
    #[doc = include_str!("../../../book/src/power-division.md")]
    mod power_division {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
