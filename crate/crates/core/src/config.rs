//! Scenario parameters shared by every other module.
//!
//! A [`SystemConfig`] is serialized as a flat JSON object whose keys are the
//! conventional symbol names (`K_a`, `B`, `n`, `J`, `B_J`, ...). Unknown keys
//! are rejected so that a typo in a sweep script fails loudly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel code rate as an exact fraction `num/den`.
///
/// Serialized as the string `"num/den"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CodeRate {
    pub num: u32,
    pub den: u32,
}

impl CodeRate {
    pub const ONE_THIRD: CodeRate = CodeRate { num: 1, den: 3 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::out_of_range(
                "code_rate",
                format!("{num}/{den}"),
                "(0, 1]",
            ));
        }
        Ok(CodeRate { num, den })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Smallest codeword length carrying `info_bits` at this rate: `ceil(info_bits / rate)`.
    pub fn code_len(self, info_bits: usize) -> usize {
        (info_bits * self.den as usize).div_ceil(self.num as usize)
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("code_rate must look like \"1/3\", got {s:?}"));
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        let num = a.trim().parse().map_err(|_| bad())?;
        let den = b.trim().parse().map_err(|_| bad())?;
        CodeRate::new(num, den)
    }
}

impl TryFrom<String> for CodeRate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CodeRate> for String {
    fn from(r: CodeRate) -> String {
        r.to_string()
    }
}

/// Which symbol probabilities feed the activity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Detector LLRs only.
    Literal,
    /// Detector plus decoder-extrinsic LLRs (the full symbol posterior).
    Refined,
    /// Decoder-extrinsic LLRs only, so `r_j` is not counted twice.
    #[default]
    Extrinsic,
}

/// Interference variance assumed by the initial pattern scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitVariance {
    /// `K̄_a + σ² − p_i²`, as if every user occupied every channel use.
    Literal,
    /// `(K̄_a − 1)·n_c/n_p + σ²`, the expected load of a channel use.
    #[default]
    Occupancy,
}

/// Blocklength handed to the group-SNR solver when planning power levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdBlocklength {
    /// The whole frame, `(n, B)`.
    #[default]
    Full,
    /// One chunk, `(n_p, B)`.
    Chunk,
}

/// All scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of active users.
    #[serde(rename = "K_a")]
    pub k_a: usize,
    /// Payload bits per user.
    #[serde(rename = "B")]
    pub b: usize,
    /// Total channel uses.
    pub n: usize,
    /// Number of chunks.
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "B_J")]
    pub b_j: usize,
    #[serde(rename = "B_p")]
    pub b_p: usize,
    #[serde(rename = "B_c")]
    pub b_c: usize,
    /// Pattern length (channel uses per chunk).
    pub n_p: usize,
    /// Occupied channel uses per pattern.
    pub n_c: usize,
    pub code_rate: CodeRate,
    /// AWGN variance.
    pub sigma2: f64,
    pub target_pupe: f64,
    pub inner_iters: usize,
    pub outer_iters: usize,
    pub bp_iters: usize,
    pub candidate_cap: usize,
    pub master_seed: u64,
    pub pd_enabled: bool,

    #[serde(default)]
    pub prior_mode: PriorMode,
    /// Candidates whose activity score falls below this are dropped.
    #[serde(default = "default_drop_threshold")]
    pub drop_threshold: f64,
    #[serde(default)]
    pub init_variance: InitVariance,
    /// Weight each candidate's contribution to the interference statistics
    /// by its current activity probability instead of treating every
    /// candidate as active.
    #[serde(default = "default_true")]
    pub activity_weighting: bool,
    #[serde(default)]
    pub pd_blocklength: PdBlocklength,
    /// Largest group count tried by the power-division planner.
    #[serde(default = "default_m_max")]
    pub m_max: usize,
}

fn default_drop_threshold() -> f64 {
    -50.0
}

fn default_true() -> bool {
    true
}

fn default_m_max() -> usize {
    16
}

/// Outcome of [`SystemConfig::validate`]: one message per violated invariant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.violations.join("; "))
    }
}

/// Names accepted by [`SystemConfig::profile`].
pub const PROFILE_NAMES: &[&str] = &["full-b61", "full-b100", "toy-single", "toy-ka16", "toy-pd"];

impl SystemConfig {
    /// Builds a consistent configuration from the free parameters; the
    /// derived ones (`B`, `B_J`, `n`, `n_c`, default candidate cap) follow.
    #[allow(clippy::too_many_arguments)]
    pub fn derived(
        k_a: usize,
        j: usize,
        b_p: usize,
        b_c: usize,
        n_p: usize,
        code_rate: CodeRate,
        target_pupe: f64,
        master_seed: u64,
    ) -> Self {
        let b_j = j.max(1).trailing_zeros() as usize;
        let n_c = code_rate.code_len(b_c);
        let b = b_j + b_p + b_c;
        let kbar = k_a.div_ceil(j.max(1)).max(1);
        let cap = (4 * kbar).min(1usize.checked_shl(b_p as u32).unwrap_or(usize::MAX));
        let mut cfg = SystemConfig {
            k_a,
            b,
            n: n_p * j,
            j,
            b_j,
            b_p,
            b_c,
            n_p,
            n_c,
            code_rate,
            sigma2: 1.0,
            target_pupe,
            inner_iters: 8,
            outer_iters: 10,
            bp_iters: 30,
            candidate_cap: cap,
            master_seed,
            pd_enabled: false,
            prior_mode: PriorMode::default(),
            drop_threshold: default_drop_threshold(),
            init_variance: InitVariance::default(),
            activity_weighting: true,
            pd_blocklength: PdBlocklength::default(),
            m_max: default_m_max(),
        };
        cfg.sigma2 = cfg.eb_n0_to_sigma2(10.0).expect("finite");
        cfg
    }

    /// Named parameter sets.
    ///
    /// * `full-b61`: K_a=300, J=16, 2^13 patterns, B_c=44 at rate 1/3,
    ///   n=30000. The bit split sums to B=61.
    /// * `full-b100`: the same frame with B=100 (B_c=83, so n_c=249).
    /// * `toy-single`, `toy-ka16`, `toy-pd`: desk-scale scenarios with a
    ///   16-bit payload code (n_c=48) on 512-use chunks.
    pub fn profile(name: &str) -> Result<Self> {
        let cfg = match name {
            "full-b61" => {
                SystemConfig::derived(300, 16, 13, 44, 1875, CodeRate::ONE_THIRD, 0.05, 1)
            }
            "full-b100" => {
                SystemConfig::derived(300, 16, 13, 83, 1875, CodeRate::ONE_THIRD, 0.05, 1)
            }
            "toy-single" => SystemConfig::derived(1, 1, 8, 16, 512, CodeRate::ONE_THIRD, 0.05, 1),
            "toy-ka16" => SystemConfig::derived(16, 4, 10, 16, 512, CodeRate::ONE_THIRD, 0.05, 1),
            "toy-pd" => {
                let mut c = SystemConfig::derived(64, 1, 14, 16, 512, CodeRate::ONE_THIRD, 0.05, 1);
                c.candidate_cap = 96;
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown profile {other:?}; known: {}",
                    PROFILE_NAMES.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Average number of active users per chunk.
    pub fn users_per_chunk(&self) -> f64 {
        self.k_a as f64 / self.j as f64
    }

    pub fn num_patterns(&self) -> usize {
        1usize << self.b_p
    }

    /// Checks every invariant; never fails, only reports.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        for (name, value) in [
            ("K_a", self.k_a),
            ("B", self.b),
            ("n", self.n),
            ("J", self.j),
            ("B_c", self.b_c),
            ("n_p", self.n_p),
            ("n_c", self.n_c),
            ("inner_iters", self.inner_iters),
            ("outer_iters", self.outer_iters),
            ("bp_iters", self.bp_iters),
            ("candidate_cap", self.candidate_cap),
            ("m_max", self.m_max),
        ] {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.b != self.b_j + self.b_p + self.b_c {
            v.push(format!(
                "B ≠ B_J+B_p+B_c ({} ≠ {}+{}+{})",
                self.b, self.b_j, self.b_p, self.b_c
            ));
        }
        if self.j == 0 || !self.j.is_power_of_two() {
            v.push(format!("J={} is not a power of two", self.j));
        } else if self.b_j != self.j.trailing_zeros() as usize {
            v.push(format!("B_J={} ≠ log2(J={})", self.b_j, self.j));
        }
        if self.n != self.n_p * self.j {
            v.push(format!("n={} ≠ n_p·J={}", self.n, self.n_p * self.j));
        }
        if self.n_c > self.n_p {
            v.push(format!("n_c={} exceeds n_p={}", self.n_c, self.n_p));
        }
        if self.n_p > 1 << 16 {
            v.push(format!("n_p={} does not fit 16-bit positions", self.n_p));
        }
        let expect_nc = self.code_rate.code_len(self.b_c);
        if self.n_c != expect_nc {
            v.push(format!(
                "n_c={} ≠ ceil(B_c/code_rate)={}",
                self.n_c, expect_nc
            ));
        }
        if self.b_p >= 32 {
            v.push(format!("B_p={} is too large", self.b_p));
        } else {
            let patterns = 1usize << self.b_p;
            if self.candidate_cap > patterns {
                v.push(format!(
                    "candidate_cap={} exceeds 2^B_p={}",
                    self.candidate_cap, patterns
                ));
            }
        }
        if self.j > 0 && self.candidate_cap < self.k_a.div_ceil(self.j) {
            v.push(format!(
                "candidate_cap={} is below ceil(K_a/J)={}",
                self.candidate_cap,
                self.k_a.div_ceil(self.j)
            ));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            v.push(format!(
                "sigma2={} must be positive and finite",
                self.sigma2
            ));
        }
        if !(self.target_pupe > 0.0 && self.target_pupe < 1.0) {
            v.push(format!(
                "target_pupe={} must lie in (0,1)",
                self.target_pupe
            ));
        }
        if !self.drop_threshold.is_finite() {
            v.push("drop_threshold must be finite".into());
        }
        ValidationReport { violations: v }
    }

    /// Converts to an error when any invariant is violated.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Config(report.to_string()))
        }
    }

    /// Noise variance for a given E_b/N_0 in dB: `n_c / (2 B 10^(dB/10))`.
    pub fn eb_n0_to_sigma2(&self, eb_n0_db: f64) -> Result<f64> {
        if !eb_n0_db.is_finite() {
            return Err(Error::NonFinite("eb_n0_db"));
        }
        Ok(self.n_c as f64 / (2.0 * self.b as f64 * 10f64.powf(eb_n0_db / 10.0)))
    }

    /// Inverse of [`eb_n0_to_sigma2`](Self::eb_n0_to_sigma2).
    pub fn sigma2_to_eb_n0(&self, sigma2: f64) -> Result<f64> {
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::NonFinite("sigma2"));
        }
        Ok(10.0 * (self.n_c as f64 / (2.0 * self.b as f64 * sigma2)).log10())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies a `key=value` override. The value is parsed as JSON when
    /// possible and as a bare string otherwise; unknown keys are rejected.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("config is an object");
        if !map.contains_key(key.trim()) {
            return Err(Error::Config(format!(
                "unknown config key {:?}",
                key.trim()
            )));
        }
        map.insert(key.trim().to_string(), value);
        *self = serde_json::from_value(obj)?;
        Ok(())
    }
}
