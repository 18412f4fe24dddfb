//! Soft-in/soft-out channel codes.
//!
//! Every user encodes its payload with the same [`SoftCode`]. The receiver
//! needs a-posteriori LLRs from it (for interference estimation) and a parity
//! test (to decide whether a decoded message may be cancelled).
//!
//! LLR convention everywhere: positive means bit 0, which BPSK maps to `+1`.

use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

/// Input LLRs are clipped to `±LLR_CLIP` before decoding.
pub const LLR_CLIP: f64 = 30.0;

/// Parameters identifying a code instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeSpec {
    pub info_bits: usize,
    pub code_bits: usize,
    pub seed: u64,
    pub bp_iters: usize,
}

impl CodeSpec {
    pub fn rate(&self) -> f64 {
        self.info_bits as f64 / self.code_bits as f64
    }
}

/// Output of one soft decoding pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDecodeResult {
    /// A-posteriori LLR of every code bit (input included).
    pub llrs: Vec<f64>,
    /// Hard decision on the information bits.
    pub hard_bits: Vec<u8>,
    /// Hard decision on the full codeword.
    pub codeword: Vec<u8>,
    /// Whether `codeword` satisfies every parity check.
    pub parity_ok: bool,
    pub iterations: usize,
}

/// A binary linear code with a soft decoder.
pub trait SoftCode: Send + Sync + std::fmt::Debug {
    fn info_len(&self) -> usize;
    fn code_len(&self) -> usize;
    fn encode(&self, info: &[u8]) -> Result<Vec<u8>>;
    fn decode_soft(&self, channel_llrs: &[f64]) -> Result<SoftDecodeResult>;
    fn parity_ok(&self, codeword: &[u8]) -> Result<bool>;
}

/// Systematic LDPC code `[info | parity]` with a seeded random parity-check
/// matrix: every column has weight 3, row weights differ by at most one and
/// 4-cycles are avoided while the greedy placement has room. Decoded by
/// flooding sum-product.
///
/// Columns are relabelled after Gaussian elimination so that the last
/// `n_c − B_c` positions are pivots; the matrix is resampled until it has
/// full row rank.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    spec: CodeSpec,
    /// Variable indices of every check (row).
    checks: Vec<Vec<usize>>,
    /// Information positions summed into every parity bit.
    generator: Vec<Vec<usize>>,
    /// Edge ids incident to every variable.
    var_edges: Vec<Vec<usize>>,
    /// Variable of every edge; edges are numbered check by check.
    edge_var: Vec<usize>,
    /// First edge of every check, plus a final sentinel.
    check_start: Vec<usize>,
}

const COLUMN_WEIGHT: usize = 3;
const MAX_ATTEMPTS: usize = 256;

impl LdpcCode {
    pub fn new(spec: CodeSpec) -> Result<Self> {
        let CodeSpec {
            info_bits: k,
            code_bits: n,
            ..
        } = spec;
        if k == 0 || n <= k {
            return Err(Error::Config(format!(
                "LDPC needs 0 < B_c < n_c, got B_c={k}, n_c={n}"
            )));
        }
        let mut rng = rng_from_seed(spec.seed);
        for _ in 0..MAX_ATTEMPTS {
            let rows = random_parity_rows(n, k, &mut rng);
            if let Some((checks, generator)) = systematic_form(&rows, n, k) {
                return Ok(Self::from_parts(spec, checks, generator));
            }
        }
        Err(Error::Config(format!(
            "no full-rank parity-check matrix found for B_c={k}, n_c={n}"
        )))
    }

    fn from_parts(spec: CodeSpec, checks: Vec<Vec<usize>>, generator: Vec<Vec<usize>>) -> Self {
        let mut var_edges = vec![Vec::new(); spec.code_bits];
        let mut edge_var = Vec::new();
        let mut check_start = Vec::with_capacity(checks.len() + 1);
        for row in &checks {
            check_start.push(edge_var.len());
            for &v in row {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
        }
        check_start.push(edge_var.len());
        LdpcCode {
            spec,
            checks,
            generator,
            var_edges,
            edge_var,
            check_start,
        }
    }

    pub fn spec(&self) -> CodeSpec {
        self.spec
    }

    /// Rows of the parity-check matrix as variable index lists.
    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    fn syndrome_ok(&self, bits: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ bits[v]) == 0)
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Places every column on the least-loaded rows, ties broken at random.
fn random_parity_rows(n: usize, k: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let m = n - k;
    let weight = COLUMN_WEIGHT.min(m);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    // Row pairs already sharing a column; reusing one closes a 4-cycle.
    let mut linked: HashSet<(usize, usize)> = HashSet::new();
    for col in 0..n {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(rng);
        order.sort_by_key(|&r| rows[r].len());
        let mut chosen: Vec<usize> = Vec::with_capacity(weight);
        for &r in &order {
            if chosen.len() == weight {
                break;
            }
            if chosen.iter().all(|&c| !linked.contains(&pair(c, r))) {
                chosen.push(r);
            }
        }
        // Accept 4-cycles when the greedy pick runs out of room.
        for &r in &order {
            if chosen.len() == weight {
                break;
            }
            if !chosen.contains(&r) {
                chosen.push(r);
            }
        }
        for (i, &a) in chosen.iter().enumerate() {
            for &b in &chosen[i + 1..] {
                linked.insert(pair(a, b));
            }
            rows[a].push(col);
        }
    }
    rows
}

/// Relabelled checks and generator rows.
type SystematicForm = (Vec<Vec<usize>>, Vec<Vec<usize>>);

/// Gaussian elimination over GF(2). On full rank returns the checks with
/// columns relabelled to `[info | pivots]` and, for every parity bit, the
/// information positions it sums.
fn systematic_form(rows: &[Vec<usize>], n: usize, k: usize) -> Option<SystematicForm> {
    let m = rows.len();
    let words = n.div_ceil(64);
    let mut mat: Vec<Vec<u64>> = rows
        .iter()
        .map(|row| {
            let mut w = vec![0u64; words];
            for &c in row {
                w[c / 64] ^= 1 << (c % 64);
            }
            w
        })
        .collect();
    let bit = |w: &[u64], c: usize| (w[c / 64] >> (c % 64)) & 1 == 1;
    let mut pivots = Vec::with_capacity(m);
    let mut r = 0;
    for c in 0..n {
        if r == m {
            break;
        }
        let Some(p) = (r..m).find(|&i| bit(&mat[i], c)) else {
            continue;
        };
        mat.swap(r, p);
        let pivot_row = mat[r].clone();
        for (i, row) in mat.iter_mut().enumerate() {
            if i != r && bit(row, c) {
                row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
            }
        }
        pivots.push(c);
        r += 1;
    }
    if pivots.len() < m {
        return None;
    }
    // Old column → new position.
    let mut label = vec![usize::MAX; n];
    let mut next_info = 0;
    for (c, slot) in label.iter_mut().enumerate() {
        if pivots.binary_search(&c).is_err() {
            *slot = next_info;
            next_info += 1;
        }
    }
    debug_assert_eq!(next_info, k);
    for (i, &c) in pivots.iter().enumerate() {
        label[c] = k + i;
    }
    let checks = rows
        .iter()
        .map(|row| {
            let mut v: Vec<usize> = row.iter().map(|&c| label[c]).collect();
            v.sort_unstable();
            v
        })
        .collect();
    // Row i of the reduced matrix: pivot i plus non-pivot columns.
    let generator = mat
        .iter()
        .map(|w| {
            (0..n)
                .filter(|&c| bit(w, c) && label[c] < k)
                .map(|c| label[c])
                .collect()
        })
        .collect();
    Some((checks, generator))
}

impl SoftCode for LdpcCode {
    fn info_len(&self) -> usize {
        self.spec.info_bits
    }

    fn code_len(&self) -> usize {
        self.spec.code_bits
    }

    fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        let k = self.spec.info_bits;
        if info.len() != k {
            return Err(Error::length("information bits", k, info.len()));
        }
        let mut cw = Vec::with_capacity(self.spec.code_bits);
        cw.extend(info.iter().map(|&b| b & 1));
        for row in &self.generator {
            let p = row.iter().fold(0u8, |acc, &v| acc ^ cw[v]);
            cw.push(p);
        }
        Ok(cw)
    }

    fn decode_soft(&self, channel_llrs: &[f64]) -> Result<SoftDecodeResult> {
        let n = self.spec.code_bits;
        if channel_llrs.len() != n {
            return Err(Error::length("channel LLRs", n, channel_llrs.len()));
        }
        let input: Vec<f64> = channel_llrs
            .iter()
            .map(|&l| {
                if l.is_nan() {
                    0.0
                } else {
                    l.clamp(-LLR_CLIP, LLR_CLIP)
                }
            })
            .collect();
        let edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| input[v]).collect();
        let mut c2v = vec![0.0; edges];
        let mut tanh_half = vec![0.0; edges];
        let mut suffix = vec![0.0; edges + 1];
        let mut total = input.clone();
        let mut codeword = vec![0u8; n];
        let mut parity_ok = false;
        let mut iterations = 0;

        // Keeps atanh finite; 2·atanh(1 - 1e-13) ≈ 30.6.
        const T_MAX: f64 = 1.0 - 1e-13;

        for _ in 0..self.spec.bp_iters.max(1) {
            iterations += 1;
            for c in 0..self.checks.len() {
                let (s, e) = (self.check_start[c], self.check_start[c + 1]);
                for i in s..e {
                    tanh_half[i] = (0.5 * v2c[i]).tanh();
                }
                suffix[e] = 1.0;
                for i in (s..e).rev() {
                    suffix[i] = suffix[i + 1] * tanh_half[i];
                }
                let mut prefix = 1.0;
                for i in s..e {
                    let t = (prefix * suffix[i + 1]).clamp(-T_MAX, T_MAX);
                    c2v[i] = 2.0 * t.atanh();
                    prefix *= tanh_half[i];
                }
            }
            for (v, es) in self.var_edges.iter().enumerate() {
                let sum: f64 = input[v] + es.iter().map(|&e| c2v[e]).sum::<f64>();
                total[v] = sum;
                for &e in es {
                    v2c[e] = sum - c2v[e];
                }
                codeword[v] = u8::from(sum < 0.0);
            }
            if self.syndrome_ok(&codeword) {
                parity_ok = true;
                break;
            }
        }
        Ok(SoftDecodeResult {
            hard_bits: codeword[..self.spec.info_bits].to_vec(),
            llrs: total,
            codeword,
            parity_ok,
            iterations,
        })
    }

    fn parity_ok(&self, codeword: &[u8]) -> Result<bool> {
        if codeword.len() != self.spec.code_bits {
            return Err(Error::length(
                "codeword",
                self.spec.code_bits,
                codeword.len(),
            ));
        }
        Ok(self.syndrome_ok(codeword))
    }
}
