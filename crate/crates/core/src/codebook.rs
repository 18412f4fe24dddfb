//! Pattern codebook: which `n_c` of the `n_p` channel uses each pattern
//! occupies, plus the partition of patterns into power groups.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

/// The binary pattern matrix stored column-wise as sorted position lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCodebook {
    n_p: usize,
    n_c: usize,
    b_p: usize,
    seed: u64,
    columns: Vec<Vec<u16>>,
    group_of: Vec<u16>,
    groups: usize,
}

/// True when `C(n, k) >= target`.
fn binomial_at_least(n: usize, k: usize, target: u128) -> bool {
    if k > n {
        return target == 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        if c >= target {
            return true;
        }
        // c * (n-k+i) / i stays integral at every step.
        c = c * (n - k + i) as u128 / i as u128;
    }
    c >= target
}

impl PatternCodebook {
    /// Draws `2^b_p` distinct uniformly random `n_c`-subsets of `[0, n_p)`.
    ///
    /// Duplicates are resampled. All columns start in power group 0.
    pub fn generate(n_p: usize, n_c: usize, b_p: usize, seed: u64) -> Result<Self> {
        if n_c > n_p || n_p > 1 << 16 || b_p >= 32 {
            return Err(Error::InfeasibleCodebook { n_p, n_c, b_p });
        }
        let size = 1usize << b_p;
        if !binomial_at_least(n_p, n_c, size as u128) {
            return Err(Error::InfeasibleCodebook { n_p, n_c, b_p });
        }
        let mut rng = rng_from_seed(seed);
        let mut seen = HashSet::with_capacity(size);
        let mut columns = Vec::with_capacity(size);
        while columns.len() < size {
            let mut col: Vec<u16> = rand::seq::index::sample(&mut rng, n_p, n_c)
                .into_iter()
                .map(|p| p as u16)
                .collect();
            col.sort_unstable();
            if seen.insert(col.clone()) {
                columns.push(col);
            }
        }
        Ok(PatternCodebook {
            n_p,
            n_c,
            b_p,
            seed,
            columns,
            group_of: vec![0; size],
            groups: 1,
        })
    }

    /// Partitions the columns into `m` groups of equal size (±1) by a seeded
    /// random shuffle.
    pub fn assign_groups(mut self, m: usize, seed: u64) -> Result<Self> {
        let size = self.columns.len();
        if m == 0 || m > size || m > u16::MAX as usize {
            return Err(Error::out_of_range(
                "group count",
                m,
                format!("[1, {size}]"),
            ));
        }
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut rng_from_seed(seed));
        for (rank, &col) in order.iter().enumerate() {
            self.group_of[col] = (rank % m) as u16;
        }
        self.groups = m;
        Ok(self)
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn b_p(&self) -> usize {
        self.b_p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.groups
    }

    /// Sorted occupied positions of one pattern.
    pub fn occupied_positions(&self, pattern: usize) -> Result<&[u16]> {
        self.columns.get(pattern).map(Vec::as_slice).ok_or_else(|| {
            Error::out_of_range("pattern index", pattern, format!("[0, {})", self.len()))
        })
    }

    pub(crate) fn positions(&self, pattern: usize) -> &[u16] {
        &self.columns[pattern]
    }

    pub fn group_of(&self, pattern: usize) -> usize {
        self.group_of[pattern] as usize
    }

    /// Number of patterns in each group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.groups];
        for &g in &self.group_of {
            sizes[g as usize] += 1;
        }
        sizes
    }

    /// Writes the column layout.
    ///
    /// Layout: `n_p`, `n_c`, `B_p`, `seed` as little-endian `u64`, then every
    /// column's positions as little-endian `u16`. Group labels are not stored.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for field in [self.n_p as u64, self.n_c as u64, self.b_p as u64, self.seed] {
            w.write_all(&field.to_le_bytes())?;
        }
        for col in &self.columns {
            for &p in col {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`dump`](Self::dump) and checks every column
    /// invariant. The result has a single power group.
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)
            .map_err(|_| Error::CodebookFormat("truncated header".into()))?;
        let field = |i: usize| u64::from_le_bytes(header[8 * i..8 * i + 8].try_into().unwrap());
        let (n_p, n_c, b_p, seed) = (field(0), field(1), field(2), field(3));
        if b_p >= 32 || n_p > 1 << 16 || n_c > n_p {
            return Err(Error::CodebookFormat(format!(
                "bad header n_p={n_p} n_c={n_c} B_p={b_p}"
            )));
        }
        let (n_p, n_c, b_p) = (n_p as usize, n_c as usize, b_p as usize);
        let size = 1usize << b_p;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != size * n_c * 2 {
            return Err(Error::CodebookFormat(format!(
                "expected {} payload bytes, found {}",
                size * n_c * 2,
                body.len()
            )));
        }
        let mut columns = Vec::with_capacity(size);
        let mut seen = HashSet::with_capacity(size);
        for (i, raw) in body.chunks_exact(n_c * 2).enumerate() {
            let col: Vec<u16> = raw
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            let sorted = col.windows(2).all(|w| w[0] < w[1]);
            let in_range = col.iter().all(|&p| (p as usize) < n_p);
            if !sorted || !in_range {
                return Err(Error::CodebookFormat(format!("column {i} is malformed")));
            }
            if !seen.insert(col.clone()) {
                return Err(Error::CodebookFormat(format!("column {i} is a duplicate")));
            }
            columns.push(col);
        }
        Ok(PatternCodebook {
            n_p,
            n_c,
            b_p,
            seed,
            columns,
            group_of: vec![0; size],
            groups: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_pattern_single_column() {
        let cb = PatternCodebook::generate(4, 4, 0, 9).unwrap();
        assert_eq!(cb.len(), 1);
        assert_eq!(cb.occupied_positions(0).unwrap(), &[0, 1, 2, 3]);
        assert!(cb.occupied_positions(1).is_err());
    }

    #[test]
    fn full_scale_codebook() {
        let cb = PatternCodebook::generate(1875, 132, 13, 5).unwrap();
        assert_eq!(cb.len(), 8192);
        let distinct: HashSet<&[u16]> = (0..cb.len()).map(|i| cb.positions(i)).collect();
        assert_eq!(distinct.len(), 8192);
        for i in 0..cb.len() {
            let col = cb.positions(i);
            assert_eq!(col.len(), 132);
            assert!(col.windows(2).all(|w| w[0] < w[1]));
            assert!(*col.last().unwrap() < 1875);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = PatternCodebook::generate(64, 8, 6, 11).unwrap();
        let b = PatternCodebook::generate(64, 8, 6, 11).unwrap();
        let c = PatternCodebook::generate(64, 8, 6, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(
            a.occupied_positions(17).unwrap(),
            b.occupied_positions(17).unwrap()
        );
    }

    #[test]
    fn infeasible_rejected() {
        // C(6,3) = 20 < 32
        assert!(matches!(
            PatternCodebook::generate(6, 3, 5, 0),
            Err(Error::InfeasibleCodebook { .. })
        ));
        assert!(PatternCodebook::generate(6, 3, 4, 0).is_ok());
        assert!(PatternCodebook::generate(3, 4, 0, 0).is_err());
    }

    #[test]
    fn group_partitions() {
        let cb = PatternCodebook::generate(128, 8, 13, 1).unwrap();
        let one = cb.clone().assign_groups(1, 3).unwrap();
        assert!((0..one.len()).all(|i| one.group_of(i) == 0));

        let four = cb.clone().assign_groups(4, 3).unwrap();
        assert_eq!(four.group_sizes(), vec![2048; 4]);

        let three = cb.clone().assign_groups(3, 3).unwrap();
        let mut sizes = three.group_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2730, 2731, 2731]);

        assert_eq!(three, cb.clone().assign_groups(3, 3).unwrap());
        assert!(cb.clone().assign_groups(0, 3).is_err());
        assert!(cb.assign_groups(8193, 3).is_err());
    }

    #[test]
    fn dump_load_round_trip() {
        let cb = PatternCodebook::generate(300, 12, 7, 77).unwrap();
        let mut bytes = Vec::new();
        cb.dump(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 32 + 128 * 12 * 2);
        assert_eq!(&bytes[0..8], &300u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &77u64.to_le_bytes());
        let back = PatternCodebook::load(bytes.as_slice()).unwrap();
        assert_eq!(back, cb);
    }

    #[test]
    fn load_rejects_corruption() {
        let cb = PatternCodebook::generate(300, 12, 3, 77).unwrap();
        let mut bytes = Vec::new();
        cb.dump(&mut bytes).unwrap();

        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(PatternCodebook::load(truncated.as_slice()).is_err());

        // Duplicate column 0 into column 1.
        let mut dup = bytes.clone();
        let (start, len) = (32, 24);
        let first = dup[start..start + len].to_vec();
        dup[start + len..start + 2 * len].copy_from_slice(&first);
        assert!(PatternCodebook::load(dup.as_slice()).is_err());

        // Out-of-range position.
        let mut oob = bytes;
        oob[start + len - 2..start + len].copy_from_slice(&400u16.to_le_bytes());
        assert!(PatternCodebook::load(oob.as_slice()).is_err());
    }
}
