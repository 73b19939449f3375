//! The tractable secret space: `m` candidate training subsets of the
//! universe, each record belonging to exactly `m/2` of them, under a uniform
//! prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data, invalid, Result};
use crate::rng::{derived_rng, domain};
use crate::universe::Universe;

/// Default number of candidate subsets.
pub const DEFAULT_SUBSETS: usize = 128;

const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SecretSpace {
    n: usize,
    m: usize,
    seed: u64,
    /// Row-major `n x m`; entry `(i, j)` is true when record `i` is in subset `j`.
    membership: Vec<bool>,
}

impl SecretSpace {
    /// Assigns every record to `m/2` subsets chosen by a seeded partial
    /// Fisher-Yates shuffle of `0..m`.
    pub fn construct(universe: &Universe, m: usize, seed: u64) -> Result<Self> {
        Self::construct_for_records(universe.len(), m, seed)
    }

    pub fn construct_for_records(n: usize, m: usize, seed: u64) -> Result<Self> {
        check_m(m)?;
        if n == 0 {
            return Err(invalid("secret space needs at least one record"));
        }
        let half = m / 2;
        let mut rng = derived_rng(seed, domain::SPACE, 0);
        let mut membership = vec![false; n * m];
        let mut idx: Vec<usize> = (0..m).collect();
        for row in membership.chunks_mut(m) {
            for k in 0..half {
                let j = rng.random_range(k..m);
                idx.swap(k, j);
                row[idx[k]] = true;
            }
        }
        Ok(Self { n, m, seed, membership })
    }

    pub fn records(&self) -> usize {
        self.n
    }

    pub fn subsets(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn contains(&self, record: usize, subset: usize) -> bool {
        self.membership[record * self.m + subset]
    }

    /// Membership row of one record across all subsets.
    pub fn row(&self, record: usize) -> &[bool] {
        &self.membership[record * self.m..(record + 1) * self.m]
    }

    /// Record indices belonging to subset `j`, in increasing order.
    pub fn subset_members(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.contains(i, j)).collect()
    }

    pub fn subset_size(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.contains(i, j)).count()
    }

    /// Uniform prior over the subsets.
    pub fn prior(&self) -> Vec<f64> {
        vec![1.0 / self.m as f64; self.m]
    }

    /// Draws the realised secret index uniformly, deterministic in `seed`.
    pub fn sample_secret(&self, seed: u64) -> usize {
        derived_rng(seed, domain::SECRET, 0).random_range(0..self.m)
    }

    /// Checks the row-regularity invariant.
    pub fn validate(&self) -> Result<()> {
        check_m(self.m)?;
        if self.membership.len() != self.n * self.m {
            return Err(data("membership matrix has the wrong size"));
        }
        for i in 0..self.n {
            let count = self.row(i).iter().filter(|&&b| b).count();
            if count != self.m / 2 {
                return Err(data(format!("record {i} is in {count} subsets, expected {}", self.m / 2)));
            }
        }
        Ok(())
    }

    pub fn to_artifact(&self) -> SecretSpaceArtifact {
        let rows = (0..self.n)
            .map(|i| {
                let mut bytes = vec![0u8; self.m.div_ceil(8)];
                for (j, &b) in self.row(i).iter().enumerate() {
                    if b {
                        bytes[j / 8] |= 1 << (j % 8);
                    }
                }
                hex::encode(bytes)
            })
            .collect();
        SecretSpaceArtifact {
            format_version: ARTIFACT_VERSION,
            n: self.n,
            m: self.m,
            seed: self.seed,
            membership: rows,
        }
    }

    pub fn from_artifact(a: &SecretSpaceArtifact) -> Result<Self> {
        if a.format_version != ARTIFACT_VERSION {
            return Err(data(format!("unsupported secret space version {}", a.format_version)));
        }
        if a.membership.len() != a.n {
            return Err(data("membership row count does not match n"));
        }
        check_m(a.m)?;
        let mut membership = vec![false; a.n * a.m];
        for (i, row) in a.membership.iter().enumerate() {
            let bytes = hex::decode(row).map_err(|e| data(format!("row {i}: {e}")))?;
            if bytes.len() != a.m.div_ceil(8) {
                return Err(data(format!("row {i} has {} bytes", bytes.len())));
            }
            for j in 0..a.m {
                membership[i * a.m + j] = bytes[j / 8] >> (j % 8) & 1 == 1;
            }
        }
        let s = Self { n: a.n, m: a.m, seed: a.seed, membership };
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_artifact())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_artifact(&serde_json::from_str(s)?)
    }
}

fn check_m(m: usize) -> Result<()> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(invalid(format!("subset count m must be even and >= 2, got {m}")));
    }
    Ok(())
}

/// Serialized form: dimensions, the construction seed and one hex-encoded
/// bitmap per record (bit `j` set when the record is in subset `j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretSpaceArtifact {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub membership: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row_sums(s: &SecretSpace) -> Vec<usize> {
        (0..s.records()).map(|i| s.row(i).iter().filter(|&&b| b).count()).collect()
    }

    #[test]
    fn single_record_two_subsets() {
        for seed in 0..20 {
            let s = SecretSpace::construct_for_records(1, 2, seed).unwrap();
            assert!(s.contains(0, 0) ^ s.contains(0, 1));
        }
    }

    #[test]
    fn two_records_four_subsets() {
        let s = SecretSpace::construct_for_records(2, 4, 0).unwrap();
        assert_eq!(row_sums(&s), vec![2, 2]);
    }

    #[test]
    fn large_space_is_row_regular_and_columns_concentrate() {
        let s = SecretSpace::construct_for_records(1000, 128, 7).unwrap();
        assert!(row_sums(&s).iter().all(|&c| c == 64));
        // Column sizes are Binomial(1000, 1/2)-like: sd ~ 15.8.
        for j in 0..128 {
            let size = s.subset_size(j) as f64;
            assert!((size - 500.0).abs() < 80.0, "column {j} size {size}");
        }
        let total: usize = (0..128).map(|j| s.subset_size(j)).sum();
        assert_eq!(total, 1000 * 64);
    }

    #[test]
    fn rejects_odd_or_small_m() {
        assert!(SecretSpace::construct_for_records(5, 3, 0).is_err());
        assert!(SecretSpace::construct_for_records(5, 0, 0).is_err());
        assert!(SecretSpace::construct_for_records(5, 1, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = SecretSpace::construct_for_records(50, 16, 3).unwrap();
        let b = SecretSpace::construct_for_records(50, 16, 3).unwrap();
        let c = SecretSpace::construct_for_records(50, 16, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_secret_is_deterministic_and_balanced() {
        let s = SecretSpace::construct_for_records(3, 2, 0).unwrap();
        assert_eq!(s.sample_secret(42), s.sample_secret(42));
        let zeros = (0..100_000u64).filter(|&k| s.sample_secret(k) == 0).count();
        let freq = zeros as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn artifact_round_trip() {
        let s = SecretSpace::construct_for_records(37, 10, 11).unwrap();
        let back = SecretSpace::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn artifact_rejects_irregular_rows() {
        let s = SecretSpace::construct_for_records(2, 4, 1).unwrap();
        let mut a = s.to_artifact();
        a.membership[0] = "0f".into();
        assert!(SecretSpace::from_artifact(&a).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn every_row_has_half_the_subsets(n in 1usize..200, half in 1usize..40, seed in any::<u64>()) {
            let m = 2 * half;
            let s = SecretSpace::construct_for_records(n, m, seed).unwrap();
            prop_assert!(row_sums(&s).iter().all(|&c| c == half));
            let p = s.prior();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
