//! Log-domain posterior over the candidate subsets.

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    log_weights: Vec<f64>,
    step: u64,
}

/// `log(sum(exp(v)))`, with `-inf` for an all `-inf` input.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

impl BeliefState {
    pub fn uniform(m: usize) -> Self {
        let w = -(m as f64).ln();
        Self { log_weights: vec![w; m], step: 0 }
    }

    /// Belief from (possibly unnormalised) probabilities.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(data("belief probabilities must be finite and nonnegative"));
        }
        let mut b = Self { log_weights: p.iter().map(|x| x.ln()).collect(), step: 0 };
        b.normalize()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn probability(&self, s: usize) -> f64 {
        self.log_weights[s].exp()
    }

    /// Bayes update with per-secret log-likelihoods (shared constants are
    /// irrelevant). Leaves the belief untouched on error.
    pub fn update(&mut self, log_likelihoods: &[f64]) -> Result<()> {
        if log_likelihoods.len() != self.len() {
            return Err(data(format!(
                "{} likelihoods for a belief over {} secrets",
                log_likelihoods.len(),
                self.len()
            )));
        }
        if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(data("log-likelihoods must not be NaN or +inf"));
        }
        let mut next = self.clone();
        for (w, l) in next.log_weights.iter_mut().zip(log_likelihoods) {
            *w += l;
        }
        next.normalize()?;
        next.step += 1;
        *self = next;
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        let lse = logsumexp(&self.log_weights);
        if !lse.is_finite() {
            return Err(Error::Invariant("belief assigns zero probability to every secret".into()));
        }
        for w in &mut self.log_weights {
            *w -= lse;
        }
        Ok(())
    }

    /// Largest absolute probability difference to another belief.
    pub fn max_abs_deviation(&self, other: &BeliefState) -> f64 {
        self.log_weights.iter().zip(&other.log_weights).map(|(a, b)| (a.exp() - b.exp()).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_is_normalized() {
        let b = BeliefState::uniform(128);
        assert!(logsumexp(b.log_weights()).abs() < 1e-12);
        assert!((b.probability(5) - 1.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn excluded_secrets_stay_excluded() {
        let mut b = BeliefState::uniform(3);
        b.update(&[0.0, f64::NEG_INFINITY, -1.0]).unwrap();
        assert_eq!(b.probability(1), 0.0);
        b.update(&[0.0, 50.0, 0.0]).unwrap();
        assert_eq!(b.probability(1), 0.0);
        assert_eq!(b.step(), 2);
    }

    #[test]
    fn total_exclusion_is_rejected_atomically() {
        let mut b = BeliefState::uniform(2);
        let before = b.clone();
        assert!(b.update(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).is_err());
        assert_eq!(b, before);
        assert!(b.update(&[0.0]).is_err());
        assert!(b.update(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn half_nat_likelihood_gap() {
        let mut b = BeliefState::uniform(2);
        b.update(&[-0.5, 0.0]).unwrap();
        let expected = 0.5f64.exp() / (1.0 + 0.5f64.exp());
        assert!((b.probability(1) - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn stays_normalized_after_many_updates(
            updates in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 6), 1..200)
        ) {
            let mut b = BeliefState::uniform(6);
            for u in &updates {
                b.update(u).unwrap();
                prop_assert!(logsumexp(b.log_weights()).abs() <= 1e-12);
            }
        }
    }
}
