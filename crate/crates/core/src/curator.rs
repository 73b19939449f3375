//! The serving state machine: calibrate to the current belief, release,
//! update the belief, account the budget.
//!
//! Every step either commits completely (belief, transcript and ledger
//! together) or leaves the curator untouched. Once the halt threshold
//! would be crossed the curator refuses all further queries.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::accounting::{balanced_mia_bound, dp_epsilon_equivalent, DEFAULT_DP_DELTA};
use crate::belief::{logsumexp, BeliefState};
use crate::budget::{nats_to_bits, BudgetAccountant};
use crate::error::{data, Error, Result};
use crate::noise::{
    calibrate_with_probabilities, log_likelihoods, zero_direction_tolerance, MechanismMatrix, NoiseSpec,
};
use crate::quadrature;
use crate::rng::{derive_seed, domain};
use crate::secret_space::SecretSpace;
use crate::transcript::{Transcript, TranscriptEntry};

/// Slack allowed when auditing a step's conditional MI against its budget.
pub const MI_AUDIT_SLACK: f64 = 1e-3;

/// Which distribution the noise is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    /// The current posterior (correct composition).
    #[default]
    Posterior,
    /// The initial prior at every step. Kept only to demonstrate that
    /// ignoring the transcript breaks the per-step guarantee.
    StalePrior,
}

/// What a client sees after one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Release {
    pub step: u64,
    pub query_id: String,
    pub response: Vec<f64>,
    pub label: usize,
    pub spec: NoiseSpec,
    pub b_t: f64,
    pub cum_b_nats: f64,
    pub mia_bound: f64,
}

/// Ledger snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CuratorStatus {
    pub step: u64,
    pub cum_mi_nats: f64,
    pub cum_mi_bits: f64,
    pub mia_bound: f64,
    pub dp_eps_equiv: Option<f64>,
    pub dp_delta: f64,
    pub exhausted: bool,
    pub halt_threshold_nats: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Curator {
    space: Arc<SecretSpace>,
    secret_index: usize,
    belief: BeliefState,
    transcript: Transcript,
    accountant: BudgetAccountant,
    master_seed: u64,
    target: CalibrationTarget,
}

impl Curator {
    /// Curator holding the secret `secret_index`. `halt_threshold` is in nats.
    pub fn new(
        space: Arc<SecretSpace>,
        secret_index: usize,
        master_seed: u64,
        halt_threshold: Option<f64>,
    ) -> Result<Self> {
        if secret_index >= space.subsets() {
            return Err(data(format!("secret {secret_index} outside 0..{}", space.subsets())));
        }
        let belief = BeliefState::uniform(space.subsets());
        Ok(Self {
            space,
            secret_index,
            belief,
            transcript: Transcript::new(),
            accountant: BudgetAccountant::new(halt_threshold),
            master_seed,
            target: CalibrationTarget::Posterior,
        })
    }

    /// Curator whose secret is drawn from the prior with `secret_seed`.
    pub fn with_sampled_secret(
        space: Arc<SecretSpace>,
        secret_seed: u64,
        master_seed: u64,
        halt_threshold: Option<f64>,
    ) -> Result<Self> {
        let s = space.sample_secret(secret_seed);
        Self::new(space, s, master_seed, halt_threshold)
    }

    pub fn with_calibration_target(mut self, target: CalibrationTarget) -> Self {
        self.target = target;
        self
    }

    pub fn space(&self) -> &Arc<SecretSpace> {
        &self.space
    }

    /// The hidden secret. Exposed for audits and simulations only.
    pub fn secret_index(&self) -> usize {
        self.secret_index
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn accountant(&self) -> &BudgetAccountant {
        &self.accountant
    }

    pub fn status(&self) -> CuratorStatus {
        let cum = self.accountant.cumulative_nats();
        let bound = balanced_mia_bound(cum);
        let eps = dp_epsilon_equivalent(bound, DEFAULT_DP_DELTA);
        CuratorStatus {
            step: self.accountant.steps(),
            cum_mi_nats: cum,
            cum_mi_bits: nats_to_bits(cum),
            mia_bound: bound,
            dp_eps_equiv: eps.is_finite().then_some(eps),
            dp_delta: DEFAULT_DP_DELTA,
            exhausted: self.accountant.is_exhausted(),
            halt_threshold_nats: self.accountant.halt_threshold(),
        }
    }

    fn exhausted_error(&self, b_t: f64) -> Error {
        let cum = self.accountant.cumulative_nats();
        Error::BudgetExhausted { cumulative_nats: cum, requested_nats: b_t, mia_bound: balanced_mia_bound(cum) }
    }

    /// Noise the next step would use for `mech` at budget `b_t`.
    pub fn calibration_for(&self, mech: &MechanismMatrix, b_t: f64) -> Result<NoiseSpec> {
        self.check_mechanism(mech)?;
        let probs = match self.target {
            CalibrationTarget::Posterior => self.belief.probabilities(),
            CalibrationTarget::StalePrior => self.space.prior(),
        };
        calibrate_with_probabilities(mech, &probs, b_t)
    }

    fn check_mechanism(&self, mech: &MechanismMatrix) -> Result<()> {
        if mech.secrets() != self.space.subsets() {
            return Err(data(format!(
                "mechanism has {} rows but the secret space has {} subsets",
                mech.secrets(),
                self.space.subsets()
            )));
        }
        Ok(())
    }

    /// Answers one query with per-step budget `b_t` (nats).
    pub fn answer_query(&mut self, mech: impl Into<Arc<MechanismMatrix>>, b_t: f64) -> Result<Release> {
        let mech = mech.into();
        if self.accountant.is_exhausted() {
            return Err(self.exhausted_error(b_t));
        }
        let spec = self.calibration_for(&mech, b_t)?;
        if self.accountant.would_exceed(b_t) {
            self.accountant.mark_exhausted();
            return Err(self.exhausted_error(b_t));
        }
        let mut accountant = self.accountant.clone();
        accountant.accumulate(b_t)?;
        let step = accountant.steps();

        let noise = spec.sample(derive_seed(self.master_seed, domain::NOISE, step));
        let response: Vec<f64> = mech.row(self.secret_index).iter().zip(&noise).map(|(x, z)| x + z).collect();
        let label = argmax(&response);

        let ll = log_likelihoods(&spec, &mech, &response)?;
        if ll[self.secret_index] == f64::NEG_INFINITY {
            return Err(Error::Invariant(format!("step {step} would exclude the true secret")));
        }
        let mut belief = self.belief.clone();
        belief.update(&ll)?;

        let cum = accountant.cumulative_nats();
        let bound = balanced_mia_bound(cum);
        let release = Release {
            step,
            query_id: mech.query_id().to_string(),
            response: response.clone(),
            label,
            spec: spec.clone(),
            b_t,
            cum_b_nats: cum,
            mia_bound: bound,
        };
        self.transcript.push(TranscriptEntry {
            step,
            mech,
            spec,
            response,
            label,
            b_t,
            cum_b_nats: cum,
            mia_bound: bound,
        });
        self.belief = belief;
        self.accountant = accountant;
        Ok(release)
    }

    /// Recomputes the posterior from the prior and the whole transcript
    /// using explicit pseudo-inverse precisions, and returns the largest
    /// entrywise deviation from the incremental belief.
    pub fn belief_oracle_check(&self) -> f64 {
        let recomputed = posterior_from_transcript(&self.space.prior(), &self.transcript);
        recomputed.iter().zip(self.belief.probabilities()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Conditional MI (nats) that the next step would leak about the secret
    /// for `mech` at `b_t`, evaluated under the current posterior.
    pub fn conditional_mi_audit(&self, mech: &MechanismMatrix, b_t: f64) -> Result<f64> {
        let spec = self.calibration_for(mech, b_t)?;
        quadrature::mutual_information(mech, &self.belief.probabilities(), &spec)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// From-scratch Bayes posterior. Independent of the projection-based
/// update: forms `U diag(1/v) U^T` and the null-space projector explicitly.
pub fn posterior_from_transcript(prior: &[f64], transcript: &Transcript) -> Vec<f64> {
    let m = prior.len();
    let mut logp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    for entry in transcript.entries() {
        let d = entry.spec.dim();
        let mut precision = DMatrix::<f64>::zeros(d, d);
        let mut range = DMatrix::<f64>::zeros(d, d);
        for (u, &var) in entry.spec.basis.iter().zip(&entry.spec.variances) {
            if var > 0.0 {
                let u = DVector::from_column_slice(u);
                precision += &u * u.transpose() / var;
                range += &u * u.transpose();
            }
        }
        let null = DMatrix::<f64>::identity(d, d) - range;
        let r = DVector::from_column_slice(&entry.response);
        for (s, lp) in logp.iter_mut().enumerate().take(m) {
            let diff = &r - DVector::from_column_slice(entry.mech.row(s));
            let off = (&null * &diff).norm();
            if off > zero_direction_tolerance(diff.norm()) * (d as f64).sqrt() {
                *lp = f64::NEG_INFINITY;
            } else {
                *lp -= 0.5 * (diff.transpose() * &precision * &diff)[(0, 0)];
            }
        }
    }
    let z = logsumexp(&logp);
    logp.iter().map(|l| (l - z).exp()).collect()
}
