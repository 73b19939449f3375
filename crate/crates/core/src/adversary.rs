//! The informed adversary and the membership-inference game.
//!
//! The adversary sees everything public: the secret space, the pool (hence
//! every mechanism matrix), the published calibration and each response. It
//! runs the same Bayes update as the curator and declares record `i` a
//! member iff its posterior membership probability strictly exceeds 1/2,
//! which is the optimal decision for a balanced prior.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::balanced_mia_bound;
use crate::belief::BeliefState;
use crate::budget::nats_to_bits;
use crate::curator::Curator;
use crate::error::{invalid, Error, Result};
use crate::learner::{ModelPool, OutputMode};
use crate::noise::{log_likelihoods, MechanismMatrix, NoiseSpec};
use crate::rng::{derive_seed, derived_rng, domain};
use crate::secret_space::SecretSpace;
use crate::transcript::TranscriptEntry;
use crate::universe::Universe;

/// Number of Monte Carlo standard errors tolerated above the bound.
pub const SOUNDNESS_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct AdversaryState {
    space: Arc<SecretSpace>,
    belief: BeliefState,
    targets: Vec<usize>,
}

impl AdversaryState {
    /// Adversary attacking every record of the universe.
    pub fn new(space: Arc<SecretSpace>) -> Self {
        let targets = (0..space.records()).collect();
        Self::with_targets(space, targets)
    }

    pub fn with_targets(space: Arc<SecretSpace>, targets: Vec<usize>) -> Self {
        let belief = BeliefState::uniform(space.subsets());
        Self { space, belief, targets }
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Test hook: start from an arbitrary belief.
    pub fn set_belief(&mut self, belief: BeliefState) -> Result<()> {
        if belief.len() != self.space.subsets() {
            return Err(invalid("belief length does not match the secret space"));
        }
        self.belief = belief;
        Ok(())
    }

    /// Public Bayes update from one release.
    pub fn observe(&mut self, mech: &MechanismMatrix, spec: &NoiseSpec, response: &[f64]) -> Result<()> {
        let ll = log_likelihoods(spec, mech, response)?;
        self.belief.update(&ll)
    }

    pub fn observe_entry(&mut self, entry: &TranscriptEntry) -> Result<()> {
        self.observe(&entry.mech, &entry.spec, &entry.response)
    }

    /// Posterior probability that record `i` is in the secret subset.
    pub fn membership_probability(&self, i: usize) -> f64 {
        let (inside, outside) = split_mass(self.space.row(i), &self.belief.probabilities());
        inside / (inside + outside)
    }

    /// 1 iff the membership probability strictly exceeds 1/2. Compared as
    /// member mass against non-member mass, so exact ties stay ties.
    pub fn decide_membership(&self, i: usize) -> u8 {
        let (inside, outside) = split_mass(self.space.row(i), &self.belief.probabilities());
        u8::from(inside > outside)
    }

    /// Fraction of targets whose membership in subset `secret` is guessed
    /// correctly.
    pub fn accuracy_against(&self, secret: usize) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        let probs = self.belief.probabilities();
        let correct = self
            .targets
            .iter()
            .filter(|&&i| {
                let row = self.space.row(i);
                let (inside, outside) = split_mass(row, &probs);
                (inside > outside) == row[secret]
            })
            .count();
        correct as f64 / self.targets.len() as f64
    }

    /// Probability, under the current posterior, that the Bayes decisions
    /// are correct, averaged over targets. Its expectation over transcripts
    /// equals that of [`Self::accuracy_against`] when the posterior is exact,
    /// with far less spread near ties.
    pub fn expected_accuracy(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        let probs = self.belief.probabilities();
        let total: f64 = self
            .targets
            .iter()
            .map(|&i| {
                let (inside, outside) = split_mass(self.space.row(i), &probs);
                inside.max(outside) / (inside + outside)
            })
            .sum();
        total / self.targets.len() as f64
    }
}

fn split_mass(row: &[bool], probs: &[f64]) -> (f64, f64) {
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (&member, &p) in row.iter().zip(probs) {
        if member {
            inside += p;
        } else {
            outside += p;
        }
    }
    (inside, outside)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    /// Query the records of the universe themselves, cycling through fresh
    /// random permutations.
    #[default]
    MemberReplay,
    /// Query points drawn uniformly from the universe's bounding box.
    RandomInput,
}

impl std::str::FromStr for QueryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "member_replay" | "replay" => Ok(Self::MemberReplay),
            "random_input" | "random" => Ok(Self::RandomInput),
            other => Err(invalid(format!("unknown query strategy {other:?}"))),
        }
    }
}

/// Parameters of a Monte Carlo game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    /// Per-step budget, nats.
    pub b_nats: f64,
    pub halt_threshold_nats: Option<f64>,
    pub trials: usize,
    /// Sorted checkpoint horizons; the last one is the number of steps.
    pub checkpoints: Vec<u64>,
    pub strategy: QueryStrategy,
    pub output_mode: OutputMode,
    pub seed: u64,
}

impl GameParams {
    pub fn horizon(&self) -> u64 {
        self.checkpoints.last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.b_nats.is_finite() && self.b_nats > 0.0) {
            return Err(invalid(format!("per-step budget must be positive, got {}", self.b_nats)));
        }
        if self.trials == 0 {
            return Err(invalid("need at least one trial"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("checkpoints must be strictly increasing"));
        }
        Ok(())
    }
}

/// `0, 1, 2, 5, 10, 20, 50, ...` up to and including `max`.
pub fn log_checkpoints(max: u64) -> Vec<u64> {
    let mut out = vec![0];
    let mut decade = 1u64;
    'outer: loop {
        for k in [1, 2, 5] {
            let t = k * decade;
            if t >= max {
                break 'outer;
            }
            out.push(t);
        }
        decade *= 10;
    }
    if max > 0 {
        out.push(max);
    }
    out
}

/// One trial's state at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialCheckpoint {
    pub trial: usize,
    pub checkpoint_t: u64,
    pub empirical_acc: f64,
    pub expected_acc: f64,
    pub theoretical_bound: f64,
    pub cum_b_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub checkpoint_t: u64,
    pub trials: usize,
    pub mean_acc: f64,
    pub std_err: f64,
    pub mean_expected_acc: f64,
    pub expected_std_err: f64,
    pub theoretical_bound: f64,
    pub cum_b_nats: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub secret: usize,
    pub steps: u64,
    pub halted_at: Option<u64>,
    pub max_mirror_deviation: f64,
    pub checkpoints: Vec<TrialCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameReport {
    pub params: GameParams,
    pub trials: Vec<TrialOutcome>,
    pub summaries: Vec<CheckpointSummary>,
    pub max_mirror_deviation: f64,
    pub halted_trials: usize,
}

impl GameReport {
    pub fn rows(&self) -> impl Iterator<Item = &TrialCheckpoint> {
        self.trials.iter().flat_map(|t| &t.checkpoints)
    }

    /// `trial,checkpoint_T,empirical_acc,theoretical_bound,cum_B_bits`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "checkpoint_T", "empirical_acc", "theoretical_bound", "cum_B_bits"])
            .map_err(csv_err)?;
        for r in self.rows() {
            out.write_record([
                r.trial.to_string(),
                r.checkpoint_t.to_string(),
                r.empirical_acc.to_string(),
                r.theoretical_bound.to_string(),
                r.cum_b_bits.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Fails if any checkpoint's mean accuracy exceeds the bound by more
    /// than [`SOUNDNESS_SIGMAS`] standard errors.
    pub fn check_soundness(&self) -> Result<()> {
        match self.summaries.iter().find(|s| !s.within_bound) {
            None => Ok(()),
            Some(s) => Err(Error::Invariant(format!(
                "empirical MIA accuracy {:.6} (se {:.2e}) exceeds bound {:.6} at T={}",
                s.mean_acc, s.std_err, s.theoretical_bound, s.checkpoint_t
            ))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Source of per-step mechanism matrices for a game.
enum QuerySource<'a> {
    Cached(Vec<Arc<MechanismMatrix>>),
    Random { pool: &'a ModelPool, lo: Vec<f64>, hi: Vec<f64>, mode: OutputMode },
}

/// Callback handed each finished trial and its curator.
pub type TrialSink<'a> = dyn Fn(usize, &Curator) -> Result<()> + Sync + 'a;

/// Runs `params.trials` independent games in parallel. `sink` sees every
/// finished curator (for audit logs) in an unspecified order.
pub fn run_game(
    universe: &Universe,
    space: &Arc<SecretSpace>,
    pool: &ModelPool,
    params: &GameParams,
    sink: Option<&TrialSink<'_>>,
) -> Result<GameReport> {
    params.validate()?;
    if pool.len() != space.subsets() {
        return Err(invalid("pool size does not match the secret space"));
    }
    if space.records() != universe.len() {
        return Err(invalid("secret space does not match the universe"));
    }
    let source = match params.strategy {
        QueryStrategy::MemberReplay => {
            let mats = universe
                .features()
                .par_iter()
                .enumerate()
                .map(|(i, x)| pool.predict_matrix(format!("u{i}"), x, params.output_mode).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            QuerySource::Cached(mats)
        }
        QueryStrategy::RandomInput => {
            let dim = universe.feature_dim();
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for x in universe.features() {
                for k in 0..dim {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
            QuerySource::Random { pool, lo, hi, mode: params.output_mode }
        }
    };

    let trials = (0..params.trials)
        .into_par_iter()
        .map(|t| {
            let (outcome, curator) = run_trial(t, space, &source, params)?;
            if let Some(sink) = sink {
                sink(t, &curator)?;
            }
            Ok(outcome)
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries =
        params.checkpoints.iter().map(|&ct| summarize(ct, params.b_nats, &trials)).filter(|s| s.trials > 0).collect();
    let max_mirror_deviation = trials.iter().map(|t| t.max_mirror_deviation).fold(0.0, f64::max);
    let halted_trials = trials.iter().filter(|t| t.halted_at.is_some()).count();
    Ok(GameReport { params: params.clone(), trials, summaries, max_mirror_deviation, halted_trials })
}

fn run_trial(
    t: usize,
    space: &Arc<SecretSpace>,
    source: &QuerySource<'_>,
    params: &GameParams,
) -> Result<(TrialOutcome, Curator)> {
    let trial_seed = derive_seed(params.seed, domain::TRIAL, t as u64);
    let mut curator = Curator::with_sampled_secret(
        space.clone(),
        derive_seed(trial_seed, domain::SECRET, 0),
        trial_seed,
        params.halt_threshold_nats,
    )?;
    let secret = curator.secret_index();
    let mut adversary = AdversaryState::new(space.clone());
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut query_rng = derived_rng(trial_seed, domain::QUERY, 0);

    let mut checkpoints = Vec::with_capacity(params.checkpoints.len());
    let mut next_cp = params.checkpoints.iter().peekable();
    let mut halted_at = None;
    let mut max_dev = 0.0f64;
    let record = |step: u64, adv: &AdversaryState, cum: f64| TrialCheckpoint {
        trial: t,
        checkpoint_t: step,
        empirical_acc: adv.accuracy_against(secret),
        expected_acc: adv.expected_accuracy(),
        theoretical_bound: balanced_mia_bound(cum),
        cum_b_bits: nats_to_bits(cum),
    };

    let horizon = params.horizon();
    let mut step = 0u64;
    while next_cp.peek() == Some(&&0) {
        checkpoints.push(record(0, &adversary, 0.0));
        next_cp.next();
    }
    while step < horizon {
        let mech = match source {
            QuerySource::Cached(mats) => {
                if order.is_empty() {
                    order = (0..mats.len()).collect();
                    order.shuffle(&mut derived_rng(trial_seed, domain::QUERY, 1 + epoch));
                    order.reverse();
                    epoch += 1;
                }
                mats[order.pop().expect("refilled above")].clone()
            }
            QuerySource::Random { pool, lo, hi, mode } => {
                let x: Vec<f64> =
                    lo.iter().zip(hi).map(|(&a, &b)| if b > a { query_rng.random_range(a..b) } else { a }).collect();
                Arc::new(pool.predict_matrix(format!("r{step}"), &x, *mode)?)
            }
        };
        match curator.answer_query(mech, params.b_nats) {
            Ok(_) => {}
            Err(Error::BudgetExhausted { .. }) => {
                halted_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
        step += 1;
        let entry = curator.transcript().last().expect("just answered");
        adversary.observe_entry(entry)?;
        max_dev = max_dev.max(adversary.belief().max_abs_deviation(curator.belief()));
        if next_cp.peek() == Some(&&step) {
            checkpoints.push(record(step, &adversary, curator.accountant().cumulative_nats()));
            next_cp.next();
        }
    }
    let outcome = TrialOutcome { trial: t, secret, steps: step, halted_at, max_mirror_deviation: max_dev, checkpoints };
    Ok((outcome, curator))
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

fn summarize(checkpoint_t: u64, b: f64, trials: &[TrialOutcome]) -> CheckpointSummary {
    let rows: Vec<&TrialCheckpoint> =
        trials.iter().filter_map(|t| t.checkpoints.iter().find(|c| c.checkpoint_t == checkpoint_t)).collect();
    let (mean, std_err) = mean_and_se(&rows.iter().map(|c| c.empirical_acc).collect::<Vec<_>>());
    let (mean_expected_acc, expected_std_err) = mean_and_se(&rows.iter().map(|c| c.expected_acc).collect::<Vec<_>>());
    let cum = b * checkpoint_t as f64;
    let bound = balanced_mia_bound(cum);
    CheckpointSummary {
        checkpoint_t,
        trials: rows.len(),
        mean_acc: mean,
        std_err,
        mean_expected_acc,
        expected_std_err,
        theoretical_bound: bound,
        cum_b_nats: cum,
        within_bound: mean <= bound + SOUNDNESS_SIGMAS * std_err + 1e-12,
    }
}
