//! Labelling a public pool through the curator and exporting the filtered
//! set for student training.
//!
//! The exported labels are post-processing of the private releases, so the
//! whole set inherits the run's cumulative budget; the manifest records it.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accounting::{balanced_mia_bound, dp_epsilon_equivalent, DEFAULT_DP_DELTA};
use crate::budget::nats_to_bits;
use crate::curator::Curator;
use crate::error::{invalid, Error, Result};
use crate::filter::{filter_response_with, FilterDecision, SizeCorrection};
use crate::learner::{LearnerKind, Model, ModelPool, OutputMode, PoolKey};
use crate::secret_space::SecretSpace;
use crate::universe::{write_labelled_csv_with_dim, Universe};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillParams {
    pub b_nats: f64,
    pub halt_threshold_nats: Option<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub correction: SizeCorrection,
    pub secret_seed: u64,
    pub noise_seed: u64,
}

/// One labelled pool point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPoint {
    pub index: usize,
    pub features: Vec<f64>,
    pub decision: FilterDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillRun {
    pub params: DistillParams,
    pub feature_dim: usize,
    pub classes: usize,
    pub points: Vec<LabeledPoint>,
    pub truncated: bool,
    pub cum_b_nats: f64,
    pub pool_key: PoolKey,
}

impl DistillRun {
    pub fn labeled(&self) -> usize {
        self.points.len()
    }

    pub fn retained(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.points.iter().filter(|p| p.decision.retained)
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for p in self.retained() {
            c[p.decision.noisy_label] += 1;
        }
        c
    }

    pub fn manifest(&self) -> DistillManifest {
        let bound = balanced_mia_bound(self.cum_b_nats);
        let eps = dp_epsilon_equivalent(bound, DEFAULT_DP_DELTA);
        DistillManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            alpha: self.params.alpha,
            correction: self.params.correction,
            b_nats: self.params.b_nats,
            b_bits: nats_to_bits(self.params.b_nats),
            steps: self.labeled() as u64,
            cum_b_nats: self.cum_b_nats,
            cum_b_bits: nats_to_bits(self.cum_b_nats),
            mia_bound: bound,
            dp_delta: DEFAULT_DP_DELTA,
            dp_epsilon_equiv: eps.is_finite().then_some(eps),
            labeled: self.labeled(),
            retained: self.retained_count(),
            class_counts: self.class_counts(),
            truncated: self.truncated,
            pool_key: self.pool_key.clone(),
        }
    }

    /// Retained features and noisy labels.
    pub fn retained_set(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.retained().map(|p| (p.features.clone(), p.decision.noisy_label)).unzip()
    }

    /// Every labelled point with its noisy label, filtered or not.
    pub fn raw_set(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.points.iter().map(|p| (p.features.clone(), p.decision.noisy_label)).unzip()
    }

    /// Writes `data_csv` (retained rows only) and `manifest_json`.
    pub fn export(&self, data_csv: impl AsRef<Path>, manifest_json: impl AsRef<Path>) -> Result<DistillManifest> {
        let (f, l) = self.retained_set();
        if f.is_empty() {
            log::warn!("no labelled point passed the filter; writing an empty dataset");
        }
        let file = std::fs::File::create(data_csv)?;
        write_labelled_csv_with_dim(std::io::BufWriter::new(file), self.feature_dim, &f, &l)?;
        let manifest = self.manifest();
        std::fs::write(manifest_json, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

/// Audit trail of an exported set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillManifest {
    pub format_version: u32,
    pub alpha: f64,
    pub correction: SizeCorrection,
    pub b_nats: f64,
    pub b_bits: f64,
    pub steps: u64,
    pub cum_b_nats: f64,
    pub cum_b_bits: f64,
    pub mia_bound: f64,
    pub dp_delta: f64,
    pub dp_epsilon_equiv: Option<f64>,
    pub labeled: usize,
    pub retained: usize,
    pub class_counts: Vec<usize>,
    pub truncated: bool,
    pub pool_key: PoolKey,
}

/// Labels `queries` one by one through a fresh curator (hard-label mode)
/// and filters each release. Stops early, flagging truncation, if the
/// budget runs out.
pub fn label_pool(
    pool: &ModelPool,
    space: Arc<SecretSpace>,
    queries: &[Vec<f64>],
    params: &DistillParams,
) -> Result<DistillRun> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {}", params.alpha)));
    }
    let mut curator =
        Curator::with_sampled_secret(space, params.secret_seed, params.noise_seed, params.halt_threshold_nats)?;
    let mut points = Vec::with_capacity(queries.len());
    let mut truncated = false;
    for (index, x) in queries.iter().enumerate() {
        let mech = pool.predict_matrix(format!("p{index}"), x, OutputMode::OneHot)?;
        let release = match curator.answer_query(mech, params.b_nats) {
            Ok(r) => r,
            Err(Error::BudgetExhausted { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let decision =
            filter_response_with(release.query_id, &release.response, &release.spec, params.alpha, params.correction)?;
        points.push(LabeledPoint { index, features: x.clone(), decision });
    }
    Ok(DistillRun {
        params: params.clone(),
        feature_dim: pool.feature_dim,
        classes: pool.classes,
        points,
        truncated,
        cum_b_nats: curator.accountant().cumulative_nats(),
        pool_key: pool.key.clone(),
    })
}

/// Accuracy figures of a run against known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentReport {
    pub labeled: usize,
    pub retained: usize,
    pub raw_label_accuracy: f64,
    pub retained_label_accuracy: f64,
    pub raw_student_accuracy: f64,
    pub filtered_student_accuracy: f64,
}

/// Trains one student on every noisy label and one on the retained subset,
/// and scores both on `(test_x, test_y)`. `truth[i]` is the true label of
/// pool point `i`.
pub fn evaluate_students(
    run: &DistillRun,
    truth: &[usize],
    kind: LearnerKind,
    test_x: &[Vec<f64>],
    test_y: &[usize],
) -> Result<StudentReport> {
    let label_acc = |pts: &mut dyn Iterator<Item = &LabeledPoint>| {
        let (mut hit, mut n) = (0usize, 0usize);
        for p in pts {
            n += 1;
            hit += usize::from(truth[p.index] == p.decision.noisy_label);
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    };
    let student = |(f, l): (Vec<Vec<f64>>, Vec<usize>)| -> Result<f64> {
        if f.is_empty() {
            return Ok(0.0);
        }
        let u = Universe::new(f, l, run.classes)?;
        Ok(Model::fit_universe(kind, &u)?.accuracy(test_x, test_y))
    };
    Ok(StudentReport {
        labeled: run.labeled(),
        retained: run.retained_count(),
        raw_label_accuracy: label_acc(&mut run.points.iter()),
        retained_label_accuracy: label_acc(&mut run.retained()),
        raw_student_accuracy: student(run.raw_set())?,
        filtered_student_accuracy: student(run.retained_set())?,
    })
}
