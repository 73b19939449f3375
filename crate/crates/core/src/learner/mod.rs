//! Deterministic trainers and the offline model pool.
//!
//! One model is trained per candidate subset ahead of time; a query then
//! costs `m` inferences, which yields the mechanism matrix. Hard-label mode
//! emits one-hot rows, so queries on which every subset model agrees are
//! exactly stable and receive no noise.

mod centroid;
mod logistic;
pub mod synthetic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use centroid::CentroidModel;
pub use logistic::{softmax_in_place, LogisticModel};
pub use synthetic::{make_synthetic_universe, BlobConfig};

use crate::curator::argmax;
use crate::error::{data, invalid, Error, Result};
use crate::noise::MechanismMatrix;
use crate::secret_space::SecretSpace;
use crate::universe::Universe;

/// Version tag of the serialized pool format.
pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    NearestCentroid,
    LogisticGd,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::NearestCentroid => "nearest_centroid",
            LearnerKind::LogisticGd => "logistic_gd",
        })
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "nearest_centroid" | "centroid" => Ok(Self::NearestCentroid),
            "logistic_gd" | "logistic" => Ok(Self::LogisticGd),
            other => Err(invalid(format!("unknown learner {other:?}"))),
        }
    }
}

/// Form of each mechanism row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Standard basis vector of the predicted class.
    #[default]
    OneHot,
    /// Softmax of the model scores (experimental comparison mode).
    Scores,
}

impl FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "one_hot" | "onehot" | "hard" => Ok(Self::OneHot),
            "scores" | "soft" => Ok(Self::Scores),
            other => Err(invalid(format!("unknown output mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    NearestCentroid(CentroidModel),
    LogisticGd(LogisticModel),
}

impl Model {
    pub fn fit(kind: LearnerKind, features: &[&[f64]], labels: &[usize], classes: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Training("cannot train on an empty subset".into()));
        }
        Ok(match kind {
            LearnerKind::NearestCentroid => Model::NearestCentroid(CentroidModel::fit(features, labels, classes)?),
            LearnerKind::LogisticGd => Model::LogisticGd(LogisticModel::fit(features, labels, classes)?),
        })
    }

    /// Trains on a whole universe.
    pub fn fit_universe(kind: LearnerKind, universe: &Universe) -> Result<Self> {
        let f: Vec<&[f64]> = universe.features().iter().map(Vec::as_slice).collect();
        Self::fit(kind, &f, universe.labels(), universe.classes())
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Model::NearestCentroid(m) => m.scores(x),
            Model::LogisticGd(m) => m.scores(x),
        }
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn output(&self, x: &[f64], mode: OutputMode, classes: usize) -> Vec<f64> {
        match mode {
            OutputMode::OneHot => one_hot(self.predict(x), classes),
            OutputMode::Scores => {
                let mut s = self.scores(x);
                softmax_in_place(&mut s);
                s
            }
        }
    }

    /// Fraction of `(x, y)` pairs predicted correctly.
    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let hits = features.iter().zip(labels).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / features.len() as f64
    }
}

pub fn one_hot(k: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[k] = 1.0;
    v
}

/// Identity of a pool: what it was trained on and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolKey {
    pub universe_hash: String,
    pub m: usize,
    pub space_seed: u64,
    pub train_seed: u64,
    pub learner_kind: LearnerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub format_version: u32,
    pub key: PoolKey,
    pub classes: usize,
    pub feature_dim: usize,
    pub models: Vec<Model>,
}

/// Trains one model per subset of `space`, in parallel. Every trainer is
/// deterministic, so `train_seed` only labels the run.
pub fn train_pool(universe: &Universe, space: &SecretSpace, kind: LearnerKind, train_seed: u64) -> Result<ModelPool> {
    if space.records() != universe.len() {
        return Err(data(format!(
            "secret space covers {} records but the universe has {}",
            space.records(),
            universe.len()
        )));
    }
    let models = (0..space.subsets())
        .into_par_iter()
        .map(|j| {
            let members = space.subset_members(j);
            let f: Vec<&[f64]> = members.iter().map(|&i| universe.features()[i].as_slice()).collect();
            let l: Vec<usize> = members.iter().map(|&i| universe.labels()[i]).collect();
            Model::fit(kind, &f, &l, universe.classes()).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("subset {j}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelPool {
        format_version: POOL_FORMAT_VERSION,
        key: PoolKey {
            universe_hash: universe.content_hash(),
            m: space.subsets(),
            space_seed: space.seed(),
            train_seed,
            learner_kind: kind,
        },
        classes: universe.classes(),
        feature_dim: universe.feature_dim(),
        models,
    })
}

impl ModelPool {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.feature_dim {
            return Err(data(format!("query has {} features, pool expects {}", query.len(), self.feature_dim)));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(data("query features must be finite"));
        }
        Ok(())
    }

    /// Mechanism matrix of one query: row `j` is model `j`'s output.
    pub fn predict_matrix(
        &self,
        query_id: impl Into<String>,
        query: &[f64],
        mode: OutputMode,
    ) -> Result<MechanismMatrix> {
        self.check_query(query)?;
        let outputs: Vec<f64> = self.models.iter().flat_map(|m| m.output(query, mode, self.classes)).collect();
        MechanismMatrix::new(query_id, self.len(), self.classes, outputs)
    }

    /// Hard labels of every model on every query: `table[q][j]`.
    pub fn label_table(&self, queries: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
        queries.iter().try_for_each(|q| self.check_query(q))?;
        Ok(queries.par_iter().map(|q| self.models.iter().map(|m| m.predict(q)).collect()).collect())
    }

    /// One-hot mechanism matrix from a row of [`Self::label_table`].
    pub fn matrix_from_labels(&self, query_id: impl Into<String>, labels: &[usize]) -> Result<MechanismMatrix> {
        let outputs = labels.iter().flat_map(|&k| one_hot(k, self.classes)).collect();
        MechanismMatrix::new(query_id, labels.len(), self.classes, outputs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let pool: Self = serde_json::from_str(s)?;
        if pool.format_version != POOL_FORMAT_VERSION {
            return Err(data(format!("unsupported pool format version {}", pool.format_version)));
        }
        if pool.models.len() != pool.key.m {
            return Err(data("pool model count does not match its key"));
        }
        Ok(pool)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Whether this pool was trained for `universe` and `space`.
    pub fn matches(&self, universe: &Universe, space: &SecretSpace, kind: LearnerKind) -> bool {
        self.key.universe_hash == universe.content_hash()
            && self.key.m == space.subsets()
            && self.key.space_seed == space.seed()
            && self.key.learner_kind == kind
    }
}
