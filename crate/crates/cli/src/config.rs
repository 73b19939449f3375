//! Run configuration. Every seed is explicit and the canonical JSON form
//! is hashed, so a config hash names a run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use pacpriv_core::adversary::{log_checkpoints, GameParams, QueryStrategy};
use pacpriv_core::filter::SizeCorrection;
use pacpriv_core::learner::{BlobConfig, LearnerKind, ModelPool, OutputMode};
use pacpriv_core::{MiUnit, SecretSpace, Universe};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Labelled CSV: feature columns then an integer label column.
    Csv {
        path: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    /// Gaussian blobs.
    Synthetic { n: usize, classes: usize, feature_dim: usize, separation: f64, spread: f64, seed: u64 },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic { n: 200, classes: 3, feature_dim: 4, separation: 4.0, spread: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub space: u64,
    /// Secret draw for single-curator runs (service, distillation).
    pub secret: u64,
    /// Noise stream for single-curator runs.
    pub noise: u64,
    /// Master seed of game trials.
    pub trials: u64,
    /// Recorded in the pool key.
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub dataset: DatasetSource,
    /// Number of candidate training subsets.
    pub m: usize,
    /// Per-step budget, in `b_unit`.
    pub b: f64,
    pub b_unit: MiUnit,
    /// Halt threshold on the cumulative budget, in `b_unit`.
    pub halt_threshold: Option<f64>,
    pub learner: LearnerKind,
    pub output_mode: OutputMode,
    pub alpha: f64,
    pub correction: SizeCorrection,
    pub seeds: Seeds,
    pub strategy: QueryStrategy,
    pub horizon: u64,
    /// Empty means logarithmic checkpoints up to `horizon`.
    pub checkpoints: Vec<u64>,
    pub trials: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            m: 8,
            b: 2f64.powi(-12),
            b_unit: MiUnit::Nats,
            halt_threshold: None,
            learner: LearnerKind::NearestCentroid,
            output_mode: OutputMode::OneHot,
            alpha: 0.05,
            correction: SizeCorrection::None,
            seeds: Seeds::default(),
            strategy: QueryStrategy::MemberReplay,
            horizon: 200,
            checkpoints: Vec::new(),
            trials: 20,
        }
    }
}

impl GameConfig {
    pub fn from_json(s: &str) -> CliResult<Self> {
        Ok(serde_json::from_str::<Self>(s)?.normalized())
    }

    pub fn from_path(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Fills derived defaults so equivalent configs serialize identically.
    pub fn normalized(mut self) -> Self {
        if self.checkpoints.is_empty() {
            self.checkpoints = log_checkpoints(self.horizon);
        } else if let Some(&last) = self.checkpoints.last() {
            self.horizon = last;
        }
        self
    }

    /// Sorted-key compact JSON.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self.clone().normalized()).expect("config serializes");
        value.to_string()
    }

    /// SHA-256 of the canonical JSON, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.m < 2 || !self.m.is_multiple_of(2) {
            return bad(format!("m must be even and at least 2, got {}", self.m));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("per-step budget must be positive and finite, got {}", self.b));
        }
        if let Some(h) = self.halt_threshold {
            if h.is_nan() || h <= 0.0 {
                return bad(format!("halt threshold must be positive, got {h}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let cps = self.clone().normalized().checkpoints;
        if cps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if let DatasetSource::Synthetic { n, classes, feature_dim, .. } = self.dataset {
            if classes < 2 || feature_dim == 0 || n < 2 * classes {
                return bad(format!("synthetic data needs classes >= 2, features >= 1 and n >= 2*classes (n={n})"));
            }
        }
        Ok(())
    }

    pub fn b_nats(&self) -> f64 {
        self.b_unit.to_nats(self.b)
    }

    pub fn halt_nats(&self) -> Option<f64> {
        self.halt_threshold.map(|h| self.b_unit.to_nats(h))
    }

    pub fn load_universe(&self) -> CliResult<Universe> {
        Ok(match &self.dataset {
            DatasetSource::Csv { path, classes } => Universe::from_csv_path(path, *classes)?,
            DatasetSource::Synthetic { n, classes, feature_dim, separation, spread, seed } => {
                BlobConfig::new(*classes, *feature_dim, *separation).shifted(0.0, *spread).universe(*n, *seed)?
            }
        })
    }

    pub fn build_space(&self, universe: &Universe) -> CliResult<Arc<SecretSpace>> {
        Ok(Arc::new(SecretSpace::construct(universe, self.m, self.seeds.space)?))
    }

    /// Loads the pool at `path` (checking that it was trained for this
    /// universe and space) or trains a fresh one.
    pub fn pool(&self, universe: &Universe, space: &SecretSpace, path: Option<&Path>) -> CliResult<ModelPool> {
        match path {
            Some(p) => {
                let pool = ModelPool::load(p)?;
                if !pool.matches(universe, space, self.learner) {
                    return Err(CliError::Config(format!(
                        "pool {} was trained for a different universe, secret space or learner",
                        p.display()
                    )));
                }
                Ok(pool)
            }
            None => Ok(pacpriv_core::learner::train_pool(universe, space, self.learner, self.seeds.train)?),
        }
    }

    pub fn game_params(&self) -> GameParams {
        let cfg = self.clone().normalized();
        GameParams {
            b_nats: cfg.b_nats(),
            halt_threshold_nats: cfg.halt_nats(),
            trials: cfg.trials,
            checkpoints: cfg.checkpoints,
            strategy: cfg.strategy,
            output_mode: cfg.output_mode,
            seed: cfg.seeds.trials,
        }
    }
}

/// Parses an MI amount: a decimal number or `2^k` (e.g. `2^-12`).
pub fn parse_mi(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.strip_prefix("2^") {
        Some(exp) => exp.parse::<i32>().map(|k| 2f64.powi(k)).map_err(|e| format!("{s:?}: {e}"))?,
        None => s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v.is_nan() {
        return Err(format!("{s:?} is not a number"));
    }
    Ok(v)
}

/// Command-line view of [`GameConfig`]: an optional JSON file plus
/// per-field overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labelled CSV dataset (replaces synthetic data).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic dataset size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Per-step budget, e.g. `0.001` or `2^-12`.
    #[arg(long, value_parser = parse_mi)]
    pub b: Option<f64>,
    /// Unit of `--b` and `--halt`: nats or bits.
    #[arg(long)]
    pub unit: Option<MiUnit>,
    #[arg(long, value_parser = parse_mi)]
    pub halt: Option<f64>,
    #[arg(long)]
    pub learner: Option<LearnerKind>,
    #[arg(long)]
    pub output_mode: Option<OutputMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub correction: Option<SizeCorrection>,
    #[arg(long)]
    pub space_seed: Option<u64>,
    #[arg(long)]
    pub secret_seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub trial_seed: Option<u64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub strategy: Option<QueryStrategy>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Comma-separated checkpoint horizons.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<u64>>,
    #[arg(long)]
    pub trials: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<GameConfig> {
        let mut cfg = match &self.config {
            Some(p) => GameConfig::from_path(p)?,
            None => GameConfig::default(),
        };
        if let Some(path) = &self.csv {
            cfg.dataset = DatasetSource::Csv { path: path.clone(), classes: self.classes };
        }
        match &mut cfg.dataset {
            DatasetSource::Csv { classes, .. } => {
                if self.classes.is_some() {
                    *classes = self.classes;
                }
            }
            DatasetSource::Synthetic { n, classes, feature_dim, separation, spread, seed } => {
                set(n, self.n);
                set(classes, self.classes);
                set(feature_dim, self.feature_dim);
                set(separation, self.separation);
                set(spread, self.spread);
                set(seed, self.data_seed);
            }
        }
        set(&mut cfg.m, self.m);
        set(&mut cfg.b, self.b);
        set(&mut cfg.b_unit, self.unit);
        if self.halt.is_some() {
            cfg.halt_threshold = self.halt;
        }
        set(&mut cfg.learner, self.learner);
        set(&mut cfg.output_mode, self.output_mode);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.correction, self.correction);
        set(&mut cfg.seeds.space, self.space_seed);
        set(&mut cfg.seeds.secret, self.secret_seed);
        set(&mut cfg.seeds.noise, self.noise_seed);
        set(&mut cfg.seeds.trials, self.trial_seed);
        set(&mut cfg.seeds.train, self.train_seed);
        set(&mut cfg.strategy, self.strategy);
        if let Some(h) = self.horizon {
            cfg.horizon = h;
            cfg.checkpoints.clear();
        }
        if let Some(c) = &self.checkpoints {
            cfg.checkpoints = c.clone();
        }
        set(&mut cfg.trials, self.trials);
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T: Clone>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
