//! Batch subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pacpriv_core::accounting::{
    guarantee_table, reference_budgets, reference_horizons, GuaranteeRow, DEFAULT_DP_DELTA,
};
use pacpriv_core::adversary::{run_game, CheckpointSummary, GameReport};
use pacpriv_core::budget::nats_to_bits;
use pacpriv_core::distill::{evaluate_students, label_pool, DistillManifest, DistillParams, StudentReport};
use pacpriv_core::learner::PoolKey;
use pacpriv_core::universe::{read_feature_csv, write_labelled_csv_with_dim};
use pacpriv_core::{Curator, Universe};
use serde::Serialize;

use crate::config::GameConfig;
use crate::error::{CliError, CliResult};

/// Grid and footer targets of a guarantee table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub budgets_nats: Vec<f64>,
    pub horizons: Vec<u64>,
    pub dp_targets: Vec<f64>,
    pub dp_delta: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            budgets_nats: reference_budgets(),
            horizons: reference_horizons(),
            dp_targets: vec![1.0, 8.0],
            dp_delta: DEFAULT_DP_DELTA,
        }
    }
}

pub const TABLE_HEADER: [&str; 11] = [
    "row_kind",
    "b_nats",
    "b_log2",
    "b_bits",
    "T",
    "B_total_nats",
    "B_total_bits",
    "mia_bound_pct",
    "dp_epsilon_equiv",
    "dp_epsilon_target",
    "dp_delta",
];

/// Writes the grid (`row_kind = cell`, horizon-major) followed by one
/// `max_T` row per (DP target, budget): the largest horizon whose
/// guarantee is at least as strong as that target.
pub fn write_guarantee_table<W: Write>(spec: &TableSpec, w: W) -> CliResult<()> {
    if spec.budgets_nats.is_empty() || spec.horizons.is_empty() {
        return Err(CliError::Config("need at least one budget and one horizon".into()));
    }
    let (cells, limits) = guarantee_table(&spec.budgets_nats, &spec.horizons, &spec.dp_targets, spec.dp_delta)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TABLE_HEADER).map_err(csv_err)?;
    let row = |kind: &str, r: &GuaranteeRow, target: Option<f64>| -> Vec<String> {
        vec![
            kind.to_string(),
            r.per_step_nats.to_string(),
            r.per_step_nats.log2().to_string(),
            nats_to_bits(r.per_step_nats).to_string(),
            r.steps.to_string(),
            r.total_mi_nats.to_string(),
            r.total_mi_bits.to_string(),
            (100.0 * r.mia_bound).to_string(),
            r.dp_epsilon_equiv.to_string(),
            target.map(|t| t.to_string()).unwrap_or_default(),
            r.dp_delta.to_string(),
        ]
    };
    for r in &cells {
        out.write_record(row("cell", r, None)).map_err(csv_err)?;
    }
    for l in &limits {
        let r = GuaranteeRow::uniform(l.per_step_nats, l.max_steps, l.dp_delta);
        out.write_record(row("max_T", &r, Some(l.dp_epsilon))).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Machine-readable companion of a game report.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub config: GameConfig,
    pub universe_hash: String,
    pub pool_key: PoolKey,
    pub trials: usize,
    pub horizon: u64,
    pub halted_trials: usize,
    /// Some trial stopped early on the halt threshold.
    pub partial: bool,
    pub max_mirror_deviation: f64,
    pub sound: bool,
    pub summaries: Vec<CheckpointSummary>,
}

pub struct GameRun {
    pub report: GameReport,
    pub summary: RunSummary,
}

/// Runs the configured game. With `audit_dir`, each trial's transcript is
/// written to `audit_dir/run_<hash prefix>/trial_NNNNN.jsonl`.
pub fn execute_game(cfg: &GameConfig, pool_path: Option<&Path>, audit_dir: Option<&Path>) -> CliResult<GameRun> {
    cfg.validate()?;
    let universe = cfg.load_universe()?;
    let space = cfg.build_space(&universe)?;
    let pool = cfg.pool(&universe, &space, pool_path)?;
    let hash = cfg.hash();
    let run_dir = audit_dir.map(|d| d.join(format!("run_{}", &hash[..12])));
    if let Some(d) = &run_dir {
        std::fs::create_dir_all(d)?;
    }
    let sink = |t: usize, curator: &Curator| -> pacpriv_core::Result<()> {
        if let Some(d) = &run_dir {
            let f = File::create(d.join(format!("trial_{t:05}.jsonl")))?;
            let mut w = BufWriter::new(f);
            curator.transcript().write_jsonl(&mut w)?;
            w.flush()?;
        }
        Ok(())
    };
    let params = cfg.game_params();
    log::info!("run {hash}: {} trials, horizon {}", params.trials, params.horizon());
    let report = run_game(&universe, &space, &pool, &params, Some(&sink))?;
    let summary = RunSummary {
        config_hash: hash,
        config: cfg.clone().normalized(),
        universe_hash: universe.content_hash(),
        pool_key: pool.key.clone(),
        trials: report.trials.len(),
        horizon: params.horizon(),
        halted_trials: report.halted_trials,
        partial: report.halted_trials > 0,
        max_mirror_deviation: report.max_mirror_deviation,
        sound: report.check_soundness().is_ok(),
        summaries: report.summaries.clone(),
    };
    Ok(GameRun { report, summary })
}

/// Writes `report.csv` and `summary.json` into `out_dir`.
pub fn write_game_outputs(run: &GameRun, out_dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let report_path = out_dir.join("report.csv");
    let summary_path = out_dir.join("summary.json");
    run.report.write_csv(BufWriter::new(File::create(&report_path)?))?;
    std::fs::write(&summary_path, serde_json::to_string_pretty(&run.summary)? + "\n")?;
    Ok((report_path, summary_path))
}

/// Runs, writes the outputs, then fails loudly if any checkpoint's
/// empirical accuracy is above the bound by more than three standard
/// errors.
pub fn run_game_cmd(
    cfg: &GameConfig,
    pool_path: Option<&Path>,
    out_dir: &Path,
    audit_dir: Option<&Path>,
) -> CliResult<RunSummary> {
    let run = execute_game(cfg, pool_path, audit_dir)?;
    write_game_outputs(&run, out_dir)?;
    if let Err(e) = run.report.check_soundness() {
        log::error!("SOUNDNESS VIOLATION in run {}: {e}", run.summary.config_hash);
        return Err(e.into());
    }
    if run.summary.partial {
        log::warn!("{} of {} trials halted on the budget threshold", run.summary.halted_trials, run.summary.trials);
    }
    Ok(run.summary)
}

/// Trains the pool for `cfg` and saves it.
pub fn build_pool_cmd(cfg: &GameConfig, out: &Path) -> CliResult<PoolKey> {
    cfg.validate()?;
    let universe = cfg.load_universe()?;
    let space = cfg.build_space(&universe)?;
    let pool = cfg.pool(&universe, &space, None)?;
    pool.save(out)?;
    Ok(pool.key)
}

pub fn distill_params(cfg: &GameConfig) -> DistillParams {
    DistillParams {
        b_nats: cfg.b_nats(),
        halt_threshold_nats: cfg.halt_nats(),
        alpha: cfg.alpha,
        correction: cfg.correction,
        secret_seed: cfg.seeds.secret,
        noise_seed: cfg.seeds.noise,
    }
}

#[derive(Debug, Clone)]
pub struct DistillArgs {
    /// Pool to label. Feature columns only, unless `labelled`.
    pub queries: PathBuf,
    /// The query CSV ends with a true-label column (used for evaluation only).
    pub labelled: bool,
    /// Labelled test set; with labelled queries, students are trained and scored.
    pub test: Option<PathBuf>,
    pub out_data: PathBuf,
    pub out_manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillOutput {
    pub config_hash: String,
    #[serde(flatten)]
    pub manifest: DistillManifest,
    pub students: Option<StudentReport>,
}

/// Labels the query pool through one curator, filters, exports the
/// retained set and a manifest, and optionally evaluates students.
pub fn distill_cmd(cfg: &GameConfig, pool_path: Option<&Path>, args: &DistillArgs) -> CliResult<DistillOutput> {
    cfg.validate()?;
    let universe = cfg.load_universe()?;
    let space = cfg.build_space(&universe)?;
    let pool = cfg.pool(&universe, &space, pool_path)?;

    let (queries, truth) = if args.labelled {
        let u = Universe::from_csv_path(&args.queries, Some(pool.classes))?;
        (u.features().to_vec(), Some(u.labels().to_vec()))
    } else {
        (read_feature_csv(File::open(&args.queries)?)?, None)
    };
    let run = label_pool(&pool, space, &queries, &distill_params(cfg))?;

    let (x, y) = run.retained_set();
    if x.is_empty() {
        log::warn!("no labelled point passed the filter; writing an empty dataset");
    }
    write_labelled_csv_with_dim(BufWriter::new(File::create(&args.out_data)?), run.feature_dim, &x, &y)?;

    let students = match (&truth, &args.test) {
        (Some(truth), Some(test)) => {
            let t = Universe::from_csv_path(test, Some(pool.classes))?;
            Some(evaluate_students(&run, truth, cfg.learner, t.features(), t.labels())?)
        }
        _ => None,
    };
    let out = DistillOutput { config_hash: cfg.hash(), manifest: run.manifest(), students };
    std::fs::write(&args.out_manifest, serde_json::to_string_pretty(&out)? + "\n")?;
    if out.manifest.truncated {
        log::warn!("budget exhausted after {} of {} queries; export is partial", out.manifest.labeled, queries.len());
    }
    Ok(out)
}
