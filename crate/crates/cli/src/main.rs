use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use pacpriv_cli::commands::{self, DistillArgs, TableSpec};
use pacpriv_cli::config::parse_mi;
use pacpriv_cli::service::{serve_stream, serve_tcp, Service};
use pacpriv_cli::{CliError, CliResult, ConfigArgs, LOG_DIR_ENV};
use pacpriv_core::MiUnit;

/// PAC-privacy accounting, membership-inference games and private
/// prediction service.
#[derive(Debug, Parser)]
#[command(name = "pacpriv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Guarantee grid over per-step budgets and horizons, as CSV.
    GuaranteeTable {
        /// Comma-separated per-step budgets (e.g. `2^-4,2^-8`).
        #[arg(long, value_delimiter = ',', value_parser = parse_mi)]
        budgets: Option<Vec<f64>>,
        #[arg(long, default_value = "nats")]
        unit: MiUnit,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',', default_value = "1,8")]
        dp_targets: Vec<f64>,
        #[arg(long, default_value_t = pacpriv_core::accounting::DEFAULT_DP_DELTA)]
        delta: f64,
        /// Output file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved config and its hash.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and save the model pool for a config.
    BuildPool {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo membership-inference game.
    RunGame {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Per-trial transcripts; defaults to the log directory variable.
        #[arg(long)]
        audit_dir: Option<PathBuf>,
    },
    /// Label a query pool privately, filter and export.
    Distill {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        /// The query CSV has a final true-label column.
        #[arg(long)]
        labelled: bool,
        /// Labelled test CSV for student evaluation.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out_data: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
    },
    /// Line-delimited JSON query service on stdio or TCP.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        pool: Option<PathBuf>,
        /// TCP address such as 127.0.0.1:7070; stdio if omitted.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn log_dir() -> Option<PathBuf> {
    std::env::var_os(LOG_DIR_ENV).map(PathBuf::from)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GuaranteeTable { budgets, unit, horizons, dp_targets, delta, out } => {
            let mut spec = TableSpec { dp_targets, dp_delta: delta, ..TableSpec::default() };
            if let Some(b) = budgets {
                spec.budgets_nats = b.into_iter().map(|v| unit.to_nats(v)).collect();
            }
            if let Some(h) = horizons {
                spec.horizons = h;
            }
            match out {
                Some(p) => commands::write_guarantee_table(&spec, BufWriter::new(std::fs::File::create(p)?)),
                None => commands::write_guarantee_table(&spec, io::stdout().lock()),
            }
        }
        Command::ShowConfig { config } => {
            let cfg = config.resolve()?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            println!("hash {}", cfg.hash());
            Ok(())
        }
        Command::BuildPool { config, out } => {
            let key = commands::build_pool_cmd(&config.resolve()?, &out)?;
            log::info!("pool for universe {} written to {}", key.universe_hash, out.display());
            Ok(())
        }
        Command::RunGame { config, pool, out_dir, audit_dir } => {
            let cfg = config.resolve()?;
            let audit = audit_dir.or_else(log_dir);
            let summary = commands::run_game_cmd(&cfg, pool.as_deref(), &out_dir, audit.as_deref())?;
            println!("run {} written to {}", summary.config_hash, out_dir.display());
            if summary.partial {
                return Err(CliError::Exhausted(format!("{} trials halted; report is partial", summary.halted_trials)));
            }
            Ok(())
        }
        Command::Distill { config, pool, queries, labelled, test, out_data, out_manifest } => {
            let cfg = config.resolve()?;
            let args = DistillArgs { queries, labelled, test, out_data, out_manifest };
            let out = commands::distill_cmd(&cfg, pool.as_deref(), &args)?;
            println!(
                "labelled {} retained {} cum_B_bits {:e} mia_bound {:.4}%",
                out.manifest.labeled,
                out.manifest.retained,
                out.manifest.cum_b_bits,
                100.0 * out.manifest.mia_bound
            );
            if out.manifest.truncated {
                return Err(CliError::Exhausted("pool labelling stopped early; export is partial".into()));
            }
            Ok(())
        }
        Command::Serve { config, pool, listen } => {
            let cfg = config.resolve()?;
            let service = Arc::new(Mutex::new(Service::from_config(&cfg, pool.as_deref())?));
            match listen {
                Some(addr) => {
                    let listener =
                        TcpListener::bind(&addr).map_err(|e| CliError::Config(format!("bind {addr}: {e}")))?;
                    log::info!("listening on {}", listener.local_addr()?);
                    serve_tcp(service.clone(), listener)?;
                }
                None => {
                    serve_stream(&service, io::stdin().lock(), io::stdout().lock())?;
                }
            }
            if let Some(dir) = log_dir() {
                write_service_log(&dir, &cfg.hash(), &service)?;
            }
            Ok(())
        }
    }
}

fn write_service_log(dir: &Path, hash: &str, service: &Mutex<Service>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("serve_{}.jsonl", &hash[..12]));
    let mut w = BufWriter::new(std::fs::File::create(&path)?);
    let svc = service.lock().unwrap_or_else(|p| p.into_inner());
    svc.curator().transcript().write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
