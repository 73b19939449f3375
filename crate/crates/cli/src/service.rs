//! Line-delimited JSON query service.
//!
//! One request per line, one reply per line. Every request on every
//! connection goes through a single mutex-guarded curator, so the step
//! counter is global and replies on a connection follow request order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use pacpriv_core::learner::{ModelPool, OutputMode};
use pacpriv_core::{Curator, Error, SecretSpace};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::GameConfig;
use crate::error::CliResult;

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Query { features: Vec<f64> },
    Status,
    Shutdown,
}

#[derive(Debug, Serialize)]
struct QueryReply<'a> {
    label: usize,
    response: &'a [f64],
    step: u64,
    cum_mi_bits: f64,
    mia_bound_pct: f64,
    dp_eps_equiv: Option<f64>,
}

#[derive(Debug, Serialize)]
struct StatusReply {
    step: u64,
    cum_mi_nats: f64,
    cum_mi_bits: f64,
    mia_bound_pct: f64,
    dp_eps_equiv: Option<f64>,
    dp_delta: f64,
    exhausted: bool,
    halt_threshold_nats: Option<f64>,
    per_query_nats: f64,
}

pub struct Service {
    curator: Curator,
    pool: ModelPool,
    b_nats: f64,
    mode: OutputMode,
    shut_down: bool,
}

impl Service {
    pub fn new(curator: Curator, pool: ModelPool, b_nats: f64, mode: OutputMode) -> Self {
        Self { curator, pool, b_nats, mode, shut_down: false }
    }

    /// Builds the universe, space and pool of `cfg` (loading the pool from
    /// `pool_path` when given) and a curator seeded by `cfg.seeds`.
    pub fn from_config(cfg: &GameConfig, pool_path: Option<&Path>) -> CliResult<Self> {
        cfg.validate()?;
        let universe = cfg.load_universe()?;
        let space: Arc<SecretSpace> = cfg.build_space(&universe)?;
        let pool = cfg.pool(&universe, &space, pool_path)?;
        let curator = Curator::with_sampled_secret(space, cfg.seeds.secret, cfg.seeds.noise, cfg.halt_nats())?;
        Ok(Self::new(curator, pool, cfg.b_nats(), cfg.output_mode))
    }

    pub fn curator(&self) -> &Curator {
        &self.curator
    }

    pub fn is_shut_down(&self) -> bool {
        self.shut_down
    }

    /// Handles one request line and returns its reply line (no newline).
    /// A failed request never changes the curator.
    pub fn handle_line(&mut self, line: &str) -> String {
        if self.shut_down {
            return error_reply("shutting_down", "the service is shutting down");
        }
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return error_reply("malformed_request", &e.to_string()),
        };
        match req {
            Request::Status => serde_json::to_string(&self.status()).expect("status serializes"),
            Request::Shutdown => {
                self.shut_down = true;
                json!({"ok": true, "op": "shutdown", "step": self.curator.accountant().steps()}).to_string()
            }
            Request::Query { features } => self.query(&features),
        }
    }

    fn status(&self) -> StatusReply {
        let s = self.curator.status();
        StatusReply {
            step: s.step,
            cum_mi_nats: s.cum_mi_nats,
            cum_mi_bits: s.cum_mi_bits,
            mia_bound_pct: 100.0 * s.mia_bound,
            dp_eps_equiv: s.dp_eps_equiv,
            dp_delta: s.dp_delta,
            exhausted: s.exhausted,
            halt_threshold_nats: s.halt_threshold_nats,
            per_query_nats: self.b_nats,
        }
    }

    fn query(&mut self, features: &[f64]) -> String {
        let step = self.curator.accountant().steps() + 1;
        let mech = match self.pool.predict_matrix(format!("s{step}"), features, self.mode) {
            Ok(m) => m,
            Err(e) => return error_reply("invalid_query", &e.to_string()),
        };
        match self.curator.answer_query(mech, self.b_nats) {
            Ok(release) => {
                let s = self.curator.status();
                serde_json::to_string(&QueryReply {
                    label: release.label,
                    response: &release.response,
                    step: release.step,
                    cum_mi_bits: s.cum_mi_bits,
                    mia_bound_pct: 100.0 * s.mia_bound,
                    dp_eps_equiv: s.dp_eps_equiv,
                })
                .expect("reply serializes")
            }
            Err(Error::BudgetExhausted { cumulative_nats, requested_nats, mia_bound }) => json!({
                "error": "budget_exhausted",
                "cum_mi_bits": pacpriv_core::budget::nats_to_bits(cumulative_nats),
                "requested_bits": pacpriv_core::budget::nats_to_bits(requested_nats),
                "mia_bound_pct": 100.0 * mia_bound,
                "step": self.curator.accountant().steps(),
            })
            .to_string(),
            Err(e @ Error::Invariant(_)) => {
                log::error!("{e}");
                error_reply("invariant_violation", &e.to_string())
            }
            Err(e) => error_reply("invalid_query", &e.to_string()),
        }
    }
}

fn error_reply(kind: &str, detail: &str) -> String {
    json!({"error": kind, "detail": detail}).to_string()
}

/// Serves one byte stream until EOF or a shutdown request. Returns whether
/// shutdown was requested. Lines that are not UTF-8 get an error reply.
pub fn serve_stream<R: BufRead, W: Write>(service: &Mutex<Service>, mut reader: R, mut writer: W) -> io::Result<bool> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(false);
        }
        let (reply, stop) = match std::str::from_utf8(&buf) {
            Ok(line) => {
                let line = line.trim_end_matches(['\n', '\r']);
                let mut svc = service.lock().unwrap_or_else(|p| p.into_inner());
                let reply = svc.handle_line(line);
                (reply, svc.is_shut_down())
            }
            Err(_) => (error_reply("malformed_request", "line is not valid UTF-8"), false),
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if stop {
            return Ok(true);
        }
    }
}

/// Accepts connections until some client sends `shutdown`. Each
/// connection runs on its own thread; all share `service`.
pub fn serve_tcp(service: Arc<Mutex<Service>>, listener: TcpListener) -> io::Result<()> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let service = service.clone();
        let stop = stop.clone();
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => return log::warn!("connection setup failed: {e}"),
            };
            match serve_stream(&service, reader, &stream) {
                Ok(true) => {
                    stop.store(true, Ordering::SeqCst);
                    // Wake the accept loop so it sees the flag.
                    let _ = TcpStream::connect(addr);
                }
                Ok(false) => {}
                Err(e) => log::warn!("connection {peer:?}: {e}"),
            }
        });
    }
    Ok(())
}
