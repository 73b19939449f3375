//! End-to-end runs of the `pacpriv` binary.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn pacpriv() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pacpriv"));
    c.env_remove("PACPRIV_LOG_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    pacpriv().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Three tight clusters at (0,0), (10,0) and (0,10).
fn write_clusters(path: &Path) {
    let mut s = String::from("x0,x1,label\n");
    for i in 0..30 {
        let j = f64::from(i % 5) * 0.05 - 0.1;
        let k = f64::from(i / 5) * 0.04 - 0.1;
        let (cx, cy) = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)][i as usize % 3];
        s.push_str(&format!("{},{},{}\n", cx + j, cy + k, i % 3));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn guarantee_table_single_cell() {
    let out = run(&["guarantee-table", "--budgets", "2^-10", "--horizons", "1", "--dp-targets", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "mia_bound_pct").unwrap();
    let kind = header.iter().position(|h| h == "row_kind").unwrap();
    let cells: Vec<_> = rdr.records().map(Result::unwrap).filter(|r| &r[kind] == "cell").collect();
    assert_eq!(cells.len(), 1);
    let pct: f64 = cells[0][col].parse().unwrap();
    assert!((pct - 52.21).abs() < 0.01, "{pct}");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"m": 7}"#).unwrap();
    let out = run(&["show-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(code(&run(&["show-config", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["show-config", "--b", "-1"])), 2);
    assert_eq!(code(&run(&["run-game", "--bogus"])), 2);
}

#[test]
fn run_game_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let game = |name: &str| {
        let out_dir = dir.path().join(name);
        let started = Instant::now();
        let out = run(&[
            "run-game",
            "--n",
            "200",
            "--m",
            "8",
            "--horizon",
            "200",
            "--trials",
            "20",
            "--b",
            "2^-8",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(started.elapsed() < Duration::from_secs(60));
        (std::fs::read(out_dir.join("report.csv")).unwrap(), std::fs::read(out_dir.join("summary.json")).unwrap())
    };
    let (report, summary) = game("a");
    assert_eq!(game("b"), (report.clone(), summary.clone()));

    let text = String::from_utf8(report).unwrap();
    assert!(text.starts_with("trial,checkpoint_T,empirical_acc,theoretical_bound,cum_B_bits"));
    let summary: Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(summary["sound"], true);
    assert_eq!(summary["trials"], 20);
    assert_eq!(summary["partial"], false);
}

#[test]
fn halted_game_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("g");
    let out = run(&[
        "run-game",
        "--n",
        "120",
        "--m",
        "8",
        "--horizon",
        "50",
        "--trials",
        "3",
        "--b",
        "2^-6",
        "--halt",
        "0.05",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["partial"], true);
    assert_eq!(summary["halted_trials"], 3);
}

#[test]
fn distill_with_alpha_near_one_keeps_every_label() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.csv");
    write_clusters(&data);
    let queries = dir.path().join("q.csv");
    std::fs::write(&queries, "x0,x1\n5,5\n1,1\n9,1\n0.5,9\n3,4\n").unwrap();
    let (out_data, manifest) = (dir.path().join("d.csv"), dir.path().join("m.json"));
    let out = run(&[
        "distill",
        "--csv",
        data.to_str().unwrap(),
        "--m",
        "8",
        "--b",
        "2^-4",
        "--alpha",
        "0.999999999999",
        "--queries",
        queries.to_str().unwrap(),
        "--out-data",
        out_data.to_str().unwrap(),
        "--out-manifest",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["labeled"], 5);
    assert_eq!(m["retained"], 5);
    assert_eq!(std::fs::read_to_string(&out_data).unwrap().lines().count(), 6);
}

fn serve_args<'a>(data: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["serve", "--csv", data, "--m", "8", "--b", "2^-10", "--unit", "bits"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn serve_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.csv");
    write_clusters(&data);
    let mut child = pacpriv()
        .args(serve_args(data.to_str().unwrap(), &[]))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let requests = concat!(
        "{\"op\":\"status\"}\n",
        "{\"op\":\"query\",\"features\":[10.0,0.0]}\n",
        "not json\n",
        "{\"op\":\"shutdown\"}\n",
    );
    child.stdin.take().unwrap().write_all(requests.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0);
    let replies: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), 4);
    assert_eq!(replies[0]["step"], 0);
    assert!((replies[0]["mia_bound_pct"].as_f64().unwrap() - 50.0).abs() < 1e-9);

    let q = &replies[1];
    assert_eq!(q["label"], 1);
    assert_eq!(q["step"], 1);
    assert!((q["cum_mi_bits"].as_f64().unwrap() - 2f64.powi(-10)).abs() < 1e-15);
    let response: Vec<f64> = q["response"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(response, vec![0.0, 1.0, 0.0]);

    assert_eq!(replies[2]["error"], "malformed_request");
    assert_eq!(replies[3]["op"], "shutdown");
}

#[test]
fn serve_over_tcp_shares_one_curator() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.csv");
    write_clusters(&data);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child =
        pacpriv().args(serve_args(data.to_str().unwrap(), &["--listen", &addr])).stdout(Stdio::null()).spawn().unwrap();
    let connect = || {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            match TcpStream::connect(&addr) {
                Ok(s) => return s,
                Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
                Err(e) => panic!("connect: {e}"),
            }
        }
    };
    let ask = |s: &mut TcpStream, line: &str| -> Value {
        s.write_all(line.as_bytes()).unwrap();
        s.write_all(b"\n").unwrap();
        let mut reply = String::new();
        BufReader::new(s.try_clone().unwrap()).read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    };
    let mut a = connect();
    let mut b = connect();
    assert_eq!(ask(&mut a, r#"{"op":"query","features":[0.0,10.0]}"#)["step"], 1);
    assert_eq!(ask(&mut b, r#"{"op":"query","features":[0.0,0.0]}"#)["step"], 2);
    assert_eq!(ask(&mut a, r#"{"op":"status"}"#)["step"], 2);
    assert_eq!(ask(&mut b, r#"{"op":"shutdown"}"#)["op"], "shutdown");

    let deadline = Instant::now() + Duration::from_secs(20);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        if Instant::now() > deadline {
            child.kill().unwrap();
            panic!("server did not stop after shutdown");
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(status.success());
}
