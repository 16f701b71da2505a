use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_prefelicit");
const FAST: [&str; 8] = ["--m-samples", "1500", "--m-outer", "48", "--m-inner", "8", "--candidates", "8"];

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let mut args = vec!["simulate", "--dims", "2", "--steps", "30", "--seed", "7", "--out-dir", out.to_str().unwrap()];
        args.extend(FAST);
        let (code, stdout) = run(&args);
        assert_eq!(code, 0);
        assert!(stdout.contains("theta_est"));
        assert!(stdout.contains("rmse"));
        assert!(stdout.contains("rsu"));
    }
    let csv_a = std::fs::read(a.join("run.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("run.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("run.ndjson")).unwrap(), std::fs::read(b.join("run.ndjson")).unwrap());
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 31);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["simulate", "--steps", "0"]).0, 2);
    assert_eq!(run(&["benchmark", "--runs", "0"]).0, 2);
    assert_eq!(run(&["simulate", "--weighting", "bogus"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
}

#[test]
fn runtime_errors_exit_one() {
    assert_eq!(run(&["simulate", "--steps", "2", "--theta", "0.5", "--lambda", "1"]).0, 1);
    assert_eq!(run(&["simulate", "--steps", "2", "--theta", "1.5,0.5", "--lambda", "1,1"]).0, 1);
    assert_eq!(run(&["replay", "--log", "/nonexistent/wal.ndjson"]).0, 1);
}

#[test]
fn benchmark_emits_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["benchmark", "--steps", "30", "--runs", "10", "--seed", "3", "--out-dir", dir.path().to_str().unwrap()];
    args.extend(["--m-samples", "400", "--m-outer", "16", "--m-inner", "4", "--candidates", "4"]);
    let (code, _) = run(&args);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], prefelicit::sim::AGGREGATE_CSV_HEADER.join(","));
    assert_eq!(lines.len(), 31);
    let nd = std::fs::read_to_string(dir.path().join("benchmark.ndjson")).unwrap();
    assert_eq!(nd.lines().count(), 30);
}

struct Served {
    child: Child,
    base: String,
}

fn serve(log: &Path) -> Served {
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0", "--log", log.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    Served { child, base }
}

fn terminate(mut s: Served) -> i32 {
    Command::new("kill").args(["-TERM", &s.child.id().to_string()]).status().unwrap();
    s.child.wait().unwrap().code().unwrap_or(-1)
}

#[test]
fn serve_recovers_after_sigterm_and_replay_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("wal.ndjson");
    let rt = tokio::runtime::Runtime::new().unwrap();
    let client = reqwest::Client::new();
    let body = serde_json::json!({
        "seed": 12, "mh": {"m_samples": 500, "burn_in": 50},
        "mi": {"m_outer": 16, "m_inner": 4, "n_candidates": 4},
    });

    let s = serve(&log);
    let (id, state) = rt.block_on(async {
        let health = client.get(format!("{}/health", s.base)).send().await.unwrap();
        assert_eq!(health.status().as_u16(), 200);
        let doc: serde_json::Value =
            client.post(format!("{}/sessions", s.base)).json(&body).send().await.unwrap().json().await.unwrap();
        let id = doc["id"].as_str().unwrap().to_string();
        for step in 1..=3 {
            let r = client
                .post(format!("{}/sessions/{id}/response", s.base))
                .json(&serde_json::json!({"step": step, "r": step % 2}))
                .send()
                .await
                .unwrap();
            assert_eq!(r.status().as_u16(), 200);
        }
        let state = client.get(format!("{}/sessions/{id}", s.base)).send().await.unwrap().text().await.unwrap();
        (id, state)
    });
    assert_eq!(terminate(s), 0);

    let s = serve(&log);
    let again = rt.block_on(async {
        client.get(format!("{}/sessions/{id}", s.base)).send().await.unwrap().text().await.unwrap()
    });
    assert_eq!(again, state);
    assert_eq!(terminate(s), 0);

    let (code, stdout) = run(&["replay", "--log", log.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");

    let text = std::fs::read_to_string(&log).unwrap();
    let flipped: String = text
        .lines()
        .map(|l| {
            if l.contains(r#""event":"response""#) && l.contains(r#""step":2"#) {
                l.replace(r#""r":0"#, r#""r":1"#)
            } else {
                l.to_string()
            }
        })
        .map(|l| l + "\n")
        .collect();
    assert_ne!(flipped, text);
    let bad = dir.path().join("flipped.ndjson");
    std::fs::write(&bad, flipped).unwrap();
    assert_eq!(run(&["replay", "--log", bad.to_str().unwrap()]).0, 3);

    let empty = dir.path().join("empty.ndjson");
    std::fs::File::create(&empty).unwrap().flush().unwrap();
    assert_eq!(run(&["replay", "--log", empty.to_str().unwrap()]).0, 0);
}
