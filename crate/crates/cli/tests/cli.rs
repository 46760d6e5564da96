use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_corpus-audit");
const STUB: &str = env!("CARGO_BIN_EXE_stub-adapter");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("ADAPTER_URL")
        .env_remove("COMPLETION_URL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn synth(dir: &Path, reviews: usize) -> PathBuf {
    let path = dir.join("data.csv");
    let o = run(
        &[
            "synth",
            "--out",
            "data.csv",
            "--reviews",
            &reviews.to_string(),
            "--users",
            &(reviews / 3).to_string(),
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

const SMALL: [&str; 4] = ["--dim", "16", "--epochs", "2"];

fn audit(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["audit", "--in", "data.csv", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    run(&args, dir)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn audit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 150);
    assert_eq!(code(&audit(dir.path(), "a.json", &[])), 0);
    assert_eq!(code(&audit(dir.path(), "b.json", &[])), 0);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
    let r = json(&dir.path().join("a.json"));
    assert_eq!(r["reviews"], 150);
    assert!(r["semantic"]["avg_mst_edge"].is_number());
}

#[test]
fn csv_report_and_side_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 120);
    let o = audit(
        dir.path(),
        "r.csv",
        &[
            "--format",
            "csv",
            "--spans",
            "s.jsonl",
            "--sentiment-curve",
            "c.csv",
            "--d-nn-curve",
            "n.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(report.starts_with("metric,value\n"));
    assert!(report.contains("sentiment.d_sen,"));
    let spans = std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap();
    assert_eq!(spans.lines().count(), 120);
    let curve = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);
    let d_nn: Vec<f64> = std::fs::read_to_string(dir.path().join("n.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(d_nn.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn schema_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.csv"), "user,stars\nu,5\n").unwrap();
    let o = audit(dir.path(), "r.json", &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing column"));
    std::fs::write(dir.path().join("data.csv"), "user_id,rating,review\nu,7,hi\n").unwrap();
    assert_eq!(code(&audit(dir.path(), "r.json", &[])), 2);
}

#[test]
fn stdio_adapter_matches_builtin_backends() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 120);
    assert_eq!(code(&audit(dir.path(), "local.json", &[])), 0);
    let o = audit(
        dir.path(),
        "remote.json",
        &[
            "--sentiment-backend",
            "adapter",
            "--privacy-backend",
            "adapter",
            "--adapter-cmd",
            STUB,
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (local, remote) = (
        json(&dir.path().join("local.json")),
        json(&dir.path().join("remote.json")),
    );
    assert_eq!(remote["provenance"]["backends"]["sentiment"], "adapter");
    assert_eq!(local["sentiment"]["y"], remote["sentiment"]["y"]);
    assert_eq!(local["sentiment"]["d_sen"], remote["sentiment"]["d_sen"]);
    for key in [
        "mean_entity_count",
        "max_entity_density",
        "mean_nominal_density",
        "max_nominal_count",
    ] {
        assert_eq!(local["privacy"][key], remote["privacy"][key], "{key}");
    }
}

#[test]
fn failing_adapter_exits_3_but_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 90);
    let cmd = format!("{STUB} --fail");
    let o = audit(
        dir.path(),
        "r.json",
        &["--privacy-backend", "adapter", "--adapter-cmd", &cmd],
    );
    assert_eq!(code(&o), 3);
    let r = json(&dir.path().join("r.json"));
    assert!(r["privacy"].is_null());
    assert!(r["skipped"]["privacy"].as_str().unwrap().contains("backend"));
    assert!(r["sentiment"]["d_sen"].is_number());
}

#[test]
fn adapter_without_settings_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 60);
    assert_eq!(
        code(&audit(dir.path(), "r.json", &["--sentiment-backend", "adapter"])),
        3
    );
}

#[test]
fn http_adapter_via_env() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 90);
    let mut server = Command::new(STUB)
        .args(["--http", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    let url = first.trim().trim_start_matches("listening on ").to_string();
    let mut args = vec![
        "audit",
        "--in",
        "data.csv",
        "--out",
        "r.json",
        "--privacy-backend",
        "adapter",
    ];
    args.extend(SMALL);
    let o = Command::new(BIN)
        .args(&args)
        .current_dir(dir.path())
        .env("ADAPTER_URL", &url)
        .output()
        .unwrap();
    server.kill().ok();
    server.wait().ok();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["provenance"]["backends"]["privacy"], "adapter");
    assert!(r["privacy"]["mean_nominal_density"].is_number());
}

#[test]
fn compare_two_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 120);
    assert_eq!(code(&audit(dir.path(), "a.json", &[])), 0);
    assert_eq!(code(&audit(dir.path(), "b.json", &["--seed", "5"])), 0);
    let o = run(&["compare", "a.json", "b.json", "--format", "csv"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("metric,a,b,"));
    assert!(text.contains("sentiment.d_sen"));
    let o = run(
        &["compare", "a.json", "b.json", "--format", "md", "--out", "t.md"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(dir.path().join("t.md"))
        .unwrap()
        .starts_with("| metric |"));
    assert_eq!(code(&run(&["compare", "a.json"], dir.path())), 2);
    std::fs::write(dir.path().join("junk.json"), "{\"x\":1}").unwrap();
    assert_eq!(code(&run(&["compare", "a.json", "junk.json"], dir.path())), 2);
}

#[test]
fn generate_with_mock() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("gen.toml"),
        "batch_size = 10\nmax_cycles = 3\nall_pass_streak = 0\n[embedding]\ndimension = 16\n",
    )
    .unwrap();
    let o = run(
        &[
            "generate", "--config", "gen.toml", "--out", "g.jsonl", "--log", "log.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 30);
    let log = json(&dir.path().join("log.json"));
    assert_eq!(log["cycles"].as_array().unwrap().len(), 3);
    assert!(log["final_prompt"]
        .as_str()
        .unwrap()
        .contains("LENGTH DIVERSITY GUIDELINES"));

    let o = run(
        &["audit", "--in", "g.jsonl", "--out", "r.json", "--allow-empty-segments"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_http_without_endpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), "max_cycles = 1\n").unwrap();
    let o = run(
        &[
            "generate",
            "--config",
            "gen.toml",
            "--backend",
            "http",
            "--out",
            "g.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
    std::fs::write(
        dir.path().join("gen.toml"),
        "max_cycles = 2\n[endpoint]\nurl = \"http://127.0.0.1:9/\"\ntimeout_secs = 2\n",
    )
    .unwrap();
    let o = run(
        &[
            "generate",
            "--config",
            "gen.toml",
            "--backend",
            "http",
            "--out",
            "g.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
    assert_eq!(std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap(), "");
}

#[test]
fn outliers_and_embed_commands() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 150);
    let mut args = vec![
        "outliers",
        "--in",
        "data.csv",
        "--out",
        "curve.csv",
        "--theta-g",
        "-1.5",
    ];
    args.extend(SMALL);
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["theta_g"], -1.5);
    let rows = std::fs::read_to_string(dir.path().join("curve.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(rows as u64, report["candidates"].as_u64().unwrap());

    let mut args = vec!["embed", "--in", "data.csv", "--out", "model.txt"];
    args.extend(SMALL);
    assert_eq!(code(&run(&args, dir.path())), 0);
    let model = std::fs::read_to_string(dir.path().join("model.txt")).unwrap();
    let header: Vec<usize> = model
        .lines()
        .next()
        .unwrap()
        .split(' ')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(header[1], 16);
    assert_eq!(model.lines().count(), header[0] + 1);
}
