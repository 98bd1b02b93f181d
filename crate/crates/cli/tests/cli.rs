use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(p: &str) -> String {
    fixtures().join(p).to_string_lossy().into_owned()
}

fn mmvu(args: &[&str], env: &[(&str, &str)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmvu"));
    cmd.args(args).current_dir(cwd);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("MMVU_")) {
        cmd.env_remove(k);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn eval_args<'a>(bench: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["eval", "--benchmark", bench, "--out", out]
}

#[test]
fn flag_beats_env_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"replay": "{}", "workers": 0}}"#, fx("responses.jsonl")),
    )
    .unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let bench = fx("benchmark.jsonl");
    let mut args = eval_args(&bench, "out.jsonl");
    args.extend(["--config", &cfg]);

    // workers 0 from the file is rejected
    assert_eq!(code(&mmvu(&args, &[], dir.path())), 3);
    // the environment overrides the file
    assert_eq!(code(&mmvu(&args, &[("MMVU_WORKERS", "2")], dir.path())), 0);
    // the flag overrides the environment
    let mut with_flag = args.clone();
    with_flag.extend(["--workers", "0"]);
    assert_eq!(
        code(&mmvu(&with_flag, &[("MMVU_WORKERS", "2")], dir.path())),
        3
    );
    let mut with_flag = args.clone();
    with_flag.extend(["--workers", "3"]);
    assert_eq!(
        code(&mmvu(&with_flag, &[("MMVU_WORKERS", "0")], dir.path())),
        0
    );
}

#[test]
fn transport_layers_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"replay": "does-not-exist.jsonl"}"#).unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let bench = fx("benchmark.jsonl");
    let replay = fx("responses.jsonl");
    let mut args = eval_args(&bench, "out.jsonl");
    args.extend(["--config", &cfg]);
    assert_eq!(code(&mmvu(&args, &[], dir.path())), 1);
    assert_eq!(
        code(&mmvu(&args, &[("MMVU_REPLAY", &replay)], dir.path())),
        0
    );
    // two transports in one layer
    let both = [
        ("MMVU_REPLAY", replay.as_str()),
        ("MMVU_BASE_URL", "http://127.0.0.1:1"),
    ];
    assert_eq!(code(&mmvu(&args, &both, dir.path())), 3);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"wokers": 2}"#).unwrap();
    let o = mmvu(
        &[
            "validate",
            "--benchmark",
            &fx("benchmark.jsonl"),
            "--config",
            "cfg.json",
        ],
        &[],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn unreachable_endpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixtures().join("benchmark.jsonl")).unwrap();
    let one_pair: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    let bench = dir.path().join("b.jsonl");
    std::fs::write(&bench, one_pair).unwrap();
    let bench = bench.to_string_lossy().into_owned();
    let images = fx("");
    let mut args = eval_args(&bench, "out.jsonl");
    args.extend([
        "--base-url",
        "http://127.0.0.1:1",
        "--images",
        &images,
        "--workers",
        "2",
    ]);
    let o = mmvu(&args, &[("MMVU_TIMEOUT_SECS", "2")], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"item_id\": 3}\n").unwrap();
    assert_eq!(
        code(&mmvu(
            &["validate", "--benchmark", "bad.jsonl"],
            &[],
            dir.path()
        )),
        1
    );
    let o = mmvu(&["attn", "--dump", &fx("benchmark.jsonl")], &[], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mmvu(&["--help"], &[], dir.path())), 0);
    let v = mmvu(&["--version"], &[], dir.path());
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("mmvu "));
    assert_eq!(code(&mmvu(&[], &[], dir.path())), 3);
}

#[test]
fn golden_mismatch_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bench = fx("benchmark.jsonl");
    let mut args = eval_args(&bench, "out.jsonl");
    let replay = fx("responses.jsonl");
    args.extend(["--replay", &replay]);
    assert_eq!(code(&mmvu(&args, &[], d)), 0);
    assert_eq!(
        code(&mmvu(
            &["metrics", "--outcomes", "out.jsonl", "--out-dir", "m"],
            &[],
            d
        )),
        0
    );
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.md");
    let mut altered = std::fs::read_to_string(&golden).unwrap();
    altered = altered.replacen("50.00", "50.01", 1);
    std::fs::write(d.join("altered.md"), altered).unwrap();
    let o = mmvu(
        &[
            "report",
            "--metrics",
            "m/metrics.json",
            "--out-dir",
            "r",
            "--golden",
            "altered.md",
        ],
        &[],
        d,
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    let g = golden.to_string_lossy().into_owned();
    let o = mmvu(
        &[
            "report",
            "--metrics",
            "m/metrics.json",
            "--out-dir",
            "r",
            "--golden",
            &g,
        ],
        &[],
        d,
    );
    assert_eq!(code(&o), 0);
}

#[test]
fn metrics_json_carries_the_micro_rates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bench = fx("benchmark.jsonl");
    let replay = fx("responses.jsonl");
    let mut args = eval_args(&bench, "out.jsonl");
    args.extend(["--replay", &replay, "--strategy", "cgr"]);
    assert_eq!(code(&mmvu(&args, &[], d)), 0);
    assert_eq!(
        code(&mmvu(
            &["metrics", "--outcomes", "out.jsonl", "--out-dir", "m"],
            &[],
            d
        )),
        0
    );
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("m/metrics.json")).unwrap()).unwrap();
    let ra = doc["metrics"]["micro"]["ra"].as_f64().unwrap();
    let mr = doc["metrics"]["micro"]["mr"].as_f64().unwrap();
    approx::assert_abs_diff_eq!(ra, 0.5, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(mr, 1.0 / 3.0, epsilon = 1e-12);
    let csv = std::fs::read_to_string(d.join("m/report.csv")).unwrap();
    assert!(csv.starts_with("metric,Char/Num,"));
}

#[test]
fn var_writes_a_png_of_the_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmvu(
        &[
            "var",
            "--image",
            &fx("images/shape.png"),
            "--dump",
            &fx("dumps/shape-a-pos.bin"),
            "--out",
            "r.png",
            "--alpha",
            "0.7",
            "--beta",
            "0.3",
        ],
        &[],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let img = image::open(dir.path().join("r.png")).unwrap();
    let src = image::open(fixtures().join("images/shape.png")).unwrap();
    assert_eq!((img.width(), img.height()), (src.width(), src.height()));
    assert!(!dir.path().join("r.json").exists());
    let bad = mmvu(
        &[
            "var",
            "--image",
            &fx("images/shape.png"),
            "--dump",
            &fx("dumps/shape-a-pos.bin"),
            "--out",
            "r.png",
            "--kernel",
            "4",
        ],
        &[],
        dir.path(),
    );
    assert_ne!(code(&bad), 0);
}
