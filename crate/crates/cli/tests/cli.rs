use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperclone_core::checkpoint::{load, save};
use hyperclone_core::cloning::Strategy;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hyperclone"));
    c.env("HCLN_THREADS", "2");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?}\nstdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    ok(&path, &["init", "--preset", "micro-lm", "--seed", "3", "--out", "src.hcln"]);
    (dir, path)
}

const SHORT_TRAIN: &[&str] = &[
    "--steps",
    "12",
    "--warmup",
    "3",
    "--decay-end",
    "12",
    "--batch-size",
    "2",
    "--context-len",
    "16",
    "--eval-interval",
    "6",
    "--track-interval",
    "6",
    "--seed",
    "5",
];

fn train_args<'a>(head: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = vec!["train"];
    v.extend_from_slice(head);
    v.extend_from_slice(SHORT_TRAIN);
    v.extend_from_slice(&["--out-dir", out]);
    v
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn clone_then_verify_passes() {
    let (_g, d) = setup();
    let o = ok(&d, &["clone", "src.hcln", "--embed-fold", "2", "--out", "dst.hcln"]);
    let table = stdout(&o);
    assert!(table.contains("d_model") && table.contains("64"), "{table}");
    let o = ok(&d, &["verify", "src.hcln", "dst.hcln", "--batches", "4", "--report", "rep.json"]);
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["pass"], true);
    assert!(rep["logit_max_abs_diff"].as_f64().unwrap() <= 1e-10);
    assert_eq!(fs::read_to_string(d.join("rep.json")).unwrap().trim(), stdout(&o).trim());
}

#[test]
fn clone_of_tiny_doubles_every_width() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init", "--preset", "tiny", "--out", "tiny.hcln"]);
    ok(
        d,
        &[
            "clone",
            "tiny.hcln",
            "--embed-fold",
            "2",
            "--ffn-fold",
            "2",
            "--head-count-fold",
            "2",
            "--strategy",
            "symmetric",
            "--out",
            "big.hcln",
        ],
    );
    let (s, b) = (load::<f64>(&d.join("tiny.hcln")).unwrap(), load::<f64>(&d.join("big.hcln")).unwrap());
    assert_eq!(b.config.d_model, 2 * s.config.d_model);
    assert_eq!(b.config.d_ffn, 2 * s.config.d_ffn);
    assert_eq!(b.config.n_heads, 2 * s.config.n_heads);
    assert_eq!(b.config.d_head, s.config.d_head);
}

#[test]
fn noisy_clone_records_snr() {
    let (_g, d) = setup();
    ok(d.as_path(), &["clone", "src.hcln", "--strategy", "noisy_symmetric", "--snr-db", "10", "--seed", "9", "--out", "n.hcln"]);
    let r = load::<f64>(&d.join("n.hcln")).unwrap().receipt.unwrap();
    assert_eq!(r.expansion.strategy, Strategy::NoisySymmetric);
    assert_eq!(r.expansion.snr_db, 10.0);
    ok(&d, &["verify", "src.hcln", "n.hcln", "--batches", "2"]);
}

#[test]
fn corrupted_clone_fails_and_names_the_tensor() {
    let (_g, d) = setup();
    ok(&d, &["clone", "src.hcln", "--out", "dst.hcln"]);
    let mut ck = load::<f64>(&d.join("dst.hcln")).unwrap();
    ck.params.get_mut("blocks.1.ffn.w_up").unwrap().as_mut_slice()[5] += 1.0;
    save(&d.join("bad.hcln"), &ck).unwrap();
    let o = run(&d, &["verify", "src.hcln", "bad.hcln", "--batches", "2"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["pass"], false);
    assert_eq!(rep["first_failing"], "blocks.1.ffn");
    let err = stderr(&o);
    assert!(err.contains("blocks.1.ffn.w_up"), "{err}");
    assert!(!err.contains("blocks.0."), "{err}");
}

#[test]
fn identity_clone_warns_and_copies() {
    let (_g, d) = setup();
    let o = ok(
        &d,
        &[
            "clone",
            "src.hcln",
            "--embed-fold",
            "1",
            "--ffn-fold",
            "1",
            "--head-count-fold",
            "1",
            "--head-dim-fold",
            "1",
            "--out",
            "id.hcln",
        ],
    );
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    let (s, c) = (load::<f64>(&d.join("src.hcln")).unwrap(), load::<f64>(&d.join("id.hcln")).unwrap());
    for ((na, a), (nb, b)) in s.params.named().into_iter().zip(c.params.named()) {
        assert_eq!(na, nb);
        let bits = |m: &[f64]| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.as_slice()), bits(b.as_slice()), "{na}");
    }
    let o = ok(&d, &["verify", "src.hcln", "id.hcln", "--batches", "2"]);
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["logit_max_abs_diff"], 0.0);
    assert!(rep["snapshots"].as_array().unwrap().iter().all(|s| s["max_abs_diff"] == 0.0));

    let o = run(&d, &["analyze", "id.hcln", "--metric", "symmetry"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn analyze_clone_metrics() {
    let (_g, d) = setup();
    ok(&d, &["clone", "src.hcln", "--out", "dst.hcln"]);
    let o = ok(&d, &["analyze", "dst.hcln", "--metric", "symmetry"]);
    let csv = stdout(&o);
    let cos = column(&csv, "cosine");
    assert!(!cos.is_empty());
    assert!(cos.iter().all(|c| (c.parse::<f64>().unwrap() - 1.0).abs() <= 1e-12), "{csv}");

    let o = ok(&d, &["analyze", "dst.hcln", "--metric", "spectrum", "--tensors", "blocks.*.ffn.w_up", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let n = r["values"].as_array().unwrap().len() as u64;
        assert!(r["zero_count"].as_u64().unwrap() * 2 >= n, "{r}");
    }

    let o = run(&d, &["analyze", "dst.hcln", "--metric", "symmetry", "--tensors", "blocks.0.ffn.w_up,nope.w"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.w"), "{}", stderr(&o));
}

#[test]
fn training_is_deterministic_and_shares_data_order() {
    let (_g, d) = setup();
    ok(&d, &["clone", "src.hcln", "--out", "dst.hcln"]);
    ok(&d, &train_args(&["dst.hcln", "--track-symmetry"], "a"));
    ok(&d, &train_args(&["dst.hcln", "--track-symmetry"], "b"));
    for f in ["log.csv", "symmetry.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let sym = fs::read_to_string(d.join("a/symmetry.csv")).unwrap();
    let step0: Vec<f64> =
        sym.lines().skip(1).filter(|l| l.starts_with("0,")).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(!step0.is_empty());
    assert!(step0.iter().all(|&c| c == 1.0), "{sym}");

    ok(&d, &train_args(&["--init", "random", "--preset", "micro-lm", "--init-seed", "1"], "r"));
    let clone_log = fs::read_to_string(d.join("a/log.csv")).unwrap();
    let random_log = fs::read_to_string(d.join("r/log.csv")).unwrap();
    assert_eq!(column(&clone_log, "batch_hash"), column(&random_log, "batch_hash"));
    assert_ne!(column(&clone_log, "train_loss"), column(&random_log, "train_loss"));
}

#[test]
fn config_file_overrides_and_flags_win() {
    let (_g, d) = setup();
    fs::write(d.join("tc.json"), r#"{"total_steps": 4, "batch_size": 2, "context_len": 8, "eval_interval": 2}"#).unwrap();
    ok(&d, &["train", "src.hcln", "--config", "tc.json", "--out-dir", "a"]);
    let log = fs::read_to_string(d.join("a/log.csv")).unwrap();
    assert_eq!(column(&log, "step").last().unwrap(), "4");
    ok(&d, &["train", "src.hcln", "--config", "tc.json", "--steps", "3", "--out-dir", "b"]);
    let log = fs::read_to_string(d.join("b/log.csv")).unwrap();
    assert_eq!(column(&log, "step").last().unwrap(), "3");
    let evals = d.join("b/final.hcln");
    let o = ok(&d, &["eval", evals.to_str().unwrap(), "--context-len", "8", "--windows", "4"]);
    assert!(stdout(&o).trim().parse::<f64>().unwrap().is_finite());
}

#[test]
fn resume_continues_a_checkpointed_run() {
    let (_g, d) = setup();
    ok(&d, &train_args(&["src.hcln"], "full"));
    let mut first = train_args(&["src.hcln", "--checkpoint-interval", "6"], "part");
    let steps = first.iter().position(|a| *a == "--steps").unwrap();
    first[steps + 1] = "6";
    ok(&d, &first);
    ok(&d, &train_args(&["part/step_000006.hcln", "--resume"], "rest"));
    let full = load::<f64>(&d.join("full/final.hcln")).unwrap();
    let rest = load::<f64>(&d.join("rest/final.hcln")).unwrap();
    assert_eq!(full.params, rest.params);
}

#[test]
fn sweep_runs_every_strategy() {
    let (_g, d) = setup();
    let spec = r#"{
        "bases": ["src.hcln"],
        "expansions": [
            {"embed_fold": 2, "ffn_fold": 2, "head_count_fold": 2, "head_dim_fold": 1, "strategy": "symmetric"},
            {"embed_fold": 2, "ffn_fold": 2, "head_count_fold": 2, "head_dim_fold": 1, "strategy": "diagonal"},
            {"embed_fold": 2, "ffn_fold": 2, "head_count_fold": 2, "head_dim_fold": 1, "strategy": "noisy_symmetric"},
            {"embed_fold": 2, "ffn_fold": 2, "head_count_fold": 2, "head_dim_fold": 1, "strategy": "noisy_diagonal"}
        ],
        "train": {"total_steps": 6, "batch_size": 2, "context_len": 8, "eval_interval": 3, "eval_windows": 4}
    }"#;
    fs::write(d.join("spec.json"), spec).unwrap();
    ok(&d, &["sweep", "spec.json", "--out-dir", "sw"]);
    let summary = fs::read_to_string(d.join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    let finals: Vec<f64> = column(&summary, "final_eval").iter().map(|v| v.parse().unwrap()).collect();
    assert!(finals.windows(2).all(|w| w[0] <= w[1]));
    for run in column(&summary, "run") {
        assert!(d.join("sw").join(&run).join("log.csv").is_file(), "{run}");
    }
}

#[test]
fn empty_sweep_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), "{}").unwrap();
    ok(dir.path(), &["sweep", "spec.json", "--out-dir", "out"]);
    let s = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(s.lines().count(), 1);
}

#[test]
fn exit_codes() {
    let (_g, d) = setup();
    // Missing receipt.
    assert_eq!(code(&run(&d, &["verify", "src.hcln", "src.hcln"])), 2);
    // Fold constraint.
    assert_eq!(code(&run(&d, &["clone", "src.hcln", "--embed-fold", "3", "--head-count-fold", "2", "--out", "x.hcln"])), 2);
    assert_eq!(code(&run(&d, &["eval", "missing.hcln"])), 3);
    fs::write(d.join("junk.hcln"), b"not a checkpoint").unwrap();
    assert_eq!(code(&run(&d, &["eval", "junk.hcln"])), 3);

    let mut ck = load::<f64>(&d.join("src.hcln")).unwrap();
    ck.params.get_mut("blocks.0.ffn.w_up").unwrap().as_mut_slice()[0] = f64::NAN;
    save(&d.join("nan.hcln"), &ck).unwrap();
    let o = run(&d, &train_args(&["nan.hcln"], "t"));
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
