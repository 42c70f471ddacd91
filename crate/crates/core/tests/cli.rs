use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mogel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mogel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: &[&str] = &["--epochs", "8", "--hidden", "16,16", "--n", "200"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: Vec<String>) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mogel(&refs)
}

#[test]
fn help_and_bad_flags() {
    let o = mogel(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["train", "evaluate", "predict", "sweep", "benchmark", "verify"] {
        assert!(text.contains(cmd));
    }
    let o = mogel(&["train", "--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[default: 0.01]"));
    assert_eq!(code(&mogel(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&mogel(&["train", "--lambda", "-1", "--out", "/dev/null/x"])), 1);
}

#[test]
fn train_predict_evaluate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    let o = run(with(
        &["train", "--synthetic", "cubic", "-k", "2", "--out", p(&t)],
        QUICK,
    ));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "train_log.jsonl", "manifest.json"] {
        assert!(t.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(t.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["components"], "2");
    assert_eq!(manifest["config"]["noise"], "3");

    // Replaying the manifest into another directory reproduces every byte.
    let t2 = dir.path().join("t2");
    let o = mogel(&["train", "--config", p(&t.join("manifest.json")), "--out", p(&t2)]);
    assert_eq!(code(&o), 0);
    for f in ["checkpoint.json", "train_log.jsonl"] {
        assert_eq!(fs::read(t.join(f)).unwrap(), fs::read(t2.join(f)).unwrap(), "{f}");
    }

    let input = dir.path().join("x.csv");
    fs::write(&input, "x\n-1\n0\n0.5\n2\n9\n").unwrap();
    let before = fs::read(&input).unwrap();
    let pr = dir.path().join("p");
    let ck = t.join("checkpoint.json");
    let o = mogel(&["predict", "--checkpoint", p(&ck), "--input", p(&input), "--out", p(&pr)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&input).unwrap(), before);
    let csv = fs::read_to_string(pr.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "prediction,aleatoric,aleatoric_1,aleatoric_2,epistemic"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.len() == 5 && r[1..].iter().all(|v| *v > 0.0)));

    let ev = dir.path().join("e");
    let o = mogel(&[
        "evaluate", "--checkpoint", p(&ck), "--synthetic", "cubic", "--n", "200", "--rows",
        "test", "--out", p(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["n_test"], 20);
    assert_eq!(
        manifest["results"]["metrics"]["test"]["rmse"], m["rmse"],
        "evaluate on the same split agrees with train"
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = mogel(&["predict", "--checkpoint", "missing.json", "--input", "x", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let o = mogel(&["predict", "--input", "x", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let o = mogel(&["train", "--data", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("oops"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "epochs = 3\nhidden = 8\nn = 100\nlambda = 0.5\n").unwrap();
    let out = dir.path().join("o");
    let o = mogel(&["train", "--config", p(&conf), "--lambda", "0.25", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["lambda"], "0.25");
    assert_eq!(m["config"]["epochs"], "3");
    assert_eq!(m["results"]["epochs_run"], 3);

    fs::write(&conf, "epochz = 3\n").unwrap();
    assert_eq!(code(&mogel(&["train", "--config", p(&conf)])), 1);
}

#[test]
fn sweep_and_benchmark_reports() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let o = run(with(
        &["sweep", "--k", "2,1", "--trials", "2", "--out", p(&s)],
        QUICK,
    ));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(s.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().nth(1).unwrap().starts_with("1,"));
    assert_eq!(fs::read_to_string(s.join("cells.csv")).unwrap().lines().count(), 5);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(s.join("manifest.json")).unwrap()).unwrap();
    assert!(m["results"]["best_k"].is_u64());

    let b = dir.path().join("b");
    let o = run(with(&["benchmark", "--trials", "3", "--out", p(&b)], QUICK));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(b.join("trials.csv")).unwrap().lines().count(), 4);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["split"], "0.81,0.09,0.1");
    assert_eq!(m["results"]["aggregate"]["n_ok"], 3);
}

#[test]
fn verify_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let args = ["verify", "--mc-samples", "100000", "--param-sets", "5", "--out", p(&out)];
    let o = mogel(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = mogel(&[&args[..], &["--perturb-loss", "1e-3"]].concat());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("marginal-quadrature"));
}
