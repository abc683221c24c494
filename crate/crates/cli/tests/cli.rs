use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DEMO: &str = "\
seed=5
window.start_hour=4
window.end_hour=6
synth.n_milemarkers=10
synth.n_lanes=2
synth.n_days=3
synth.steps_per_day=240
synth.rush_start=04:30
synth.rush_end=05:20
synth.incidents_per_day=1,0,1
synth.incident_lead=600
synth.incident_tail=3000
synth.edge_markers=2
split.train=2
split.validation=1
split.excluded=0
model.hidden_dim=8
model.latent_dim=8
train.max_epochs=3
train.patience=1
train.batch_size=64
";

fn ftaed(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftaed"))
        .arg("--work")
        .arg(work)
        .args(args)
        .env_remove("FTAED_SEED")
        .output()
        .expect("run ftaed")
}

fn ok(work: &Path, args: &[&str]) -> String {
    let out = ftaed(work, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn demo(dir: &Path) -> String {
    let cfg = dir.join("demo.cfg");
    fs::write(&cfg, DEMO).unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let cfg = demo(dir.path());
    let c = ["--config", cfg.as_str()];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(c.iter()).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(&work, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["synth"]);
    for f in ["sensors.csv", "incidents.csv", "ground_truth.csv"] {
        assert!(work.join(f).exists(), "{f}");
    }
    let out = run(&["ingest"]);
    assert!(out.contains("3 days"), "{out}");
    assert!(out.contains("2 train, 1 validation, 0 excluded"), "{out}");
    run(&["impute"]);

    // detect before calibrate is refused
    run(&["train", "--model", "gcn"]);
    let args = with(&["detect", "--model", "gcn"]);
    let early = ftaed(&work, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("MissingThreshold"));

    run(&["calibrate", "--model", "gcn"]);
    let out = run(&["detect", "--model", "gcn", "--alpha", "1.5"]);
    assert!(out.contains("alpha 1.5"), "{out}");
    let det = fs::read_to_string(work.join("gcn/detections.csv")).unwrap();
    assert!(det.starts_with("time_unix,node_id,milemarker,lane,error,threshold\n"));

    let table = run(&["evaluate", "--model", "gcn", "--target-fpr", "0.05"]);
    assert!(table.contains("| gcn |"), "{table}");
    let metrics = fs::read_to_string(work.join("gcn/metrics.txt")).unwrap();
    for key in [
        "reporting_delay_mean",
        "reporting_delay_std",
        "miss_pct",
        "recon_mse",
        "auc",
        "fpr_achieved",
        "fdr_achieved",
        "alpha",
    ] {
        assert!(
            metrics.lines().any(|l| l.starts_with(&format!("{key}="))),
            "{key}\n{metrics}"
        );
    }
    assert!(work.join("gcn/roc.csv").exists());
    assert!(work.join("gcn/sweep.csv").exists());
    assert!(work.join("gcn/history.csv").exists());

    let out = run(&["heatmap", "--lane", "1", "--model", "gcn"]);
    assert!(out.contains("heatmap_lane1_2023-10-02.svg"), "{out}");
    let svg = fs::read_to_string(work.join("heatmap_lane1_2023-10-02.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 240 * 10 + 8);

    // stages are reproducible byte for byte
    let ckpt = fs::read(work.join("gcn/model.ckpt")).unwrap();
    let hist = fs::read(work.join("gcn/history.csv")).unwrap();
    let sensors = fs::read(work.join("sensors.csv")).unwrap();
    run(&["synth"]);
    run(&["ingest"]);
    run(&["impute"]);
    run(&["train", "--model", "gcn"]);
    assert_eq!(fs::read(work.join("sensors.csv")).unwrap(), sensors);
    assert_eq!(fs::read(work.join("gcn/model.ckpt")).unwrap(), ckpt);
    assert_eq!(fs::read(work.join("gcn/history.csv")).unwrap(), hist);
    // retraining invalidates the old thresholds
    assert!(!work.join("gcn/thresholds.txt").exists());
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed=1\ntrain.epochs=5\n").unwrap();
    let out = ftaed(dir.path(), &["synth", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.epochs") && err.contains("line 2"), "{err}");
}

#[test]
fn unknown_command_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftaed(dir.path(), &["fit"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit"));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo(dir.path());
    let synth = |seed: Option<&str>, sub: &str| {
        let work = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ftaed"));
        cmd.args(["--work", work.to_str().unwrap(), "--config", &cfg, "synth"]);
        match seed {
            Some(s) => cmd.env("FTAED_SEED", s),
            None => cmd.env_remove("FTAED_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(work.join("sensors.csv")).unwrap()
    };
    let a = synth(None, "a");
    let b = synth(Some("5"), "b");
    let c = synth(Some("6"), "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, flags) in [
        ("train", vec!["--model", "[default: gcn]", "--work", "--config"]),
        ("detect", vec!["--model", "--alpha"]),
        ("evaluate", vec!["--target-fpr", "0.05"]),
        ("heatmap", vec!["--lane", "[default: 1]", "--day", "--out"]),
        ("ingest", vec!["--sensors", "--incidents"]),
    ] {
        let out = ftaed(dir.path(), &[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub}: {f}\n{text}");
        }
    }
}

#[test]
fn defaults_round_trip_as_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["defaults"]);
    assert!(text.contains("train.max_epochs=100"));
    let cfg = dir.path().join("all.cfg");
    fs::write(&cfg, text).unwrap();
    let out = ftaed(dir.path(), &["heatmap", "--config", cfg.to_str().unwrap()]);
    // valid config, but nothing ingested yet
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
}
