use std::fs;
use std::process::{Command, Output};

use bitemp_cli::{cmd_check, EXIT_CHECK_FAILED, EXIT_IO, EXIT_OK, EXIT_USAGE};
use bitemp_core::checks::{analytic_gradient, CheckOptions, Suite};
use bitemp_core::{LossConfig, ProbabilityVector};

fn bitemp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitemp"))
        .args(args)
        .env("BITEMP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, name: &str) -> Vec<f64> {
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name} ")))
        .unwrap_or_else(|| panic!("no '{name}' line in {text}"));
    line.split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn eval_logistic() {
    let o = bitemp(&["eval", "--t1", "1", "--t2", "1", "--a", "0,0", "--y", "1,0"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = stdout(&o);
    assert!((field(&text, "value")[0] - 2f64.ln()).abs() < 1e-15);
    assert_eq!(field(&text, "probabilities"), vec![0.5, 0.5]);
    assert_eq!(field(&text, "gradient"), vec![-0.5, 0.5]);
}

#[test]
fn eval_symmetric_probabilities() {
    let o = bitemp(&["eval", "--t1", "0.5", "--t2", "2", "--a", "0,0,0", "--y", "1,0,0"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    for p in field(&stdout(&o), "probabilities") {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn eval_negative_activations_and_tsallis() {
    let o = bitemp(&["eval", "--t1", "0.5", "--t2", "2", "--a", "0,0", "--y", "1,0", "--tsallis"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert!((field(&stdout(&o), "value")[0] - 2.0 * (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
    let o = bitemp(&["eval", "--t1", "0.2", "--t2", "4", "--a", "-3.5,1", "--y", "0,1"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
}

#[test]
fn eval_usage_errors() {
    let o = bitemp(&["eval", "--t1", "1", "--t2", "1", "--a", "0,0"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--y"));

    let o = bitemp(&["eval", "--t1", "1", "--t2", "1", "--a", "0,zero", "--y", "1,0"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--a"));

    // lengths differ
    let o = bitemp(&["eval", "--t1", "1", "--t2", "1", "--a", "0,0,0", "--y", "1,0"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    // temperatures outside 0 <= t1 <= 1 <= t2
    let o = bitemp(&["eval", "--t1", "2", "--t2", "1", "--a", "0,0", "--y", "1,0"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert_eq!(bitemp(&[]).status.code(), Some(EXIT_USAGE));
}

#[test]
fn check_suites() {
    let o = bitemp(&["check", "gradients"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stdout(&o));
    let o = bitemp(&["check", "all"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let passes = stdout(&o).lines().filter(|l| l.starts_with("PASS ")).count();
    assert!(passes >= 5);
    assert_eq!(bitemp(&["check", "nonsense"]).status.code(), Some(EXIT_USAGE));
}

fn corrupted(a: &[f64], y: &ProbabilityVector, cfg: &LossConfig) -> bitemp_core::Result<Vec<f64>> {
    let mut g = analytic_gradient(a, y, cfg)?;
    let last = g.len() - 1;
    g[last] += 1e-3;
    Ok(g)
}

#[test]
fn check_negative_control() {
    let opts = CheckOptions {
        gradient: corrupted,
        ..CheckOptions::default()
    };
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(cmd_check(Suite::Gradients, &opts, &mut out, &mut err), EXIT_CHECK_FAILED);
    assert!(String::from_utf8(out).unwrap().contains("FAIL gradients/loss_gradient_vs_finite_differences"));
}

const SMALL: &str = "\
dataset.n_train = 60
dataset.n_val = 20
dataset.n_test = 60
experiment.seeds = 2
train.epochs = 5
grid.resolution = 5
";

#[test]
fn experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = bitemp(&["experiment", cfg.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));

    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "arm,t1,t2,seed,acc_train_clean,acc_train_noisy,acc_test,status");
    // four default arms for each of two seeds
    assert_eq!(lines.len(), 1 + 8);
    for arm in ["t0.2-4", "t1-4", "t0.2-1", "t1-1"] {
        assert!(lines.iter().any(|l| l.starts_with(&format!("{arm},"))));
        let hist = fs::read_to_string(out.join(format!("history_{arm}_1.csv"))).unwrap();
        assert_eq!(hist.lines().next(), Some("epoch,loss,acc"));
        assert_eq!(hist.lines().count(), 6);
        let grid = fs::read_to_string(out.join(format!("grid_{arm}_0.csv"))).unwrap();
        assert_eq!(grid.lines().next(), Some("x,y,p1"));
        assert_eq!(grid.lines().count(), 26);
    }
    assert!(report.ends_with('\n') && !report.contains('\r'));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    for key in ["dataset.shape", "noise.kind", "temps", "train.epochs", "experiment.seeds", "grid.bounds"] {
        assert!(resolved.contains(&format!("{key} = ")), "{key}");
    }
}

#[test]
fn experiment_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, format!("{SMALL}noise.kind = random\nnoise.fraction = 0.2\n")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(bitemp(&["experiment", cfg.to_str().unwrap(), a.to_str().unwrap()]).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_bitemp"))
        .args(["experiment", cfg.to_str().unwrap(), b.to_str().unwrap()])
        .env("BITEMP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["report.csv", "config.resolved", "history_t1-1_0.csv", "grid_t0.2-4_1.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn untrained_experiment_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, SMALL.replace("train.epochs = 5", "train.epochs = 0")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(bitemp(&["experiment", cfg.to_str().unwrap(), out.to_str().unwrap()]).status.code(), Some(0));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    for line in report.lines().skip(1) {
        let acc: f64 = line.split(',').nth(6).unwrap().parse().unwrap();
        assert!((acc - 0.5).abs() <= 0.25, "{line}");
    }
}

#[test]
fn experiment_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.epochz = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = bitemp(&["experiment", cfg.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.epochz"));

    let missing = dir.path().join("missing.cfg");
    let o = bitemp(&["experiment", missing.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_IO));

    // a regular file where the output directory should be
    let good = dir.path().join("good.cfg");
    fs::write(&good, SMALL).unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = bitemp(&["experiment", good.to_str().unwrap(), blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_IO));
}
