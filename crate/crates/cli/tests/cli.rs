use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mlmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlmc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(args: &[&str]) -> String {
    let out = mlmc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SYNTH: &str = r#"{
    "dataset": {"kind": "synthetic1d", "path": "synth.bin", "n_samples": 30, "fine_resolution": 65, "levels": 3, "seed": 4},
    "model": {"dim": 1, "width": 4, "modes": 4, "layers": 2},
    "schedule": {"m": 3, "delta": 2, "finest_batch": 1},
    "run": {"epochs": 3, "seed": 1},
    "sweep": {"m_values": [2], "deltas": [2, 1], "baseline_batch": 4},
    "diagnose": {"n_probe": 6, "batches": 2}
}"#;

#[test]
fn darcy_generate_writes_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "darcy.json",
        r#"{"dataset": {"kind": "darcy", "path": "data/darcy.bin", "n_samples": 128, "fine_resolution": 65, "levels": 3}}"#,
    );
    let stdout = run_ok(&["generate", "--config", cfg.to_str().unwrap()]);
    for shape in ["17x17", "33x33", "65x65"] {
        assert!(stdout.contains(shape), "{stdout}");
    }
    let ds = mlmc_core::datagen::load_dataset(&dir.path().join("data/darcy.bin")).unwrap();
    let sides: Vec<usize> = ds.hierarchy.iter().map(|l| l.points_per_side).collect();
    assert_eq!(sides, [17, 33, 65]);
    assert_eq!(ds.n_samples(), 128);
}

#[test]
fn missing_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"dataset": {"kind": "darcy"}}"#);
    let out = mlmc(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.path"));
}

#[test]
fn train_resume_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.json", SYNTH);
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    run_ok(&["generate", "--config", cfg]);
    let stdout = run_ok(&["train", "--config", cfg, "--out", out_s]);
    assert!(stdout.contains("B = [4, 2, 1]"), "{stdout}");
    let csv = fs::read_to_string(out.join("train.csv")).unwrap();
    assert!(csv.starts_with("epoch,wall_s,mlmc_total,coarse_term,pair_term_2,pair_term_3,test_loss\n"));
    assert_eq!(csv.lines().count(), 4);

    let first = mlmc_core::model::load_checkpoint(&out.join("checkpoint.bin")).unwrap();
    let resumed = dir.path().join("resumed");
    let ckpt = out.join("checkpoint.bin");
    run_ok(&["train", "--config", cfg, "--out", resumed.to_str().unwrap(), "--resume", ckpt.to_str().unwrap()]);
    let second = mlmc_core::model::load_checkpoint(&resumed.join("checkpoint.bin")).unwrap();
    assert_eq!(second.step_count, 2 * first.step_count);
    let csv = fs::read_to_string(resumed.join("train.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("4,"));

    run_ok(&["diagnose", "--config", cfg, "--out", out_s]);
    for f in ["variance_profile.csv", "grad_compare.csv", "telescoping.csv", "pair_terms.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let audit = fs::read_to_string(out.join("telescoping.csv")).unwrap();
    for line in audit.lines().skip(1) {
        let err: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-12, "{line}");
    }
}

#[test]
fn single_level_train_is_a_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let body = SYNTH.replace(r#""m": 3, "delta": 2, "finest_batch": 1"#, r#""m": 1, "resolution": 33, "finest_batch": 4"#);
    let cfg = write_config(dir.path(), "base.json", &body);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", "--config", cfg]);
    let stdout = run_ok(&["train", "--config", cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(stdout.contains("m = 1 on R = [33]"), "{stdout}");
    assert!(stdout.contains("B = [4]"), "{stdout}");
}

#[test]
fn diagnose_without_checkpoint_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.json", SYNTH);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", "--config", cfg]);
    let out = mlmc(&["diagnose", "--config", cfg, "--out", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_run_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = SYNTH.replace(r#""run": {"epochs": 3, "seed": 1}"#, r#""run": {"epochs": 3, "seed": 1}, "optimizer": {"kind": "sgd", "lr": 1e200}"#);
    let cfg = write_config(dir.path(), "div.json", &body);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", "--config", cfg]);
    let out = mlmc(&["train", "--config", cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn deterministic_sweep_reproduces_losses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.json", SYNTH);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", "--config", cfg]);
    let losses = |name: &str| {
        let out = dir.path().join(name);
        run_ok(&["sweep", "--config", cfg, "--out", out.to_str().unwrap(), "--deterministic"]);
        let csv = fs::read_to_string(out.join("pareto.csv")).unwrap();
        assert!(csv.starts_with("run_id,kind,m,delta,strategy,"));
        csv.lines()
            .skip(1)
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                (cols[0].to_string(), cols[8].to_string())
            })
            .collect::<Vec<_>>()
    };
    let first = losses("a");
    assert_eq!(first.iter().filter(|(id, _)| id.starts_with("baseline")).count(), 3);
    assert_eq!(first.len(), 5);
    assert_eq!(first, losses("b"));
}
