use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use minority_harness::error::exit;

fn minority(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minority")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = minority(&["--help"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for doc in minority_harness::config::KEYS {
        let key = doc.key;
        assert!(text.contains(key), "--help misses {key}");
    }
}

#[test]
fn sample_then_rerun_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = minority(&["sample", "--chains", "25", "--seed", "4", "--out", "a", "--set", "eval.real_size=100"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["chains"], 25);
    assert_eq!(summary["seed"], 4);

    let o = minority(&["sample", "--config", "a/resolved-config", "--out", "b"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS);
    let read = |d: &str| fs::read(dir.path().join(d).join("samples.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["sample", "--set", "guidance.w=-1"][..],
        &["sample", "--set", "no.such.key=1"],
        &["sample", "--set", "missing-equals"],
        &["sample", "--set", "model=mlp", "--set", "model.checkpoint=absent.ckpt"],
        &["recipe", "no-such-recipe"],
    ] {
        let o = minority(args, dir.path());
        assert_eq!(code(&o), exit::CONFIG, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
    fs::write(dir.path().join("dup"), "seed = 1\nseed = 2\n").unwrap();
    assert_eq!(code(&minority(&["sample", "--config", "dup"], dir.path())), exit::CONFIG);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&minority(&["sample", "--config", "nope"], dir.path())), exit::IO);
}

#[test]
fn corrupt_checkpoint_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.ckpt"), b"not a checkpoint at all").unwrap();
    let o = minority(&["sample", "--set", "model=mlp", "--set", "model.checkpoint=bad.ckpt"], dir.path());
    assert_eq!(code(&o), exit::CHECKPOINT);
}

#[test]
fn train_then_sample_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = minority(&["train", "--out", "t", "--set", "mlp.train_steps=30", "--set", "mlp.hidden=16"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("t/model.ckpt").exists());
    assert_eq!(fs::read_to_string(dir.path().join("t/training-loss.csv")).unwrap().lines().count(), 31);
    let o =
        minority(&["sample", "--config", "t/resolved-config", "--chains", "10", "--out", "s", "--set", "eval.real_size=50"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["model"]["kind"], "mlp");
    assert_eq!(summary["model"]["steps_trained"], 30);
}

#[test]
fn verify_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let o = minority(&["verify", "--cases", "20"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);

    assert_eq!(code(&minority(&["sample", "--chains", "30", "--out", "r", "--set", "eval.real_size=100"], dir.path())), 0);
    let o = minority(&["eval", "--samples", "r/samples.csv", "--out", "e", "--set", "eval.real_size=100"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("e/eval.csv")).unwrap().lines().count(), 31);
    // Eval recomputes the same neighbour statistics the run recorded.
    let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r/summary.json")).unwrap()).unwrap();
    let ev: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(run["summaries"]["avg_knn"]["mean"], ev["avg_knn"]["mean"]);
}

#[test]
fn recipe_list_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = minority(&["recipe"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("stop-gradient-ablation"));
    let o = minority(&["recipe", "--recipe", "identity-check", "--chains", "10", "--out", "p"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("p/recipe.json").exists());
}
