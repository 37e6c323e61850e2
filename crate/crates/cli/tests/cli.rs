use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bcct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcct")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).lines().last().unwrap_or_default().to_string()
}

const FAST: &[&str] = &[
    "--set", "pretrain_epochs=1",
    "--set", "bc_epochs=1",
    "--set", "epochs=1",
    "--set", "batch_size=8",
];

fn tiny_data(dir: &Path) -> String {
    let out = dir.join("data");
    let o = bcct(&[
        "gen-data", "--seed", "5", "--classes", "3", "--train", "12", "--test", "6", "--background", "4",
        "--size", "32x32", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    run_dir(&o)
}

#[test]
fn selftest_passes() {
    let o = bcct(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));
}

#[test]
fn eval_without_checkpoint_names_the_flag() {
    let o = bcct(&["eval", "--data", "d", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--checkpoint"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_exit_one_with_usage() {
    let o = bcct(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = bcct(&["selftest", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn every_flag_is_documented_with_its_default() {
    for sub in ["gen-data", "pretrain", "train-bc", "train", "eval", "sweep", "render", "selftest"] {
        let o = bcct(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            assert!(line.split_whitespace().count() > 2, "{sub}: undocumented flag: {line}");
        }
    }
    let text = String::from_utf8_lossy(&bcct(&["gen-data", "--help"]).stdout).into_owned();
    for d in ["[default: 8]", "[default: 2000]", "[default: 400]", "[default: 60]", "[default: 64x64]"] {
        assert!(text.contains(d), "missing {d}");
    }
}

#[test]
fn config_typo_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"detla": 0.8}"#).unwrap();
    let data = tiny_data(tmp.path());
    let out = tmp.path().join("run");
    let o = bcct(&["pretrain", "--config", cfg.to_str().unwrap(), "--data", &data, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("detla"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn multiple_threads_are_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let out = tmp.path().join("run");
    let o = bcct(&["pretrain", "--threads", "4", "--data", &data, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let missing = tmp.path().join("nope");
    let o = bcct(&["pretrain", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn pipeline_smoke_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    for f in ["meta.json", "train.jsonl", "test.jsonl", "background.jsonl", "run.json", "train/000000.ppm"] {
        assert!(Path::new(&data).join(f).exists(), "{f}");
    }

    let out = tmp.path().join("train");
    let mut args = vec!["train", "--seed", "5", "--data", &data, "--out", out.to_str().unwrap()];
    args.extend_from_slice(FAST);
    let o = bcct(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = run_dir(&o);
    for f in ["backbone.ckpt", "bc.ckpt", "ct.ckpt", "pretrain_log.jsonl", "bc_log.jsonl", "train_log.jsonl", "run.json"] {
        assert!(Path::new(&train).join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(Path::new(&train).join("train_log.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for k in ["epoch", "lr_backbone", "lr_head", "cls_loss", "mask_loss", "total_loss", "wall_ms"] {
        assert!(rec.get(k).is_some(), "log lacks {k}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&train).join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["epochs"], 1);
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);

    let ct = format!("{train}/ct.ckpt");
    let bc = format!("{train}/bc.ckpt");
    let eval_out = tmp.path().join("eval");
    let o = bcct(&["eval", "--data", &data, "--checkpoint", &ct, "--bc", &bc, "--out", eval_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = run_dir(&o);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{eval}/metrics.json")).unwrap()).unwrap();
    for k in ["top1_err", "top5_err", "bcstar_err", "n", "tau", "seed"] {
        assert!(m.get(k).is_some(), "metrics lack {k}");
    }
    assert_eq!(m["n"], 6);
    assert_eq!(fs::read_to_string(format!("{eval}/records.jsonl")).unwrap().lines().count(), 6);

    // A second run into the same directory gets a suffix.
    let o = bcct(&["eval", "--data", &data, "--checkpoint", &ct, "--out", eval_out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(run_dir(&o).ends_with("eval-1"));

    let sweep_out = tmp.path().join("sweep");
    let o = bcct(&["sweep", "--data", &data, "--checkpoint", &ct, "--out", sweep_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(sweep_out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(fs::read_to_string(sweep_out.join("sweep.txt")).unwrap().contains("delta"));

    let render_out = tmp.path().join("render");
    let o = bcct(&[
        "render", "--data", &data, "--checkpoint", &ct, "--bc", &bc, "--count", "2", "--out",
        render_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["0000_overlay.ppm", "0001_overlay.ppm", "0000_gradient.pgm", "0001_mask.pgm"] {
        assert!(render_out.join(f).exists(), "{f}");
    }
}
