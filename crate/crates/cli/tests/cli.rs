use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tcft_bed_cli::run_args;

const TOY: &str = r#"
sub_dataset = "FD001"
data_dir = "raw"
out_dir = "run"
seed = 4
window_sizes = [8, 16]
hidden = 4
variant = "full"
variants = ["full", "no_tcn", "case4", "pure_tcn_baseline"]

[train]
epochs = 2
batch_size = 32
"#;

fn run(args: &[&str]) -> anyhow::Result<Vec<PathBuf>> {
    let mut log = Vec::new();
    let mut full = vec!["tcft-bed"];
    full.extend_from_slice(args);
    run_args(full, &mut log)
}

/// Synthetic raw files plus a config in a fresh directory.
fn toy_dir(config: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    let p = path.to_str().unwrap().to_string();
    let raw = dir.path().join("raw");
    run(&["synth", "--config", &p, "--small", "--out", raw.to_str().unwrap()]).unwrap();
    (dir, p)
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn full_pipeline_on_a_toy_corpus() {
    let (dir, cfg) = toy_dir(TOY);
    let out = dir.path().join("run");

    run(&["prepare", "--config", &cfg]).unwrap();
    let manifest = lines(&out.join("dataset/manifest.txt"));
    let engines: usize = manifest
        .iter()
        .filter(|l| l.starts_with("size "))
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(engines, 5);

    let start = Instant::now();
    run(&["train", "--config", &cfg, "--jobs", "2"]).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    for w in [8, 16] {
        assert!(out.join(format!("checkpoints/FD001_w{w}.ckpt")).is_file());
        assert_eq!(lines(&out.join(format!("loss_FD001_w{w}.csv"))).len(), 3);
    }

    run(&["evaluate", "--config", &cfg]).unwrap();
    let metrics = lines(&out.join("metrics.csv"));
    assert_eq!(metrics[0], "sub_dataset,window_size,rmse,score,mae,r2,n,params,epoch_time_s");
    assert_eq!(metrics.len(), 4);
    let concat: Vec<&str> = metrics[3].split(',').collect();
    assert_eq!((concat[1], concat[6], concat[8]), ("concat", "5", ""));
    let preds = lines(&out.join("predictions.csv"));
    assert_eq!(preds[0], "sub_dataset,unit_id,window_size,end_cycle,true_rul,predicted_rul");
    assert_eq!(preds.len(), 1 + 5);

    // reloading the checkpoints reproduces the evaluation exactly
    let first = fs::read(out.join("metrics.csv")).unwrap();
    run(&["evaluate", "--config", &cfg]).unwrap();
    assert_eq!(first, fs::read(out.join("metrics.csv")).unwrap());
    let m = fs::read_to_string(out.join("manifest_evaluate.txt")).unwrap();
    assert!(m.contains("status complete") && m.contains("score_convention standard"));
    assert!(m.contains("input FD001_w8.ckpt sha256:"));

    run(&["export", "--config", &cfg]).unwrap();
    let att = lines(&out.join("attention.csv"));
    assert_eq!(att[0], "sub_dataset,unit_id,window_size,head,key_step,weight");
    let heads = 8;
    let n8 = preds[1..].iter().filter(|l| l.split(',').nth(2) == Some("8")).count();
    assert_eq!(att.len() - 1, heads * (8 * n8 + 16 * (5 - n8)));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let (dir, cfg) = toy_dir(&TOY.replace("epochs = 2", "epochs = 1"));
    run(&["prepare", "--config", &cfg]).unwrap();
    run(&["ablate", "--config", &cfg]).unwrap();
    let rows = lines(&dir.path().join("run/ablation.csv"));
    assert_eq!(rows[0], "variant,sub_dataset,rmse,score,mae,r2,n,params,epoch_time_s");
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_tcn", "case4", "pure_tcn_baseline"]);

    run(&["ablate", "--config", &cfg, "--variants", "case1,case2"]).unwrap();
    assert_eq!(lines(&dir.path().join("run/ablation.csv")).len(), 3);
    let err = run(&["ablate", "--config", &cfg, "--variants", "full,tiny"]).unwrap_err();
    assert!(format!("{err:#}").contains("dilation_rate_4"), "{err:#}");
}

#[test]
fn identical_runs_give_identical_metrics() {
    let (dir, cfg) = toy_dir(TOY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = out.to_str().unwrap();
        for cmd in ["prepare", "train", "evaluate"] {
            run(&[cmd, "--config", &cfg, "--out", o]).unwrap();
        }
    }
    for f in ["metrics.csv", "predictions.csv", "dataset/manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let before = fs::read(a.join("manifest_prepare.txt")).unwrap();
    run(&["prepare", "--config", &cfg, "--out", a.to_str().unwrap()]).unwrap();
    assert_eq!(before, fs::read(a.join("manifest_prepare.txt")).unwrap());

    let other = dir.path().join("c");
    let o = other.to_str().unwrap();
    for cmd in ["prepare", "train", "evaluate"] {
        run(&[cmd, "--config", &cfg, "--out", o, "--seed", "5"]).unwrap();
    }
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(other.join("metrics.csv")).unwrap());
}

#[test]
fn actionable_errors() {
    let (dir, cfg) = toy_dir(TOY);
    let err = run(&["train", "--config", &cfg]).unwrap_err();
    assert!(format!("{err:#}").contains("run `prepare` first"), "{err:#}");

    run(&["prepare", "--config", &cfg]).unwrap();
    let err = run(&["evaluate", "--config", &cfg]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("window size 8") && msg.contains("run `train` first"), "{msg}");

    let strict = dir.path().join("strict.toml");
    fs::write(&strict, TOY.replace("seed = 4", "seed = 4\ntau_c = 0.99")).unwrap();
    let err = run(&["prepare", "--config", strict.to_str().unwrap()]).unwrap_err();
    assert!(format!("{err:#}").contains("relax"), "{err:#}");

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, TOY.replace("hidden = 4", "hiden = 4")).unwrap();
    assert!(run(&["prepare", "--config", typo.to_str().unwrap()]).is_err());

    let gone = dir.path().join("gone.toml");
    fs::write(&gone, TOY.replace("data_dir = \"raw\"", "data_dir = \"nowhere\"")).unwrap();
    let err = run(&["prepare", "--config", gone.to_str().unwrap()]).unwrap_err();
    assert!(format!("{err:#}").contains("nowhere"), "{err:#}");
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tcft-bed");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = Command::new(exe).args(["synth", "--small", "--out", out]).output().unwrap();
    assert!(ok.status.success());
    assert!(dir.path().join("train_FD001.txt").is_file());
    let bad = Command::new(exe).args(["evaluate", "--out", out]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("prepare"));
}
