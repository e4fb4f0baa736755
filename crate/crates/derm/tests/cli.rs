use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use derm::ckpt::SavedModel;
use derm::commands::{probabilities, Float};
use derm_core::data::NormalizationStats;
use derm_core::models::Model;
use derm_core::nn::ParamGroup;
use derm_core::train::preprocess_eval;
use derm_core::Tensor;

fn derm(args: &[&str]) -> Output {
    derm_env(args, &[])
}

fn derm_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_derm"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

#[track_caller]
fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(model: &str, train: &str) -> String {
    format!(
        "[data]\ndata_root = data\nsplit_dir = splits\nimage_size = 16\n\n[model]\nbackbone_channels = 4, 8\nd_model = 8\nn_heads = 2\nn_layers = 1\nffn_dim = 16\npatch_size = 4\nfusion_hidden = 8\nfusion_out = 4\nspline_grid_size = 4\n{model}\n\n[train]\nbatch_size = 8\nlr = 0.003\nlr_step = 1000\nseed = 2\n{train}\n\n[augment]\nenabled = false\n"
    )
}

/// Synthetic data, its split, and a config file inside a temp dir.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(count: usize, model: &str, train: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&derm(&["synth", "--out-dir", s(&data), "--count", &count.to_string(), "--size", "16"]));
        ok(&derm(&["split", "--manifest", s(&data.join("manifest.csv")), "--out-dir", s(&dir.path().join("splits"))]));
        fs::write(dir.path().join("run.cfg"), config(model, train)).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str) -> Output {
        derm(&["train", "--quiet", "--config", s(&self.path("run.cfg")), "--out-dir", s(&self.path(out))])
    }
}

fn class_counts(csv: &Path) -> (usize, usize) {
    let text = fs::read_to_string(csv).unwrap();
    let ones = text.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    (text.lines().count() - 1 - ones, ones)
}

#[test]
fn split_follows_default_ratios_and_seed() {
    let w = Workspace::new(60, "", "epochs = 1");
    let (n0, n1) = class_counts(&w.path("data/manifest.csv"));
    for (name, ratio) in [("train.csv", 0.8), ("val.csv", 0.1), ("test.csv", 0.1)] {
        let (c0, c1) = class_counts(&w.path("splits").join(name));
        assert!((c0 as f64 - ratio * n0 as f64).abs() <= 1.0, "{name}: {c0}");
        assert!((c1 as f64 - ratio * n1 as f64).abs() <= 1.0, "{name}: {c1}");
    }
    let again = w.path("again");
    ok(&derm(&["split", "--manifest", s(&w.path("data/manifest.csv")), "--out-dir", s(&again)]));
    for f in ["train.csv", "val.csv", "test.csv", "split.json"] {
        assert_eq!(fs::read(again.join(f)).unwrap(), fs::read(w.path("splits").join(f)).unwrap(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(again.join("split.json")).unwrap()).unwrap();
    assert_eq!(json["train"]["rows"], 48);
    let other = w.path("other");
    ok(&derm(&["split", "--manifest", s(&w.path("data/manifest.csv")), "--out-dir", s(&other), "--seed", "5"]));
    assert_ne!(fs::read(other.join("train.csv")).unwrap(), fs::read(again.join("train.csv")).unwrap());
}

#[test]
fn bad_ratios_and_manifests_are_config_errors() {
    let w = Workspace::new(20, "", "epochs = 1");
    let m = w.path("data/manifest.csv");
    let out = derm(&["split", "--manifest", s(&m), "--out-dir", s(&w.path("x")), "--ratios", "0.7,0.1,0.1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum"), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(w.path("bad.csv"), "image_path,label\na.ppm,nv\nb.ppm,tumour\n").unwrap();
    let out = derm(&["split", "--manifest", s(&w.path("bad.csv")), "--out-dir", s(&w.path("x"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    let out = derm(&["split", "--manifest", s(&w.path("missing.csv")), "--out-dir", s(&w.path("x"))]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&derm(&["split", "--bogus"])), 2);
}

#[test]
fn config_errors_cite_the_line() {
    let w = Workspace::new(10, "", "epochs = 1\nepoch_count = 3");
    let out = w.train("run");
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch_count") && err.contains("line 24"), "{err}");
}

#[test]
fn missing_split_is_an_io_error() {
    let w = Workspace::new(10, "", "epochs = 1");
    fs::remove_file(w.path("splits/val.csv")).unwrap();
    assert_eq!(code(&w.train("run")), 3);
}

#[test]
fn divergence_exits_4() {
    let w = Workspace::new(20, "", "epochs = 3");
    let cfg = fs::read_to_string(w.path("run.cfg")).unwrap().replace("lr = 0.003", "lr = 1e36");
    fs::write(w.path("run.cfg"), cfg).unwrap();
    let out = w.train("run");
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn train_writes_artifacts_and_psi_tensors() {
    let w = Workspace::new(20, "kind = parallel\nfusion = spline", "epochs = 2");
    ok(&w.train("run"));
    for f in ["best.ckpt", "log.jsonl", "metrics.json", "confusion.csv"] {
        assert!(w.path("run").join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(w.path("run/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["epoch", "lr", "train_loss", "val_loss", "val_accuracy", "val_precision", "val_recall", "val_f1"] {
            assert!(keys.contains(&k), "{k}");
        }
    }
    let saved = SavedModel::load(&w.path("run/best.ckpt")).unwrap();
    let model: Model<Float> = saved.build().unwrap();
    let psi = model.group_names(ParamGroup::Psi);
    assert!(psi.iter().any(|n| n.ends_with("coeff")), "{psi:?}");
    for name in &psi {
        assert!(saved.params.iter().any(|(n, _)| n == name), "{name}");
        assert!(saved.moments.iter().any(|(n, _)| *n == format!("adam.m.{name}")), "{name}");
    }
    assert_eq!(saved.train.epochs, 2);
    // the stored state names the selected epoch and its score
    let log_f1: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["val_f1"].as_f64().unwrap())
        .collect();
    assert_eq!(saved.state.best_val_f1, log_f1.iter().copied().fold(f64::MIN, f64::max));
    assert_eq!(saved.encode().unwrap(), fs::read(w.path("run/best.ckpt")).unwrap());
}

#[test]
fn eval_of_an_overfit_model() {
    let w = Workspace::new(16, "kind = sequential", "epochs = 60");
    // select on the training rows themselves so the kept epoch is a fitted one
    fs::copy(w.path("splits/train.csv"), w.path("splits/val.csv")).unwrap();
    ok(&w.train("run"));
    let ckpt = w.path("run/best.ckpt");
    let out = w.path("eval");
    ok(&derm(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&w.path("splits/train.csv")),
        "--data-root",
        s(&w.path("data")),
        "--out-dir",
        s(&out),
    ]));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["accuracy"], 1.0);
    for k in [
        "precision",
        "recall",
        "f1",
        "weighted_precision",
        "weighted_recall",
        "weighted_f1",
        "auc_roc",
        "non_malignant",
        "malignant",
        "confusion",
    ] {
        assert!(m.get(k).is_some(), "{k}");
    }
    let csv = fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("actual,non-malignant,malignant"));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(w.path("bad.ckpt"), &bytes).unwrap();
    let bad = derm(&["eval", "--checkpoint", s(&w.path("bad.ckpt")), "--manifest", s(&w.path("splits/train.csv"))]);
    assert_eq!(code(&bad), 5);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("checksum"));
}

#[test]
fn predict_output() {
    let w = Workspace::new(20, "kind = parallel\nfusion = eq5", "epochs = 1");
    ok(&w.train("run"));
    let ckpt = w.path("run/best.ckpt");
    let image = w.path("data/images/blob_0003.ppm");
    let line = ok(&derm(&["predict", "--checkpoint", s(&ckpt), "--image", s(&image)]));
    let line = line.trim_end();
    let (label, p) = line.split_once(' ').unwrap();
    assert!(label == "malignant" || label == "non-malignant", "{line}");
    assert!(p.len() == 8 && p.starts_with("0.") || p == "1.000000", "{line}");

    let mut saved = SavedModel::load(&ckpt).unwrap();
    for (name, t) in &mut saved.params {
        if name.starts_with("head.") {
            *t = Tensor::zeros(t.shape());
        }
    }
    saved.save(&w.path("zero.ckpt")).unwrap();
    let line = ok(&derm(&["predict", "--checkpoint", s(&w.path("zero.ckpt")), "--image", s(&image)]));
    assert_eq!(line, "malignant 0.500000\n");

    fs::write(w.path("broken.ppm"), b"P6\n4 4\n255\n").unwrap();
    assert_eq!(code(&derm(&["predict", "--checkpoint", s(&ckpt), "--image", s(&w.path("broken.ppm"))])), 3);
    assert_eq!(code(&derm(&["predict", "--checkpoint", s(&ckpt), "--image", s(&w.path("nothing.ppm"))])), 3);
}

#[test]
fn predictions_ignore_batching_and_threads() {
    let w = Workspace::new(24, "kind = parallel\nfusion = spline", "epochs = 1");
    ok(&w.train("run"));
    let saved = SavedModel::load(&w.path("run/best.ckpt")).unwrap();
    let model: Model<Float> = saved.build().unwrap();
    let inputs: Vec<Tensor<f32>> = (0..24)
        .map(|i| {
            let img = derm::files::read_image(&w.path(&format!("data/images/blob_{i:04}.ppm"))).unwrap();
            preprocess_eval(&img, 16, &NormalizationStats::IMAGENET).unwrap()
        })
        .collect();
    let reference = probabilities(&model, &inputs, 1, 1).unwrap();
    for (batch, threads) in [(5, 1), (24, 1), (3, 4), (7, 3)] {
        let other = probabilities(&model, &inputs, batch, threads).unwrap();
        assert!(
            reference.iter().zip(&other).all(|(a, b)| a.probability.to_bits() == b.probability.to_bits()),
            "batch {batch} threads {threads}"
        );
    }
}

#[test]
fn threads_do_not_change_results() {
    let w = Workspace::new(24, "", "epochs = 1\ndeterministic = false");
    ok(&w.train("run"));
    let ckpt = w.path("run/best.ckpt");
    let mut outs = Vec::new();
    for threads in ["1", "4"] {
        let out = w.path(&format!("eval{threads}"));
        ok(&derm_env(
            &["eval", "--checkpoint", s(&ckpt), "--manifest", s(&w.path("data/manifest.csv")), "--out-dir", s(&out)],
            &[("DERM_THREADS", threads)],
        ));
        outs.push(fs::read(out.join("metrics.json")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn gradcheck_command() {
    let out = derm(&["gradcheck"]);
    let table = ok(&out);
    let kinds = ["conv2d", "linear", "attention", "encoder_block", "positional_encoding", "eq5_fusion", "spline_layer", "weighted_bce"];
    for k in kinds {
        assert!(table.contains(k), "{k}");
    }
    assert!(table.lines().skip(1).all(|l| l.ends_with("ok")), "{table}");

    let bad = derm(&["gradcheck", "--inject-fault", "softmax:1.1"]);
    assert_eq!(code(&bad), 6);
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("attention"), "{err}");
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    assert_eq!(code(&derm(&["gradcheck", "--inject-fault", "nonsense"])), 2);
}
