use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use winconv::harness::config::ExperimentConfig;

fn winconv(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_winconv"))
        .args(args)
        .env("WINCONV_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn winconv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn presets() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

const TINY: &str = r#"{
  "name": "tiny",
  "task": "fft_regression",
  "dataset": { "kind": "sine_fft", "n_train": 40, "n_val": 10, "image": { "size": 8 } },
  "model": { "first_layer": { "k": 3 } },
  "variants": [ { "name": "box" }, { "name": "ham", "window": "first", "k": 5 } ],
  "train": { "epochs": 2, "batch_size": 8, "initial_lr": 0.001, "optimizer": { "kind": "adam" } },
  "analysis": { "spectra": true, "ortho": true },
  "output_dir": "tiny",
  "seeds": [0, 1]
}"#;

#[test]
fn presets_parse_and_validate() {
    let p = presets();
    assert_eq!(p.len(), 4);
    for path in p {
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!cfg.seeds.is_empty());
        assert!(!cfg.variants().is_empty());
    }
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(winconv(&["no-such-command"], root.path()).status.code(), Some(2));
    assert_eq!(winconv(&["train", "--config", "/nonexistent.json"], root.path()).status.code(), Some(2));
    let bad = root.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x", "surprise": 1}"#).unwrap();
    let o = winconv(&["train", "--config", bad.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("winconv:"));
    assert_eq!(winconv(&["--help"], root.path()).status.code(), Some(0));
}

#[test]
fn dump_window_writes_files_and_leakage() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("w");
    let o = winconv(&["dump-window", "--k", "7", "--grid", "64", "--out", out.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let leak: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let db = leak["sidelobe_db"].as_f64().unwrap();
    assert!((db + 31.709).abs() < 1e-3, "{db}");
    for f in ["window.csv", "window.pgm", "window_spectrum.pgm", "leakage.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("window.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(fs::read(out.join("window.pgm")).unwrap().starts_with(b"P5"));
    let o = winconv(&["dump-window", "--k", "0", "--out", out.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_inspect_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = winconv(&["train", "--config", cfg], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
    let run = root.path().join("tiny");
    for f in ["report.json", "summary.csv", "box/aggregate.csv", "ham/seed1/metrics.csv", "ham/seed0/spectra.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);

    let ck = run.join("ham/seed0/checkpoint");
    let ck = ck.to_str().unwrap();
    let o = winconv(&["analyze-spectrum", "--checkpoint", ck], root.path());
    assert!(o.status.success());
    let spectra: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(spectra.as_array().unwrap().len(), 1);

    let o = winconv(&["analyze-ortho", "--checkpoint", ck, "--input", "1,4,4"], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("conv0"));
    assert_eq!(winconv(&["analyze-ortho", "--checkpoint", ck, "--input", "1,4"], root.path()).status.code(), Some(2));

    let kdir = root.path().join("k");
    let o = winconv(&["dump-kernels", "--checkpoint", ck, "--layer", "conv0", "--out", kdir.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(kdir.join("kernels")).unwrap().count(), 64);
    let o = winconv(&["dump-kernels", "--checkpoint", ck, "--layer", "conv9", "--out", kdir.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));

    let report = run.join("report.json");
    let o = winconv(&["compare", "--a", report.to_str().unwrap(), "--b", report.to_str().unwrap()], root.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant_a,variant_b,seed,epoch,a,b,delta"));
    for l in lines {
        assert_eq!(l.rsplit(',').next(), Some("0"), "{l}");
    }
}
