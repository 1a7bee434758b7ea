use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use realonly::imagio::{save_image, ImageFormat};
use realonly::scene::dead_leaves;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_realonly"));
    c.env_remove("REALONLY_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scenes(dir: &Path, n: usize, seed0: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("img{i:03}.png"));
            save_image(&dead_leaves(256, seed0 + i as u64), &p, ImageFormat::Png).unwrap();
            p
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let train_dir = root.join("train");
    scenes(&train_dir, 30, 1000);
    scenes(&root.join("held"), 8, 2000);

    let model = root.join("model.json");
    let feats = root.join("train.csv");
    let out = ok(&["train", "--dir", s(&train_dir), "--model", s(&model), "--features-out", s(&feats)]);
    assert!(out.contains("sum_alpha 1.000000000000"), "{out}");
    assert!(out.contains("support_vectors "));
    assert!(out.contains("training_outlier_fraction "));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["version"], "realonly-ocsvm/1");
    assert_eq!(m["k"], 32);
    let csv = std::fs::read_to_string(&feats).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("path,label,v0,"));

    let sim = root.join("sim");
    ok(&["simulate", "--dir", s(&root.join("held")), "--method", "nearest:4", "--method", "bilinear:8", "--out", s(&sim), "--seed", "5"]);
    let manifest = sim.join("manifest.json");
    let mj: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(mj["seed"], 5);
    assert_eq!(mj["entries"].as_array().unwrap().len(), 16);
    assert_eq!(mj["entries"][8]["method"], "nearest");
    assert_eq!(mj["entries"][9]["factor"], 8);
    assert!(sim.join("real/img000.png").exists());
    assert!(sim.join("gen/img007.png").exists());

    let report = root.join("eval.json");
    let printed = ok(&["eval", "--model", s(&model), "--manifest", s(&manifest), "--out", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n_real"], 8);
    assert_eq!(r["n_generated"], 8);
    assert_eq!(r["threshold"], 0.0);
    assert!(printed.contains("\"acc\""));

    let det = root.join("det.csv");
    let printed = ok(&["detect", "--model", s(&model), "--dir", s(&sim.join("gen")), "--out", s(&det)]);
    assert!(printed.starts_with("images 8 "), "{printed}");
    let text = std::fs::read_to_string(&det).unwrap();
    assert_eq!(text.lines().next(), Some("path,decision,verdict"));
    assert_eq!(text.lines().count(), 9);

    let rob = root.join("rob.csv");
    ok(&["robustness", "--model", s(&model), "--manifest", s(&manifest), "--perturb", "jpeg:95", "--perturb", "gauss:5@seed=7", "--out", s(&rob)]);
    let rows: Vec<String> = std::fs::read_to_string(&rob).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("identity,"));
    assert!(rows[2].starts_with("jpeg:95,"));
    assert!(rows[3].starts_with("gauss:5@seed=7,"));
    // identity row reproduces the eval report
    let acc: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(acc, r["acc"].as_f64().unwrap());

    let spec_dir = root.join("spec");
    let printed = ok(&["spectrum", "--dir", s(&sim.join("gen")), "--out-dir", s(&spec_dir), "--mean-profile", "--peak-period", "64"]);
    assert!(printed.contains("\"ratio\""));
    assert!(spec_dir.join("img000_raw.png").exists());
    assert!(spec_dir.join("img000_enhanced.png").exists());
    assert_eq!(std::fs::read_to_string(spec_dir.join("profile.csv")).unwrap().lines().count(), 257);

    let pert = root.join("p.jpg");
    ok(&["perturb", "--input", s(&sim.join("real/img000.png")), "--output", s(&pert), "--perturb", "gamma:2"]);
    assert!(pert.exists());
}

#[test]
fn training_refuses_generated_images() {
    let tmp = tempfile::tempdir().unwrap();
    let files = scenes(tmp.path(), 2, 1);
    let manifest = tmp.path().join("m.json");
    let body = serde_json::json!({
        "seed": 0,
        "entries": [
            {"path": s(&files[0]), "label": "real"},
            {"path": s(&files[1]), "label": "generated"},
        ]
    });
    std::fs::write(&manifest, body.to_string()).unwrap();
    let out = run(&["train", "--manifest", s(&manifest), "--model", s(&tmp.path().join("m.model"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("generated"));
    assert!(!tmp.path().join("m.model").exists());
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("imgs");
    scenes(&dir, 10, 50);
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, "# detector settings\nnu = 0.5\nk = 64\n").unwrap();

    let a = tmp.path().join("a.json");
    ok(&["train", "--config", s(&cfg), "--dir", s(&dir), "--model", s(&a)]);
    let ma: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(ma["nu"], 0.5);
    assert_eq!(ma["k"], 64);
    assert_eq!(ma["sv"][0].as_array().unwrap().len(), 16);

    let b = tmp.path().join("b.json");
    ok(&["train", "--config", s(&cfg), "--nu", "0.2", "--dir", s(&dir), "--model", s(&b)]);
    let mb: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&b).unwrap()).unwrap();
    assert_eq!(mb["nu"], 0.2);
    assert_eq!(mb["k"], 64);

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert!(!run(&["train", "--config", s(&cfg), "--dir", s(&dir), "--model", s(&b)]).status.success());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("imgs");
    scenes(&dir, 12, 70);
    let mut bytes = Vec::new();
    for threads in ["1", "3"] {
        let model = tmp.path().join(format!("m{threads}.json"));
        let status = bin()
            .env("REALONLY_THREADS", threads)
            .args(["train", "--dir", s(&dir), "--model", s(&model), "--nu", "0.2"])
            .output()
            .unwrap();
        assert!(status.status.success());
        bytes.push(std::fs::read(&model).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let bad = bin()
        .env("REALONLY_THREADS", "zero")
        .args(["train", "--dir", s(&dir), "--model", s(&tmp.path().join("x.json"))])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn bench_report_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("imgs");
    scenes(&dir, 100, 300);
    let model = tmp.path().join("m.json");
    ok(&["train", "--dir", s(&dir), "--model", s(&model)]);
    let report = tmp.path().join("bench.json");
    ok(&["bench", "--model", s(&model), "--dir", s(&dir), "--out", s(&report), "--threads", "1"]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["images_per_s"].as_f64().unwrap() > 0.0);
    for stage in ["decode", "noise", "fft", "svm"] {
        assert!(v["stages"][stage].as_f64().unwrap() >= 0.0, "{stage}");
    }

    let few = tmp.path().join("few");
    scenes(&few, 3, 1);
    assert!(!run(&["bench", "--model", s(&model), "--dir", s(&few)]).status.success());
}

#[test]
fn usage_errors() {
    assert!(!run(&["train"]).status.success());
    assert!(!run(&["frobnicate"]).status.success());
    let out = run(&["perturb", "--input", "/nonexistent.png", "--output", "/tmp/x.png", "--perturb", "jpeg:10"]);
    assert!(!out.status.success());
}
