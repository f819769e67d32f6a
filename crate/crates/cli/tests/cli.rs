use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facegeom::experiment::{evaluate_stored, EvalOptions, Protocol};
use facegeom::morphable::PointSet;
use facegeom::networks::{CheckpointExtra, DimensionLedger, NetworkParams, GROUPS};
use facegeom::predictions::{self, StoredPrediction};
use facegeom::training::{load_dataset, save_dataset, TrainConfig};
use tempfile::TempDir;

const TINY: &str = "\
# small widths so the tests run in seconds
epochs = 2
batch = 8
encoder_hidden = 16
z_dim = 16
point_hidden = 8,16
point_global_dim = 16
decoder_hidden = 16,8
lgs_dims = 8,16
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facegeom"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 16-sample dataset on a 256-vertex basis.
fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    assert_eq!(code(&["synth", "--count", "16", "--n-vertices", "256", "--out", s(&out)]), 0);
    out.join("dataset.json")
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn train(dir: &Path, data: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let cfg = tiny_config(dir, extra);
    let ck = dir.join("ck.json");
    let csv = dir.join("loss.csv");
    let out = run(&[
        "train",
        "--data",
        s(data),
        "--config",
        s(&cfg),
        "--out-checkpoint",
        s(&ck),
        "--loss-csv",
        s(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (ck, csv)
}

/// Prediction directory holding the groundtruth itself.
fn copy_groundtruth(data: &Path, dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let d = load_dataset(data).unwrap();
    for smp in &d.samples {
        let p = StoredPrediction {
            id: smp.id.clone(),
            coarse: smp.gt_landmarks.clone(),
            refined: smp.gt_landmarks.clone(),
            euler: smp.gt_euler,
            params: smp.gt_params.clone(),
        };
        predictions::write_landmarks(dir, &p).unwrap();
        predictions::write_params(dir, &p).unwrap();
    }
}

fn eval(pred: &Path, data: &Path, protocol: &str, report: &Path) -> Output {
    run(&[
        "eval",
        "--pred-dir",
        s(pred),
        "--gt-data",
        s(data),
        "--protocol",
        protocol,
        "--out-report",
        s(report),
    ])
}

#[test]
fn synth_rejects_zero_count() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&["synth", "--count", "0", "--out", s(&t.path().join("x"))]), 2);
}

#[test]
fn missing_input_is_usage_error() {
    let t = TempDir::new().unwrap();
    let missing = t.path().join("nope.json");
    assert_eq!(code(&["verify", "--data", s(&missing)]), 2);
}

#[test]
fn synth_is_byte_reproducible_and_verifies() {
    let t = TempDir::new().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = t.path().join(name);
        assert_eq!(code(&["synth", "--count", "4", "--n-vertices", "200", "--out", s(&out)]), 0);
        let files: Vec<Vec<u8>> = ["basis.json", "basis.bin", "dataset.json", "dataset.bin"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        bytes.push(files);
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(code(&["verify", "--data", s(&t.path().join("a/dataset.json"))]), 0);
}

#[test]
fn train_writes_history_and_manifest() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, csv) = train(t.path(), &data, "epochs = 1\n");
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,L_3DMM,L_lmk,L_3DMM_lmk,L_g,total");
    assert_eq!(lines.len(), 2);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("ck.run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["seeds"]["init"], 7);
    assert_eq!(run["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(code(&["verify", "--checkpoint", s(&ck)]), 0);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, _) = train(t.path(), &data, "lr = 0\nseed = 3\n");
    let (trained, _) = NetworkParams::load(&ck).unwrap();
    let init = NetworkParams::init(trained.ledger.clone(), 3).unwrap();
    assert_eq!(trained.num_parameters(), init.num_parameters());
    for group in GROUPS {
        for i in init.group_indices(group) {
            assert_eq!(trained.get(i), init.get(i));
        }
    }
}

#[test]
fn zero_refiner_makes_refined_equal_coarse() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, _) = train(t.path(), &data, "epochs = 1\n");
    let (mut params, extra) = NetworkParams::load(&ck).unwrap();
    params.zero_refiner_output();
    let zeroed = t.path().join("zeroed.json");
    params.save(&zeroed, extra).unwrap();
    let out = t.path().join("pred");
    assert_eq!(
        code(&["infer", "--checkpoint", s(&zeroed), "--input", s(&data), "--out-dir", s(&out), "--emit", "json"]),
        0
    );
    let ids = predictions::list_ids(&out).unwrap();
    assert_eq!(ids.len(), 16);
    for id in ids {
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(predictions::landmarks_path(&out, &id)).unwrap()).unwrap();
        assert_eq!(raw["refined"], raw["coarse"]);
        assert_eq!(raw["refined"].as_array().unwrap().len(), 68);
        assert!(!predictions::obj_path(&out, &id).exists());
    }
}

#[test]
fn obj_output_roundtrips() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, _) = train(t.path(), &data, "epochs = 1\n");
    let out = t.path().join("pred");
    assert_eq!(code(&["infer", "--checkpoint", s(&ck), "--input", s(&data), "--out-dir", s(&out)]), 0);
    let basis = load_dataset(&data).unwrap().basis;
    let mesh = PointSet::from_obj(&fs::read_to_string(predictions::obj_path(&out, "s00000")).unwrap()).unwrap();
    assert_eq!(mesh.len(), 256);
    assert_eq!(mesh.faces.as_deref(), Some(basis.faces()));
    assert!(out.join("run.json").exists());
}

#[test]
fn infer_rejects_foreign_ledger() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let ledger = DimensionLedger {
        observation_side: 24,
        ..TrainConfig::parse(TINY).unwrap().ledger
    };
    let params = NetworkParams::init(ledger, 0).unwrap();
    let ck = t.path().join("foreign.json");
    params.save(&ck, CheckpointExtra::default()).unwrap();
    let out = run(&["infer", "--checkpoint", s(&ck), "--input", s(&data), "--out-dir", s(&t.path().join("p"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint:") && err.contains("data:"), "{err}");
}

#[test]
fn groundtruth_copy_scores_zero() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let pred = t.path().join("pred");
    copy_groundtruth(&data, &pred);
    let r = t.path().join("nme.json");
    assert!(eval(&pred, &data, "nme", &r).status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(v["nme_by_bucket"]["all"], 0.0);
    assert!(v["mae"].is_null() && v["recon"].is_null());
    assert!(t.path().join("nme.run.json").exists());

    assert!(eval(&pred, &data, "mae", &r).status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(v["mae"]["mean"], 0.0);

    for (protocol, key) in [("p1", "protocol1_nme"), ("p2", "protocol2_nme"), ("florence", "p2plane_rmse")] {
        let out = eval(&pred, &data, protocol, &r);
        assert!(out.status.success(), "{protocol}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
        assert!(v["recon"][key].as_f64().unwrap().abs() < 1e-9, "{protocol}: {v}");
    }
}

#[test]
fn report_matches_library_call() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, _) = train(t.path(), &data, "epochs = 1\n");
    let pred = t.path().join("pred");
    assert_eq!(code(&["infer", "--checkpoint", s(&ck), "--input", s(&data), "--out-dir", s(&pred)]), 0);
    let d = load_dataset(&data).unwrap();
    let stored = predictions::read_all(&pred).unwrap();
    for (name, protocol) in [("nme", Protocol::Nme), ("mae", Protocol::Mae), ("p2", Protocol::P2)] {
        let r = t.path().join(format!("{name}.json"));
        assert!(eval(&pred, &data, name, &r).status.success());
        let expected = evaluate_stored(&d.basis, &d.samples, &stored, protocol, &EvalOptions::default()).unwrap();
        let cli: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
        assert_eq!(cli, serde_json::to_value(&expected).unwrap());
    }
}

#[test]
fn eval_exit_codes() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let pred = t.path().join("pred");
    copy_groundtruth(&data, &pred);
    let r = t.path().join("r.json");

    fs::remove_file(predictions::params_path(&pred, "s00003")).unwrap();
    let out = eval(&pred, &data, "nme", &r);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s00003"));

    // Every yaw outside the evaluated range leaves nothing to score.
    let copy = t.path().join("pred2");
    copy_groundtruth(&data, &copy);
    let mut d = load_dataset(&data).unwrap();
    for (i, smp) in d.samples.iter_mut().enumerate() {
        smp.gt_euler.yaw = if i % 2 == 0 { 120.0 } else { -120.0 };
    }
    let wide = data.with_file_name("wide.json");
    save_dataset(&wide, &d.samples, None, "basis.json").unwrap();
    assert_eq!(eval(&copy, &wide, "nme", &r).status.code(), Some(1));
    assert_eq!(eval(&copy, &wide, "mae", &r).status.code(), Some(1));
}

#[test]
fn corrupted_checkpoint_fails_verification() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path());
    let (ck, _) = train(t.path(), &data, "epochs = 1\n");
    let blob = ck.with_extension("bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 8);
    fs::write(&blob, bytes).unwrap();
    let out = run(&["verify", "--checkpoint", s(&ck)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn default_checkpoint_reports_default_widths() {
    let t = TempDir::new().unwrap();
    let ck = t.path().join("default.json");
    NetworkParams::init(DimensionLedger::default(), 7)
        .unwrap()
        .save(&ck, CheckpointExtra::default())
        .unwrap();
    let out = run(&["verify", "--checkpoint", s(&ck)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fusion_dim = 2354") && text.contains("mmpf_dim = 2418"), "{text}");
}
