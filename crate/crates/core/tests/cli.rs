use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mango::bench::{pf_reference, Task};
use mango::io::{self, TaskSidecar};
use mango::manifest::RunManifest;
use mango::pareto::EvalReport;

fn mango(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mango"))
        .args(args)
        .env("MANGO_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = mango(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        ok(&["gen-data", "--task", "zdt2", "--n", "400", "--removal", "0.4", "--seed", "9", "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (ds, side) = io::read_dataset(&a).unwrap();
    assert_eq!(ds.len(), 240);
    assert_eq!((side.d, side.m), Task::Zdt2.dims());
}

#[test]
fn exit_codes() {
    assert_eq!(mango(&["--help"]).status.code(), Some(0));
    assert_eq!(mango(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(mango(&["gen-data", "--task", "branin"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        mango(&["train", "--data", p(&missing), "--out", p(&out)]).status.code(),
        Some(2)
    );
}

#[test]
fn eval_of_front_points_has_zero_igd() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    ok(&["gen-data", "--task", "zdt1", "--n", "500", "--removal", "0.4", "--seed", "1", "--out", p(&data)]);

    // ZDT1's front is x1 in [0, 1] with the remaining coordinates at zero.
    let task = Task::Zdt1;
    let (d, m) = task.dims();
    let front = pf_reference(task, 200).unwrap();
    let rows: Vec<Vec<f64>> = front
        .iter()
        .map(|y| {
            let mut r = vec![0.0; d];
            r[0] = y.as_slice()[0];
            r.extend_from_slice(y.as_slice());
            r
        })
        .collect();
    let cands = dir.path().join("cands.csv");
    io::write_dataset(&cands, &TaskSidecar::from(&task.spec()), &rows).unwrap();
    assert_eq!(rows[0].len(), d + m);

    let report_path = dir.path().join("eval.json");
    ok(&["eval", "--candidates", p(&cands), "--data", p(&data), "--out", p(&report_path)]);
    let report: EvalReport = io::read_json(&report_path).unwrap();
    assert!(report.normalized);
    assert!(report.normalized_igd.abs() < 1e-12, "{report:?}");
    assert!(report.normalized_hv > 1.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("d.csv");
    std::fs::write(&cfg, r#"{"task": "branin", "n": 50, "seed": 4}"#).unwrap();
    ok(&["gen-data", "--config", p(&cfg), "--n", "30", "--out", p(&out)]);
    let manifest = RunManifest::read(&RunManifest::path_for(&out)).unwrap();
    assert_eq!(manifest.config["n"], 30);
    assert_eq!(manifest.config["seed"], 4);
    assert_eq!(manifest.config["task"], "branin");
    assert_eq!(io::read_dataset(&out).unwrap().0.len(), 30);
}

/// Runs the whole pipeline at toy size and replays every manifest.
#[test]
fn pipeline_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let f = |name: &str| -> PathBuf { dir.path().join(name) };
    let (data, ck, cands, pred, fid, report) = (
        f("train.csv"),
        f("model.ckpt"),
        f("cands.csv"),
        f("pred.json"),
        f("fid.json"),
        f("eval.json"),
    );
    ok(&["gen-data", "--task", "branin", "--n", "300", "--removal", "0.4", "--seed", "2", "--out", p(&data)]);
    ok(&[
        "train", "--data", p(&data), "--out", p(&ck), "--epochs", "3", "--hidden", "16", "--depth", "2",
        "--time-embed", "8", "--seed", "2",
    ]);
    ok(&[
        "sample", "--checkpoint", p(&ck), "--out", p(&cands), "--k", "12", "--steps", "30", "--seed", "3",
        "--scaling", "self-is", "--tau", "1e-9", "--j", "3", "--every", "5", "--m-fidelity", "16", "--data", p(&data),
    ]);
    ok(&["predict", "--checkpoint", p(&ck), "--design", "1,2", "--out", p(&pred), "--alpha-x", "2", "--steps", "40"]);
    ok(&["fidelity", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&fid), "--m-fidelity", "16", "--steps", "30"]);
    ok(&["eval", "--candidates", p(&cands), "--data", p(&data), "--out", p(&report)]);

    let sample_manifest = RunManifest::read(&RunManifest::path_for(&cands)).unwrap();
    assert!(sample_manifest.notes.contains_key("fidelity"));
    assert!(sample_manifest.checkpoint_id.is_some());

    for (i, primary) in [&data, &ck, &cands, &pred, &fid, &report].into_iter().enumerate() {
        let manifest = RunManifest::path_for(primary);
        let original = RunManifest::read(&manifest).unwrap();
        assert!(!original.outputs.is_empty());
        let replay_dir = f(&format!("replay{i}"));
        ok(&["replay", "--manifest", p(&manifest), "--out-dir", p(&replay_dir)]);
        for o in &original.outputs {
            let again = replay_dir.join(o.path.file_name().unwrap());
            assert_eq!(io::file_digest(&again).unwrap(), o.sha256, "{}", again.display());
        }
    }
}

#[test]
fn replay_detects_tampered_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["gen-data", "--task", "branin", "--n", "20", "--out", p(&data)]);
    let manifest = RunManifest::path_for(&data);
    let mut m = RunManifest::read(&manifest).unwrap();
    m.outputs[0].sha256 = "0".repeat(64);
    io::write_json(&manifest, &m).unwrap();
    let out = mango(&["replay", "--manifest", p(&manifest), "--out-dir", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}
