use std::path::Path;
use std::process::{Command, Output};

use mvlogit::data::DatasetFile;
use mvlogit::simulation::{generate_mv_data, SimDesign};
use mvlogit::MatrixDataset;
use serde_json::Value;

fn mvlogit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlogit"))
        .args(args)
        .env_remove("MVLOGIT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mvlogit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_dataset(path: &Path, data: &MatrixDataset) {
    DatasetFile::from_binary(data).save(path).unwrap();
}

fn small_data(dir: &Path) -> std::path::PathBuf {
    let design = SimDesign::new(4, 3, 120, 0.0);
    let path = dir.join("data.json");
    write_dataset(&path, &generate_mv_data(&design, 3));
    path
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--p=4".into(),
            "--q=3".into(),
            "--n=80".into(),
            "--sigma=0.3".into(),
            "--replicates=6".into(),
            "--seed=11".into(),
            "--threads=2".into(),
            format!("--out={}", out.display()),
        ]
    };
    for out in [&a, &b] {
        let args = args(out);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["report"]["replicates_used"], 6);
    assert_eq!(v["report"]["design"]["seed"], 11);
}

#[test]
fn eeg_pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let eeg = dir.path().join("eeg");
    let ds = dir.path().join("ds.json");
    let summary: Value = serde_json::from_str(&ok(&[
        "ingest-eeg",
        "--synthetic",
        "--data-dir",
        path_str(&eeg),
        "--out",
        path_str(&ds),
    ]))
    .unwrap();
    assert_eq!(summary["subjects"], 30);
    assert_eq!(summary["alcoholic"], 18);

    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["eeg-pipeline", "--data", path_str(&ds), "--grid", "1,8,32", "--seed", "5", "--out", path_str(&out)]);
        std::fs::read(out).unwrap()
    };
    let first = run("r1.json");
    assert_eq!(first, run("r2.json"));
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["preprocessing"], "global");
    assert_eq!(v["subjects"].as_array().unwrap().len(), 30);
    assert_eq!(v["mv"]["accuracy"].as_array().unwrap().len(), 3);
    assert_eq!(v["coefficients"].as_array().unwrap().len(), 30);
}

#[test]
fn pipeline_reads_the_data_directory_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let eeg = dir.path().join("eeg");
    ok(&["ingest-eeg", "--synthetic", "--data-dir", path_str(&eeg), "--out", path_str(&dir.path().join("ds.json"))]);
    let out = Command::new(env!("CARGO_BIN_EXE_mvlogit"))
        .args(["eeg-pipeline", "--p0", "3", "--q0", "3", "--grid", "4", "--format", "csv"])
        .env("MVLOGIT_DATA_DIR", &eeg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("lambda,mv_accuracy,conventional_accuracy\n4,"));
}

#[test]
fn fit_then_predict_reproduces_in_sample_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = dir.path().join("model.json");
    let trace = dir.path().join("trace.csv");
    let report: Value = serde_json::from_str(&ok(&[
        "fit",
        "--data",
        path_str(&data),
        "--lambda",
        "0.5",
        "--standardize",
        "--trace",
        path_str(&trace),
        "--out",
        path_str(&model),
    ]))
    .unwrap();
    assert_eq!(report["status"], "converged");
    assert_eq!(report["coefficients"].as_array().unwrap().len(), 4 + 3);
    let lines = std::fs::read_to_string(&trace).unwrap().lines().count();
    assert_eq!(lines, report["iterations"].as_u64().unwrap() as usize + 1);

    let pred: Value = serde_json::from_str(&ok(&["predict", "--model", path_str(&model), "--data", path_str(&data)])).unwrap();
    assert_eq!(pred["accuracy"], report["in_sample_accuracy"]);
    assert_eq!(pred["predictions"].as_array().unwrap().len(), 120);

    let inf: Value = serde_json::from_str(&ok(&["infer", "--model", path_str(&model), "--data", path_str(&data)])).unwrap();
    assert_eq!(inf["coefficients"], report["coefficients"]);
}

#[test]
fn single_subject_file_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = dir.path().join("model.json");
    ok(&["fit", "--data", path_str(&data), "--lambda", "1", "--out", path_str(&model)]);
    let one = dir.path().join("one.json");
    let full = MatrixDataset::load_json(&data).unwrap();
    write_dataset(&one, &full.subset(&[7]));
    let csv = ok(&["predict", "--model", path_str(&model), "--data", path_str(&one), "--format", "csv"]);
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn raw_eeg_matrices_need_stored_bases() {
    let dir = tempfile::tempdir().unwrap();
    let eeg = dir.path().join("eeg");
    let ds = dir.path().join("ds.json");
    ok(&["ingest-eeg", "--synthetic", "--data-dir", path_str(&eeg), "--out", path_str(&ds)]);
    let small = small_data(dir.path());
    let model = dir.path().join("model.json");
    ok(&["fit", "--data", path_str(&small), "--out", path_str(&model)]);
    let out = mvlogit(&["predict", "--model", path_str(&model), "--data", path_str(&ds)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing preprocessing artifact"));
}

#[test]
fn multiclass_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let design = SimDesign::new(3, 3, 150, 0.0);
    let base = generate_mv_data(&design, 1);
    let shift = generate_mv_data(&design, 2);
    // three classes: the binary label plus a third class from a second draw
    let mut file = DatasetFile::from_binary(&base);
    file.num_classes = Some(3);
    file.labels = file.labels.iter().map(|&y| y + 1).collect();
    let extra = DatasetFile::from_binary(&shift);
    for (m, &y) in extra.matrices.into_iter().zip(&extra.labels).take(60) {
        file.matrices.push(m);
        file.labels.push(if y == 1 { 3 } else { 1 });
    }
    let path = dir.path().join("multi.json");
    file.save(&path).unwrap();
    let model = dir.path().join("model.json");
    let report: Value = serde_json::from_str(&ok(&["fit", "--data", path_str(&path), "--lambda", "1", "--out", path_str(&model)])).unwrap();
    assert_eq!(report["kind"], "multiclass");
    assert_eq!(report["coefficients"].as_array().unwrap().len(), 2 * (1 + 2 + 3));
    let pred: Value = serde_json::from_str(&ok(&["predict", "--model", path_str(&model), "--data", path_str(&path)])).unwrap();
    assert_eq!(pred["accuracy"], report["in_sample_accuracy"]);
}

#[test]
fn cv_and_pca_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let cv: Value =
        serde_json::from_str(&ok(&["cv", "--data", path_str(&data), "--grid", "0.5,4", "--scheme", "kfold:4", "--seed", "3"])).unwrap();
    assert_eq!(cv["mv"]["grid"].as_array().unwrap().len(), 2);
    assert!(cv["conventional"]["selected_accuracy"].as_f64().unwrap() > 0.5);
    let pca = ok(&["pca-baseline", "--data", path_str(&data), "--r", "1,3", "--grid", "1", "--format", "csv"]);
    assert_eq!(pca.lines().count(), 3);
}

#[test]
fn glram_saves_bases_usable_by_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let bases = dir.path().join("bases.json");
    let s: Value = serde_json::from_str(&ok(&["glram", "--data", path_str(&data), "--p0", "2", "--q0", "2", "--out", path_str(&bases)])).unwrap();
    assert!(s["captured_energy_fraction"].as_f64().unwrap() <= 1.0);
    let model = dir.path().join("model.json");
    let r: Value =
        serde_json::from_str(&ok(&["fit", "--data", path_str(&data), "--glram", path_str(&bases), "--lambda", "1", "--out", path_str(&model)]))
            .unwrap();
    assert_eq!(r["p"], 2);
    let pred: Value = serde_json::from_str(&ok(&["predict", "--model", path_str(&model), "--data", path_str(&data)])).unwrap();
    assert_eq!(pred["accuracy"], r["in_sample_accuracy"]);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = mvlogit(&["fit", "--data", path_str(&data), "--lambda", "-1", "--out", path_str(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = mvlogit(&["fit", "--data", path_str(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    let out = mvlogit(&["eeg-pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mvlogit(&["cv", "--data", path_str(&data), "--scheme", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}
