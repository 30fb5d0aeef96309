use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fatfrac::pipeline::{load_manifest, load_split_index, MANIFEST_FILE, SPLIT_INDEX_FILE};
use fatfrac::{masked_mae, read_raster, BinaryMask};
use sha2::{Digest, Sha256};

fn fatfrac(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fatfrac"));
    cmd.args(args).args(paths).env_remove("FATFRAC_OUT");
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn digests(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().into(), hex::encode(Sha256::digest(fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn phantom_is_reproducible_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(fatfrac(&["phantom", "-n", "2", "--seed", "7", "--out"], &[out]));
    }
    assert_eq!(digests(&a), digests(&b));
    let cfg = fs::read_to_string(a.join("run_config.toml")).unwrap();
    assert!(cfg.contains("seed = 7"), "{cfg}");
    assert!(cfg.contains("command = \"phantom\""), "{cfg}");
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[pipeline]\nnot_a_key = 3\n");
    let out = fatfrac(&["phantom", "--out"], &[&dir.path().join("o"), Path::new("--config"), &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not_a_key"), "{err}");

    let out = fatfrac(&["phantom", "-n", "0", "--out"], &[&dir.path().join("o")]);
    assert_eq!(out.status.code(), Some(2));
    // No --out and no FATFRAC_OUT.
    assert_eq!(fatfrac(&["phantom", "-n", "1"], &[]).status.code(), Some(2));
}

#[test]
fn default_config_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(fatfrac(&["config"], &[]));
    let cfg = write_config(dir.path(), &text);
    ok(fatfrac(&["phantom", "-n", "1", "--config"], &[&cfg, Path::new("--out"), &dir.path().join("o")]));
}

#[test]
fn fit_eval_and_export_on_a_small_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let cfg = write_config(dir.path(), "[pipeline]\nseed = 3\nn_subjects = 10\n\n[pipeline.phantom]\nnoise_sigma = 0.0\n");
    let stdout = ok(fatfrac(&["phantom", "--config"], &[&cfg, Path::new("--out"), &cohort]));
    assert!(stdout.contains("9 samples"), "{stdout}");
    let manifest_path = cohort.join(MANIFEST_FILE);
    let manifest = load_manifest(&manifest_path).unwrap();
    assert_eq!(manifest.split_counts(), [6, 2, 1]);

    let preds = dir.path().join("preds");
    for method in ["dixon", "baseline_r2s", "nlls"] {
        ok(fatfrac(&["fit", "--method", method, "--manifest"], &[&manifest_path, Path::new("--out"), &preds]));
    }
    let first = &manifest.samples[0];
    let stem = |m: &str, q: &str| preds.join(format!("{}_{m}_{q}", first.subject_id));
    assert!(fatfrac::raster::header_path(&stem("dixon", "pdff")).is_file());
    assert!(!fatfrac::raster::header_path(&stem("dixon", "r2star")).exists());
    assert!(!fatfrac::raster::header_path(&stem("baseline_r2s", "pdff")).exists());
    assert!(preds.join("fit_nlls.toml").is_file());

    // Noiseless NLLS recovers the phantom inside the liver.
    let truth = read_raster(&cohort.join(&first.files.truth)).unwrap();
    let liver = BinaryMask::from_raster(&read_raster(&cohort.join(&first.files.liver_mask)).unwrap(), 0);
    let nlls = read_raster(&stem("nlls", "pdff")).unwrap();
    let mae = masked_mae(&nlls, &truth.channel(0), Some(&liver)).unwrap();
    assert!(mae < 0.1, "liver PDFF MAE {mae}");
    let baseline = read_raster(&stem("baseline_r2s", "r2star")).unwrap();
    assert!(baseline.data.iter().any(|&v| v < 0.0));

    // Targets scored against themselves.
    let eval_target = dir.path().join("eval_target");
    let text = ok(fatfrac(
        &["eval", "--methods", "target", "--truth", "target", "--split", "all", "--manifest"],
        &[&manifest_path, Path::new("--out"), &eval_target],
    ));
    assert!(text.contains("target"), "{text}");
    let csv = fs::read_to_string(eval_target.join("report.csv")).unwrap();
    for line in csv.lines().filter(|l| l.contains("_mae,")) {
        assert_eq!(line.split(',').nth(3), Some("0"), "{line}");
    }

    let eval_out = |name: &str| {
        let out = dir.path().join(name);
        ok(fatfrac(
            &["eval", "--methods", "dixon,nlls", "--split", "all", "--png", "--manifest"],
            &[&manifest_path, Path::new("--pred"), &preds, Path::new("--out"), &out],
        ));
        out
    };
    let (e1, e2) = (eval_out("e1"), eval_out("e2"));
    let csv = fs::read_to_string(e1.join("report.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(e2.join("report.csv")).unwrap());
    assert!(csv.contains("dixon,pdff_mae,slice,") && csv.contains("nlls,r2star_mae,liver,"));
    assert!(e1.join("scatter_pdff.png").is_file());

    // A method without predictions is a runtime error naming the files.
    let out = fatfrac(
        &["eval", "--methods", "unknown", "--split", "all", "--manifest"],
        &[&manifest_path, Path::new("--pred"), &preds, Path::new("--out"), &dir.path().join("e3")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("_unknown_pdff"));

    let ml = dir.path().join("ml");
    ok(fatfrac(&["export-ml", "--manifest"], &[&manifest_path, Path::new("--out"), &ml]));
    let index = load_split_index(&ml.join(SPLIT_INDEX_FILE)).unwrap();
    assert_eq!(index.samples.len(), 9);
    assert!(index.mi_filtered);
}

#[test]
fn unfiltered_cohorts_need_explicit_consent_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    ok(fatfrac(&["phantom", "-n", "3", "--no-filter", "--out"], &[&cohort]));
    let manifest = cohort.join(MANIFEST_FILE);
    let out = fatfrac(&["export-ml", "--manifest"], &[&manifest, Path::new("--out"), &dir.path().join("ml")]);
    assert_eq!(out.status.code(), Some(2));
    ok(fatfrac(&["export-ml", "--allow-unfiltered", "--manifest"], &[&manifest, Path::new("--out"), &dir.path().join("ml")]));
    let index = load_split_index(&dir.path().join("ml").join(SPLIT_INDEX_FILE)).unwrap();
    assert!(!index.mi_filtered);
    assert_eq!(index.samples.len(), 3);
}

#[test]
fn pipeline_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(fatfrac(&["--jobs", "1", "pipeline", "-n", "6", "--seed", "9", "--out"], &[&a]));
    ok(fatfrac(&["--jobs", "3", "pipeline", "-n", "6", "--seed", "9", "--out"], &[&b]));
    let (da, db) = (digests(&a), digests(&b));
    assert_eq!(da, db);
    for stage in ["cohort/manifest.json", "eval/report.csv", "ml/splits.json", "run_config.toml"] {
        assert!(da.contains_key(Path::new(stage)), "missing {stage}");
    }
}
