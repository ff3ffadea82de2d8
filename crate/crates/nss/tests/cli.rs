//! End-to-end runs of the `nss` binary on synthetic data.

use std::path::Path;
use std::process::{Command, Output};

use nss::metrics::sample_skewness;

const DATA: &str = "synthetic:3,6,60,6,42";

fn nss_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train_model(dir: &Path) -> std::path::PathBuf {
    let out = nss_bin(&[
        "train",
        "--data",
        DATA,
        "--out",
        dir.to_str().unwrap(),
        "--epochs",
        "8",
        "--batch-size",
        "16",
        "--hidden",
        "12",
    ]);
    assert_ok(&out, "train");
    dir.join("model.json")
}

#[test]
fn train_sweep_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_model(&tmp.path().join("train"));
    assert!(model.exists());
    assert!(tmp.path().join("train/train_log.json").exists());

    let sweep_dir = tmp.path().join("sweep");
    let out = nss_bin(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--data",
        DATA,
        "--out",
        sweep_dir.to_str().unwrap(),
        "--attack",
        "fgsm",
        "--eps0",
        "0.05",
        "--mu",
        "0.1,0.3,0.6",
        // negative clip bounds must parse as values, not flags
        "--clip",
        "-3",
        "3",
        "--svg",
    ]);
    assert_ok(&out, "sweep");
    for f in ["manifest.json", "records.csv", "report.json", "histogram.svg"] {
        assert!(sweep_dir.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(sweep_dir.join("records.csv")).unwrap();
    assert!(csv.starts_with("# manifest "));
    assert!(csv.contains("input_index,true_label,clean_pred,nss"));

    // report verifies the manifest hash and prints a summary
    let out = nss_bin(&["report", "--out", sweep_dir.to_str().unwrap()]);
    assert_ok(&out, "report");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("manifest"));
    assert!(text.contains("validation"));

    // tampering with the manifest must be detected
    let manifest_path = sweep_dir.join("manifest.json");
    let tampered = std::fs::read_to_string(&manifest_path)
        .unwrap()
        .replace("\"seed\": 0", "\"seed\": 1");
    std::fs::write(&manifest_path, tampered).unwrap();
    let out = nss_bin(&["report", "--out", sweep_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn single_input_nss_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_model(&tmp.path().join("train"));
    let out = nss_bin(&[
        "nss",
        "--model",
        model.to_str().unwrap(),
        "--data",
        DATA,
        "--index",
        "0",
        "--attack",
        "fgsm",
        "--eps0",
        "0.0",
    ]);
    assert_ok(&out, "nss");
    let json: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("nss prints JSON");
    assert_eq!(json["input_index"], 0);
    assert!(json["clean_prediction"].is_number());
}

#[test]
fn skewness_subcommand_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = "\
input_index,true_label,clean_pred,nss,minimizing_class,first_success_mu,misclassified_as
0,0,0,0.5,1,,
1,1,1,1.0,0,,
2,0,0,1.5,1,,
3,1,1,4.0,0,,
4,0,0,100,,,
";
    let path = tmp.path().join("records.csv");
    std::fs::write(&path, csv).unwrap();
    let out = nss_bin(&["skewness", "--records", path.to_str().unwrap()]);
    assert_ok(&out, "skewness");
    let got: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let expected = sample_skewness(&[0.5, 1.0, 1.5, 4.0]).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn correlate_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, (skew, low, high)) in [(2.5, 0.17, 0.72), (1.9, 0.12, 0.63), (0.8, 0.08, 0.30)]
        .iter()
        .enumerate()
    {
        let report = serde_json::json!({
            "manifest_hash": "t",
            "validation_error": 0.02,
            "per_level_error": [
                {"level": 0.05, "error_rate": low},
                {"level": 0.2, "error_rate": high},
            ],
            "skewness": skew,
            "counts": {"total": 0, "clean_errors": 0, "direction_rejected": 0,
                       "eps0_failures": 0, "survivors": 0},
            "histogram": {"bin_width": 0.25, "max_score": 100.0,
                          "categories": ["never"],
                          "bins": [{"lo": 0.0, "hi": 0.25, "counts": [0]}]},
        });
        let p = tmp.path().join(format!("r{i}.json"));
        std::fs::write(&p, serde_json::to_string(&report).unwrap()).unwrap();
        paths.push(p);
    }
    let out = nss_bin(&[
        "correlate",
        "--report",
        paths[0].to_str().unwrap(),
        "--report",
        paths[1].to_str().unwrap(),
        "--report",
        paths[2].to_str().unwrap(),
    ]);
    assert_ok(&out, "correlate");
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["r2_skew_vs_high"].as_f64().unwrap() > 0.8);
    assert_eq!(json["level"].as_f64().unwrap(), 0.2);
}

#[test]
fn sweep_output_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_model(&tmp.path().join("train"));
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let dir = tmp.path().join(format!("sweep{workers}"));
        let out = nss_bin(&[
            "sweep",
            "--model",
            model.to_str().unwrap(),
            "--data",
            DATA,
            "--out",
            dir.to_str().unwrap(),
            "--attack",
            "gaussian",
            "--eps0",
            "0.0",
            "--mu",
            "0.2,0.5",
            "--workers",
            workers,
        ]);
        assert_ok(&out, "sweep");
        outputs.push(std::fs::read(dir.join("records.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
