//! In-process tests of the CLI commands plus exit-code checks on the
//! installed binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use adploc_cli::{
    centroid_of, cmd_baseline, cmd_evaluate, cmd_generate, cmd_train, BaselineKind,
    TrainFileConfig,
};
use adploc_core::checkpoint::load_checkpoint;
use adploc_core::dataset::{read_dataset, sidecar_path};
use adploc_core::error::Error;
use adploc_core::metrics::{EvalReport, ReportSummary};
use adploc_core::nn::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_scenario(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("scenario.json");
    let text = format!(
        r#"{{
  "scenario_id": "test",
  "n_tx": {n},
  "n_sub": {n},
  "n_clusters": 2,
  "paths_per_cluster": 4,
  "area": {{ "x_min": 0.0, "x_max": 60.0, "y_min": 0.0, "y_max": 60.0 }},
  "bs_position": [30.0, -10.0],
  "angle_spread_deg": 5.0,
  "delay_spread_samples": 1.5,
  "seed": 5
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn write_train_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("train.json");
    fs::write(&path, body).unwrap();
    path
}

const TINY_TRAIN: &str = r#"{
  "epochs": 3,
  "learning_rate": 0.001,
  "weight_decay": 0.0001,
  "batch_size": 16,
  "seed": 9,
  "split": [0.64, 0.16, 0.20],
  "vit": { "n_layers": 1, "n_heads": 2, "embed_dim": 16, "mlp_head_sizes": [16, 8] }
}"#;

#[test]
fn generate_writes_expected_count_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let out = dir.path().join("data.bin");
    let summary = cmd_generate(&scenario, &out, 10, None).unwrap();
    assert_eq!(summary.n_samples, 10);

    let (samples, sidecar) = read_dataset(&out).unwrap();
    assert_eq!(samples.len(), 10);
    let sidecar = sidecar.unwrap();
    assert_eq!(sidecar.seed, 5);
    assert_eq!(sidecar.n_samples, 10);
    assert_eq!(sidecar.scenario.n_tx, 8);
    for s in &samples {
        assert_eq!(s.h.rows(), 8);
        assert!(s.h.frobenius_norm() > 0.0);
        assert_eq!(s.scenario_id, "test");
    }
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 6);
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let sa = cmd_generate(&scenario, &a, 7, Some(11)).unwrap();
    let sb = cmd_generate(&scenario, &b, 7, Some(11)).unwrap();
    assert_eq!(sa.checksum, sb.checksum);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(sidecar_path(&a)).unwrap(),
        fs::read(sidecar_path(&b)).unwrap()
    );
}

#[test]
fn generate_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 6);
    let err = cmd_generate(&scenario, &dir.path().join("x.bin"), 0, None).unwrap_err();
    assert!(matches!(err, Error::Domain(_)));
    assert_eq!(adploc_cli::exit_code(&err), 1);
}

#[test]
fn train_writes_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 40, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);
    let model = dir.path().join("model.ckpt");

    let summary = cmd_train(&data, Some(&config), &model, None, None).unwrap();
    assert_eq!(summary.epochs_run, 3);
    assert!(!summary.aborted);

    let history = fs::read_to_string(&summary.history_path).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_mse,val_rmse_m");
    assert_eq!(lines.len(), 4);

    let ckpt = load_checkpoint(&model).unwrap();
    assert_eq!(ckpt.vit_config.input_hw, (8, 8));
    assert_eq!(ckpt.vit_config.n_layers, 1);
    assert_eq!(ckpt.train_config.seed, 9);
    assert!(ckpt.params.numel() > 0);
}

#[test]
fn train_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 40, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);

    let m1 = dir.path().join("m1.ckpt");
    let m2 = dir.path().join("m2.ckpt");
    cmd_train(&data, Some(&config), &m1, None, None).unwrap();
    cmd_train(&data, Some(&config), &m2, None, None).unwrap();
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(
        fs::read_to_string(adploc_cli::history_path(&m1)).unwrap(),
        fs::read_to_string(adploc_cli::history_path(&m2)).unwrap()
    );
}

#[test]
fn train_missing_dataset_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let err = cmd_train(&missing, None, &dir.path().join("m.ckpt"), None, None).unwrap_err();
    assert!(err.to_string().contains("nope.bin"), "{err}");
    assert_eq!(adploc_cli::exit_code(&err), 2);
}

#[test]
fn evaluate_reports_test_split_and_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 50, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);
    let model = dir.path().join("model.ckpt");
    cmd_train(&data, Some(&config), &model, None, None).unwrap();

    let out = dir.path().join("report");
    let summary = cmd_evaluate(&data, &model, &out, &[5.0, 20.0], None).unwrap();
    assert_eq!(summary.n_samples, 10); // 20% of 50
    assert!(summary.rmse_m.is_finite());
    assert_eq!(summary.exceedances.len(), 2);

    // Exceedances match direct counting on the emitted CDF.
    let csv = fs::read_to_string(&summary.cdf_path).unwrap();
    let errors: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    assert_eq!(errors.len(), 10);
    for (t, p) in &summary.exceedances {
        let count = errors.iter().filter(|&&e| e > *t).count();
        assert!((p - count as f64 / 10.0).abs() < 1e-12);
    }

    let parsed: ReportSummary =
        serde_json::from_str(&fs::read_to_string(&summary.json_path).unwrap()).unwrap();
    assert_eq!(parsed.n_samples, 10);
    assert_eq!(parsed.exceedance.len(), 2);
}

#[test]
fn evaluate_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 50, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);
    let model = dir.path().join("model.ckpt");
    cmd_train(&data, Some(&config), &model, None, None).unwrap();

    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    cmd_evaluate(&data, &model, &r1, &[5.0], None).unwrap();
    cmd_evaluate(&data, &model, &r2, &[5.0], None).unwrap();
    assert_eq!(
        fs::read(r1.with_extension("json")).unwrap(),
        fs::read(r2.with_extension("json")).unwrap()
    );
    assert_eq!(
        fs::read(adploc_cli::report_cdf_path(&r1)).unwrap(),
        fs::read(adploc_cli::report_cdf_path(&r2)).unwrap()
    );
}

#[test]
fn evaluate_shape_mismatch_is_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let s8 = write_scenario(dir.path(), 8);
    let data8 = dir.path().join("d8.bin");
    cmd_generate(&s8, &data8, 40, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);
    let model = dir.path().join("model.ckpt");
    cmd_train(&data8, Some(&config), &model, None, None).unwrap();

    // A dataset with a different shape must be rejected.
    let dir2 = tempfile::tempdir().unwrap();
    let s6 = write_scenario(dir2.path(), 6);
    let data6 = dir2.path().join("d6.bin");
    cmd_generate(&s6, &data6, 40, None).unwrap();
    let err = cmd_evaluate(&data6, &model, &dir.path().join("r"), &[], None).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn perfect_predictions_give_zero_rmse() {
    // Identity-predictor harness: feeding the labels as predictions
    // drives the whole report path to zero error.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let targets: Vec<(f64, f64)> = (0..50)
        .map(|_| (rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0))
        .collect();
    let report = EvalReport::from_predictions(&targets, &targets).unwrap();
    assert_eq!(report.rmse_m, 0.0);
    assert!(report.errors_m.iter().all(|&e| e == 0.0));
    assert_eq!(report.exceedance(0.0), 0.0);
}

#[test]
fn centroid_on_identical_positions_is_exact() {
    let positions = vec![(30.0, 40.0); 12];
    let center = centroid_of(&positions);
    let report = EvalReport::from_predictions(&vec![center; 12], &positions).unwrap();
    assert_eq!(report.rmse_m, 0.0);
}

#[test]
fn centroid_rmse_matches_uniform_closed_form() {
    // Uniform positions over a W x H rectangle: predicting the centroid
    // gives RMSE sqrt((W^2 + H^2) / 12).
    let (w, h) = (120.0, 80.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let positions: Vec<(f64, f64)> = (0..5000)
        .map(|_| (rng.random::<f64>() * w, rng.random::<f64>() * h))
        .collect();
    let center = centroid_of(&positions);
    let report =
        EvalReport::from_predictions(&vec![center; positions.len()], &positions).unwrap();
    let closed_form = ((w * w + h * h) / 12.0).sqrt();
    assert!(
        (report.rmse_m - closed_form).abs() < closed_form * 0.1,
        "monte carlo {} vs closed form {closed_form}",
        report.rmse_m
    );
}

#[test]
fn baseline_commands_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 50, None).unwrap();
    let config = write_train_config(dir.path(), TINY_TRAIN);

    let c = cmd_baseline(
        &data,
        BaselineKind::Centroid,
        Some(&config),
        &dir.path().join("centroid"),
        &[20.0],
        None,
    )
    .unwrap();
    assert!(c.rmse_m.is_finite() && c.rmse_m > 0.0);
    assert_eq!(c.n_samples, 10);

    let m = cmd_baseline(
        &data,
        BaselineKind::Mlp,
        Some(&config),
        &dir.path().join("mlp"),
        &[20.0],
        None,
    )
    .unwrap();
    assert!(m.rmse_m.is_finite());
    assert!(m.json_path.exists() && m.cdf_path.exists());
}

#[test]
fn self_consistency_train_split_beats_validation_after_overfit() {
    // Evaluating on the training split of an overfit-leaning run scores
    // no worse than the recorded best validation RMSE.
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 30, None).unwrap();
    let config = write_train_config(
        dir.path(),
        r#"{
  "epochs": 40,
  "learning_rate": 0.003,
  "batch_size": 19,
  "seed": 2,
  "split": [0.64, 0.16, 0.20],
  "vit": { "n_layers": 1, "n_heads": 2, "embed_dim": 16, "mlp_head_sizes": [16, 8] }
}"#,
    );
    let model = dir.path().join("model.ckpt");
    let summary = cmd_train(&data, Some(&config), &model, None, None).unwrap();

    let ckpt = load_checkpoint(&model).unwrap();
    let (samples, _) = read_dataset(&data).unwrap();
    let (train_cs, _, _) = adploc_core::training::split_dataset(
        &samples,
        ckpt.train_config.split,
        ckpt.train_config.seed,
    )
    .unwrap();
    let vit = adploc_core::vit::Vit::from_params(ckpt.vit_config, ckpt.params).unwrap();
    let train_samples = adploc_cli::to_train_samples(&train_cs).unwrap();
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for s in &train_samples {
        preds.push(ckpt.scaler.inverse(vit.predict(&s.adp).unwrap()));
        targets.push(s.position_m);
    }
    let train_report = EvalReport::from_predictions(&preds, &targets).unwrap();
    assert!(
        train_report.rmse_m <= summary.best_val_rmse_m * 1.05,
        "train RMSE {} vs best val {}",
        train_report.rmse_m,
        summary.best_val_rmse_m
    );
}

#[test]
fn train_config_file_parses_flat_and_nested_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_train_config(
        dir.path(),
        r#"{ "epochs": 7, "learning_rate": 0.002, "vit": { "embed_dim": 32 } }"#,
    );
    let cfg = TrainFileConfig::load(Some(&path)).unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.train.learning_rate, 0.002);
    assert_eq!(cfg.train.weight_decay, 1e-4); // default
    assert_eq!(cfg.vit.embed_dim, Some(32));
    assert_eq!(cfg.vit.n_layers, None);
}

#[test]
fn invalid_train_config_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_train_config(dir.path(), r#"{ "epochs": 0 }"#);
    let err = TrainFileConfig::load(Some(&path)).unwrap_err();
    assert_eq!(adploc_cli::exit_code(&err), 1);
}

// ---------------------------------------------------------------------------
// Binary-level exit codes
// ---------------------------------------------------------------------------

fn adploc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adploc"))
}

#[test]
fn binary_success_and_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 6);
    let data = dir.path().join("data.bin");

    let ok = adploc_bin()
        .args([
            "generate",
            "--config",
            scenario.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
            "--n-samples",
            "6",
        ])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{:?}", ok);

    // Usage error: zero samples.
    let usage = adploc_bin()
        .args([
            "generate",
            "--config",
            scenario.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
            "--n-samples",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(usage.status.code(), Some(1), "{:?}", usage);

    // Data error: missing dataset file, path in the message.
    let missing = adploc_bin()
        .args([
            "train",
            "--dataset",
            "/definitely/not/here.bin",
            "--out",
            dir.path().join("m.ckpt").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2), "{:?}", missing);
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("/definitely/not/here.bin"), "{stderr}");
}

#[test]
fn binary_signals_numerical_abort() {
    // An absurd learning rate diverges; the binary exits 3 but keeps the
    // last good checkpoint on disk.
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 8);
    let data = dir.path().join("data.bin");
    cmd_generate(&scenario, &data, 30, None).unwrap();
    let config = write_train_config(
        dir.path(),
        r#"{
  "epochs": 10,
  "learning_rate": 1e200,
  "batch_size": 19,
  "seed": 3,
  "vit": { "n_layers": 1, "n_heads": 2, "embed_dim": 16, "mlp_head_sizes": [16, 8] }
}"#,
    );
    let model = dir.path().join("model.ckpt");
    let output = adploc_bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{:?}", output);
    let ckpt = load_checkpoint(&model).unwrap();
    assert!(ckpt.params.entries().iter().all(|e| e.value.all_finite()));
}
