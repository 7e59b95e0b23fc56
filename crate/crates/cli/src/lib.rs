//! Command implementations behind the `adploc` binary.
//!
//! Each `cmd_*` function is the full behavior of one CLI verb so tests
//! can drive the pipeline in-process; `main` only parses arguments and
//! maps errors to exit codes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use adploc_core::adp::{compute_adp, normalize_adp};
use adploc_core::channel::{generate_dataset, ChannelSample, ScenarioConfig};
use adploc_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use adploc_core::dataset::{read_dataset, write_dataset, DatasetSidecar};
use adploc_core::error::{Error, Result};
use adploc_core::metrics::{write_cdf_csv, write_summary_json, EvalReport};
use adploc_core::nn::{Mlp, Model};
use adploc_core::training::{
    split_dataset, train, PreparedData, TrainConfig, TrainResult, TrainSample,
};
use adploc_core::vit::{Vit, VitConfig};

pub mod log;

/// Exit code classes: 1 usage/config, 2 data, 3 numerical abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => 1,
        Error::Format(_) | Error::Io { .. } | Error::ShapeMismatch { .. } | Error::Contract(_) => 2,
        Error::NonFinite { .. } => 3,
    }
}

// ---------------------------------------------------------------------------
// Train config file
// ---------------------------------------------------------------------------

/// Architecture overrides accepted in the train config file. The ADP
/// height/width always comes from the dataset header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitOverrides {
    pub patch_size: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub embed_dim: Option<usize>,
    pub encoder_ffn_mult: Option<usize>,
    pub mlp_head_sizes: Option<Vec<usize>>,
}

impl VitOverrides {
    pub fn apply(&self, input_hw: (usize, usize)) -> VitConfig {
        let mut config = VitConfig {
            input_hw,
            ..VitConfig::default()
        };
        if let Some(v) = self.patch_size {
            config.patch_size = v;
        }
        if let Some(v) = self.n_heads {
            config.n_heads = v;
        }
        if let Some(v) = self.n_layers {
            config.n_layers = v;
        }
        if let Some(v) = self.embed_dim {
            config.embed_dim = v;
        }
        if let Some(v) = self.encoder_ffn_mult {
            config.encoder_ffn_mult = v;
        }
        if let Some(v) = &self.mlp_head_sizes {
            config.mlp_head_sizes = v.clone();
        }
        config
    }
}

/// On-disk train configuration: hyperparameters plus optional model
/// overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFileConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub vit: VitOverrides,
}

impl TrainFileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                train: TrainConfig::default(),
                vit: VitOverrides::default(),
            });
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainFileConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline steps
// ---------------------------------------------------------------------------

/// CSI sample to normalized-ADP training sample.
pub fn to_train_samples(samples: &[ChannelSample]) -> Result<Vec<TrainSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainSample {
                adp: normalize_adp(&compute_adp(&s.h)?),
                position_m: s.position,
            })
        })
        .collect()
}

type Positions = Vec<(f64, f64)>;

fn predictions_for<M: Model>(
    model: &M,
    samples: &[TrainSample],
    scaler: &adploc_core::training::LabelScaler,
) -> Result<(Positions, Positions)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(scaler.inverse(model.predict(&s.adp)?));
        targets.push(s.position_m);
    }
    Ok((preds, targets))
}

fn write_history_csv(path: &Path, result: &TrainResult) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "epoch,train_mse,val_rmse_m").expect("vec write");
    for rec in &result.history {
        writeln!(buf, "{},{},{}", rec.epoch, rec.train_mse, rec.val_rmse_m).expect("vec write");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_report(out_prefix: &Path, report: &EvalReport, thresholds: &[f64]) -> Result<(PathBuf, PathBuf)> {
    let json_path = out_prefix.with_extension("json");
    let csv_path = report_cdf_path(out_prefix);
    let mut json_buf = Vec::new();
    write_summary_json(report, thresholds, &mut json_buf)?;
    fs::write(&json_path, json_buf).map_err(|e| Error::io(&json_path, e))?;
    let mut csv_buf = Vec::new();
    write_cdf_csv(report, &mut csv_buf).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&csv_path, csv_buf).map_err(|e| Error::io(&csv_path, e))?;
    Ok((json_path, csv_path))
}

/// CDF CSV path for a report prefix.
pub fn report_cdf_path(out_prefix: &Path) -> PathBuf {
    let mut name = out_prefix.file_name().unwrap_or_default().to_owned();
    name.push("_cdf.csv");
    out_prefix.with_file_name(name)
}

/// Default history CSV path next to a checkpoint.
pub fn history_path(model_out: &Path) -> PathBuf {
    let mut s = model_out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub n_samples: usize,
    pub checksum: u32,
    pub out_path: PathBuf,
}

pub fn cmd_generate(
    config_path: &Path,
    out_path: &Path,
    n_samples: usize,
    seed: Option<u64>,
) -> Result<GenerateSummary> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let config = ScenarioConfig::from_json(&text)?;
    let seed = seed.unwrap_or(config.seed);
    log::info(format!(
        "generating {n_samples} samples ({}x{} H) with seed {seed}",
        config.n_tx, config.n_sub
    ));
    let samples = generate_dataset(&config, n_samples, seed)?;
    let sidecar = DatasetSidecar {
        scenario: config,
        seed,
        n_samples: n_samples as u64,
    };
    write_dataset(out_path, &samples, &sidecar)?;
    let bytes = fs::read(out_path).map_err(|e| Error::io(out_path, e))?;
    let checksum = crc32fast::hash(&bytes);
    println!(
        "wrote {} samples to {} (crc32 {checksum:#010x})",
        n_samples,
        out_path.display()
    );
    Ok(GenerateSummary {
        n_samples,
        checksum,
        out_path: out_path.to_path_buf(),
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_rmse_m: f64,
    pub epochs_run: usize,
    pub aborted: bool,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
}

pub fn cmd_train(
    dataset_path: &Path,
    config_path: Option<&Path>,
    model_out: &Path,
    history_out: Option<&Path>,
    seed: Option<u64>,
) -> Result<TrainSummary> {
    let mut cfg = TrainFileConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (samples, _sidecar) = read_dataset(dataset_path)?;
    let input_hw = (samples[0].h.rows(), samples[0].h.cols());
    let vit_config = cfg.vit.apply(input_hw);
    vit_config.validate()?;

    let (train_cs, val_cs, _test_cs) = split_dataset(&samples, cfg.train.split, cfg.train.seed)?;
    log::info(format!(
        "training on {} samples, validating on {} ({} parameters)",
        train_cs.len(),
        val_cs.len(),
        vit_config.param_count()
    ));
    let data = PreparedData::new(to_train_samples(&train_cs)?, to_train_samples(&val_cs)?)?;

    let mut vit = Vit::new(vit_config.clone(), cfg.train.seed.wrapping_add(1))?;
    let result = train(&mut vit, &data, &cfg.train)?;
    if result.aborted {
        log::info("training aborted on non-finite loss; keeping last good checkpoint");
    }

    let ckpt = Checkpoint {
        vit_config,
        train_config: cfg.train.clone(),
        scaler: data.scaler.clone(),
        params: result.params.clone(),
    };
    save_checkpoint(model_out, &ckpt)?;
    let history = history_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| history_path(model_out));
    write_history_csv(&history, &result)?;

    println!(
        "trained {} epochs; best validation RMSE {:.3} m at epoch {}; checkpoint {}",
        result.history.len(),
        result.best_val_rmse_m,
        result.best_epoch,
        model_out.display()
    );
    Ok(TrainSummary {
        best_epoch: result.best_epoch,
        best_val_rmse_m: result.best_val_rmse_m,
        epochs_run: result.history.len(),
        aborted: result.aborted,
        model_path: model_out.to_path_buf(),
        history_path: history,
    })
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub rmse_m: f64,
    pub n_samples: usize,
    pub exceedances: Vec<(f64, f64)>,
    pub json_path: PathBuf,
    pub cdf_path: PathBuf,
}

pub fn cmd_evaluate(
    dataset_path: &Path,
    checkpoint_path: &Path,
    out_prefix: &Path,
    thresholds_m: &[f64],
    config_path: Option<&Path>,
) -> Result<EvaluateSummary> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let (samples, _sidecar) = read_dataset(dataset_path)?;
    let input_hw = (samples[0].h.rows(), samples[0].h.cols());
    if ckpt.vit_config.input_hw != input_hw {
        return Err(Error::Contract(format!(
            "checkpoint expects {}x{} ADPs but the dataset is {}x{}",
            ckpt.vit_config.input_hw.0, ckpt.vit_config.input_hw.1, input_hw.0, input_hw.1
        )));
    }
    // The stored train config pins the split; an explicit config overrides.
    let split_cfg = match config_path {
        Some(p) => TrainFileConfig::load(Some(p))?.train,
        None => ckpt.train_config.clone(),
    };
    let (_train_cs, _val_cs, test_cs) = split_dataset(&samples, split_cfg.split, split_cfg.seed)?;
    log::info(format!("evaluating {} test samples", test_cs.len()));

    let vit = Vit::from_params(ckpt.vit_config.clone(), ckpt.params)?;
    let test = to_train_samples(&test_cs)?;
    let (preds, targets) = predictions_for(&vit, &test, &ckpt.scaler)?;
    let report = EvalReport::from_predictions(&preds, &targets)?;
    let (json_path, cdf_path) = write_report(out_prefix, &report, thresholds_m)?;

    println!("test RMSE {:.3} m over {} samples", report.rmse_m, report.n_samples);
    let mut exceedances = Vec::new();
    for &t in thresholds_m {
        let p = report.exceedance(t);
        println!("P(error > {t} m) = {p:.4}");
        exceedances.push((t, p));
    }
    Ok(EvaluateSummary {
        rmse_m: report.rmse_m,
        n_samples: report.n_samples,
        exceedances,
        json_path,
        cdf_path,
    })
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Predict the training-split mean position for everything.
    Centroid,
    /// Flattened-ADP MLP with hidden layers 128 and 64.
    Mlp,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(Self::Centroid),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!(
                "unknown baseline kind '{other}' (expected centroid or mlp)"
            ))),
        }
    }
}

/// Mean position of a sample set.
pub fn centroid_of(positions: &[(f64, f64)]) -> (f64, f64) {
    let n = positions.len() as f64;
    let sum = positions
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    (sum.0 / n, sum.1 / n)
}

pub fn cmd_baseline(
    dataset_path: &Path,
    kind: BaselineKind,
    config_path: Option<&Path>,
    out_prefix: &Path,
    thresholds_m: &[f64],
    seed: Option<u64>,
) -> Result<EvaluateSummary> {
    let mut cfg = TrainFileConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (samples, _sidecar) = read_dataset(dataset_path)?;
    let input_hw = (samples[0].h.rows(), samples[0].h.cols());
    let (train_cs, val_cs, test_cs) = split_dataset(&samples, cfg.train.split, cfg.train.seed)?;

    let report = match kind {
        BaselineKind::Centroid => {
            let center = centroid_of(&train_cs.iter().map(|s| s.position).collect::<Vec<_>>());
            log::info(format!("centroid baseline predicts {center:?}"));
            let targets: Vec<(f64, f64)> = test_cs.iter().map(|s| s.position).collect();
            let preds = vec![center; targets.len()];
            EvalReport::from_predictions(&preds, &targets)?
        }
        BaselineKind::Mlp => {
            let data =
                PreparedData::new(to_train_samples(&train_cs)?, to_train_samples(&val_cs)?)?;
            let mut mlp = Mlp::new(input_hw, &[128, 64], cfg.train.seed.wrapping_add(1));
            let result = train(&mut mlp, &data, &cfg.train)?;
            log::info(format!(
                "mlp baseline best validation RMSE {:.3} m at epoch {}",
                result.best_val_rmse_m, result.best_epoch
            ));
            let test = to_train_samples(&test_cs)?;
            let (preds, targets) = predictions_for(&mlp, &test, &data.scaler)?;
            EvalReport::from_predictions(&preds, &targets)?
        }
    };

    let (json_path, cdf_path) = write_report(out_prefix, &report, thresholds_m)?;
    println!(
        "{} baseline test RMSE {:.3} m over {} samples",
        match kind {
            BaselineKind::Centroid => "centroid",
            BaselineKind::Mlp => "mlp",
        },
        report.rmse_m,
        report.n_samples
    );
    let mut exceedances = Vec::new();
    for &t in thresholds_m {
        let p = report.exceedance(t);
        println!("P(error > {t} m) = {p:.4}");
        exceedances.push((t, p));
    }
    Ok(EvaluateSummary {
        rmse_m: report.rmse_m,
        n_samples: report.n_samples,
        exceedances,
        json_path,
        cdf_path,
    })
}
