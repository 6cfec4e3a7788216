use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nccqr::conformal::{calibrate, fit_cqr, fit_linear_pair, fit_nccqr, BandDocument, ConformalBand, FitReport};
use nccqr::datasets::{load_csv, write_atomic, Dataset};
use nccqr::evaluation::{evaluate, replicate_with, write_interval_dump, Method};
use nccqr::model_selection::select_lambda;
use nccqr::nn::NetworkMetadata;
use nccqr::provenance::{derive_seed, Provenance, SeedStream};
use nccqr::Real;
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_json, DataConfig, ExperimentConfig, Overrides, Precision};

macro_rules! at_precision {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn provenance(command: &str, cfg: &ExperimentConfig, seeds: Vec<u64>) -> Result<Provenance> {
    Ok(Provenance::new(command, cfg, seeds, cfg.precision.name())?)
}

/// Generate the configured synthetic data set as CSV.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg
        .synthetic_spec(false)
        .ok_or_else(|| anyhow!("simulate needs a synthetic data source"))?
        .with_seed(derive_seed(cfg.seed, SeedStream::Data));
    let data = spec.generate::<f64>()?;
    prepare_out(out)?;
    let csv = out.join("data.csv");
    data.write_csv(&csv, "y")?;
    let meta = out.join("simulate.json");
    write_json(
        &meta,
        &json!({
            "rows": data.n(),
            "columns": data.column_names(),
            "target": "y",
            "provenance": provenance("simulate", cfg, vec![cfg.seed])?,
        }),
    )?;
    Ok(vec![csv, meta])
}

fn fit_method<T: Real>(
    cfg: &ExperimentConfig,
    train: &Dataset<T>,
) -> Result<(nccqr::conformal::QuantileModel<T>, Option<FitReport>)> {
    let train_cfg = cfg.train.with_seed(derive_seed(cfg.seed, SeedStream::Init));
    let levels = cfg.levels();
    Ok(match cfg.method {
        Method::NcCqr => {
            let (m, r) = fit_nccqr(train, levels, &train_cfg).context("training NC-CQR")?;
            (m, Some(r))
        }
        Method::Cqr => {
            let (m, r) = fit_cqr(train, levels, &train_cfg).context("training CQR")?;
            (m, Some(r))
        }
        Method::Qr => (fit_linear_pair(train, levels, &train_cfg).context("fitting linear QR")?, None),
    })
}

/// Split, fit and calibrate once; writes the band and the training trace.
pub fn fit_calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    at_precision!(cfg.precision, fit_calibrate_at(cfg, out))
}

fn fit_calibrate_at<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment();
    let data = exp.materialize::<T>(cfg.seed, None).context("preparing data")?;
    let (model, report) = fit_method(cfg, &data.train)?;
    let band = calibrate(model, &data.calib, cfg.alpha).context("calibration")?;
    let prov = provenance("fit-calibrate", cfg, vec![cfg.seed])?;
    let meta = NetworkMetadata {
        seed: derive_seed(cfg.seed, SeedStream::Init),
        config_hash: prov.config_hash.clone(),
        scalar: T::type_name().to_string(),
    };
    let mut record = serde_json::to_value(&prov)?;
    record["sizes"] = json!({"train": data.train.n(), "calib": data.calib.n(), "test": data.test.n()});
    if let Some(r) = &report {
        record["fit"] = json!({
            "lambda": r.lambda,
            "epochs_run": r.epochs_run,
            "best_epoch": r.best_epoch,
            "initial_objective": r.initial_objective,
            "final_objective": r.final_objective,
            "stopped_early": r.stopped_early,
        });
    }
    prepare_out(out)?;
    let band_path = out.join("band.json");
    write_json(&band_path, &band.to_document(meta, record))?;
    let trace_path = out.join("trace.csv");
    let mut trace = String::from("epoch,objective\n");
    for (e, v) in report.iter().flat_map(|r| r.trace.iter().enumerate()) {
        writeln!(trace, "{e},{v:?}").unwrap();
    }
    write_atomic(&trace_path, trace.as_bytes())?;
    Ok(vec![band_path, trace_path])
}

/// Where `evaluate` finds its test observations.
#[derive(Clone, Debug, Default)]
pub struct TestSource {
    pub csv: Option<PathBuf>,
    pub target: Option<String>,
}

/// Configuration embedded in a band file, with command-line overrides.
pub fn config_from_band(doc: &BandDocument, o: &Overrides) -> Result<ExperimentConfig> {
    let embedded = doc
        .provenance
        .get("config")
        .ok_or_else(|| anyhow!("band file has no embedded config; pass --config"))?;
    let cfg: ExperimentConfig = parse_json(&embedded.to_string()).context("embedded config")?;
    cfg.resolve(o)
}

pub fn read_band(path: &Path) -> Result<BandDocument> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading band file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing band file {}", path.display()))
}

/// Evaluate a saved band on the configured test data.
pub fn evaluate_band(cfg: &ExperimentConfig, doc: &BandDocument, test: &TestSource, out: &Path) -> Result<Vec<PathBuf>> {
    at_precision!(cfg.precision, evaluate_band_at(cfg, doc, test, out))
}

fn evaluate_band_at<T: Real>(cfg: &ExperimentConfig, doc: &BandDocument, src: &TestSource, out: &Path) -> Result<Vec<PathBuf>> {
    let band = ConformalBand::<T>::from_document(doc)?;
    let spec = cfg.synthetic_spec(false);
    let test = match &src.csv {
        Some(path) => {
            let (target, drop) = match &cfg.data {
                DataConfig::Csv { target, drop, .. } => (target.clone(), drop.clone()),
                DataConfig::Synthetic { .. } => ("y".to_string(), Vec::new()),
            };
            let target = src.target.clone().unwrap_or(target);
            load_csv::<T>(path, &target, &drop)?
        }
        None => cfg.experiment().materialize::<T>(cfg.seed, None)?.test,
    };
    if test.d() != band.model.input_dim() {
        bail!("test data has {} features but the band expects {}", test.d(), band.model.input_dim());
    }
    let report = evaluate(&band, &test, spec.as_ref())?;
    prepare_out(out)?;
    let report_path = out.join("report.json");
    write_json(
        &report_path,
        &json!({
            "report": report,
            "test_source": src.csv.as_ref().map_or("split".to_string(), |p| p.display().to_string()),
            "provenance": provenance("evaluate", cfg, vec![cfg.seed])?,
            "band_provenance": doc.provenance,
        }),
    )?;
    let dump = out.join("intervals.csv");
    write_interval_dump(&dump, &band, &test)?;
    Ok(vec![report_path, dump])
}

/// Run all configured replications end to end and summarize them.
pub fn evaluate_replications(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    at_precision!(cfg.precision, evaluate_replications_at(cfg, out))
}

fn evaluate_replications_at<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment();
    let summary = replicate_with::<T>(&exp, |seed, r| {
        eprintln!(
            "seed {seed}: coverage {:.3} length {:.3} cr-nn {:.4}",
            r.coverage, r.avg_length, r.cr_nn
        )
    })?;
    prepare_out(out)?;
    let path = out.join("summary.json");
    write_json(
        &path,
        &json!({
            "summary": summary,
            "provenance": provenance("evaluate", cfg, exp.seeds())?,
        }),
    )?;
    Ok(vec![path])
}

/// Choose the crossing penalty by K-fold ALC on the training split.
pub fn cv_lambda(cfg: &ExperimentConfig, out: &Path) -> Result<(f64, Vec<PathBuf>)> {
    at_precision!(cfg.precision, cv_lambda_at(cfg, out))
}

fn cv_lambda_at<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<(f64, Vec<PathBuf>)> {
    let exp = cfg.experiment();
    let data = exp.materialize::<T>(cfg.seed, None)?;
    let plan = cfg.cv_plan(data.train.n())?;
    let train_cfg = cfg.train.with_seed(derive_seed(cfg.seed, SeedStream::Init));
    let result = select_lambda(&data.train, &plan, cfg.levels(), &train_cfg)?;
    prepare_out(out)?;
    let csv = out.join("cv.csv");
    write_atomic(&csv, result.to_csv().as_bytes())?;
    let meta = out.join("cv.json");
    write_json(
        &meta,
        &json!({
            "lambda_hat": result.lambda_hat,
            "folds": plan.k(),
            "table": result.table,
            "provenance": provenance("cv-lambda", cfg, vec![cfg.seed])?,
        }),
    )?;
    Ok((result.lambda_hat, vec![csv, meta]))
}
