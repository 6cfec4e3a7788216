//! Replication grids for the summary tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nccqr::conformal::TrainConfig;
use nccqr::datasets::{ErrorLaw, SplitPlan, SyntheticModel, SyntheticSpec};
use nccqr::evaluation::{format_cell, render_table, replicate_with, DataSource, Experiment, Method, ReplicationSummary};
use nccqr::losses::QuantileLevels;
use nccqr::provenance::Provenance;
use nccqr::Real;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::write_json;
use crate::config::{Precision, DEFAULT_TEST_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum TableId {
    #[value(name = "S1", alias = "s1")]
    S1,
    #[value(name = "S2", alias = "s2")]
    S2,
    #[value(name = "S3", alias = "s3")]
    S3,
}

impl TableId {
    pub fn name(self) -> &'static str {
        match self {
            TableId::S1 => "S1",
            TableId::S2 => "S2",
            TableId::S3 => "S3",
        }
    }

    /// Replications at full scale.
    fn full_replications(self) -> usize {
        match self {
            TableId::S1 => 50,
            TableId::S2 | TableId::S3 => 10,
        }
    }

    pub fn replications(self, scale: f64) -> usize {
        ((self.full_replications() as f64 * scale).round() as usize).max(1)
    }
}

impl std::str::FromStr for TableId {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(TableId::S1),
            "S2" => Ok(TableId::S2),
            "S3" => Ok(TableId::S3),
            _ => bail!("unknown table '{s}' (expected S1, S2 or S3)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataset {
    pub name: String,
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub drop: Vec<String>,
}

/// Optional settings for table reproduction; required for S3 (the data sets).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default)]
    pub datasets: Vec<CsvDataset>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

/// One table row group: labels and the experiment behind it.
pub struct Setting {
    pub labels: Vec<String>,
    pub experiment: Experiment,
}

#[allow(clippy::too_many_arguments)]
fn synthetic(spec: SyntheticSpec, n: usize, method: Method, alpha: f64, levels: QuantileLevels, cfg: &TableConfig, r: usize, seed: u64) -> Experiment {
    Experiment {
        source: DataSource::Synthetic(spec.with_n(n + DEFAULT_TEST_SIZE)),
        method,
        alpha,
        levels,
        train: cfg.train.clone(),
        split: cfg.split.unwrap_or(SplitPlan::Counts {
            train: n / 2,
            calib: n - n / 2,
            test: DEFAULT_TEST_SIZE,
        }),
        replications: r,
        base_seed: seed,
    }
}

/// Column headers and every setting of a table.
pub fn settings(id: TableId, scale: f64, seed: u64, cfg: &TableConfig) -> Result<(Vec<String>, Vec<Setting>)> {
    if !(scale.is_finite() && scale > 0.0) {
        bail!("scale must be positive, got {scale}");
    }
    let r = id.replications(scale);
    let n = cfg.n.unwrap_or(2000);
    let mut out = Vec::new();
    let header: Vec<&str> = match id {
        TableId::S1 => {
            let levels = QuantileLevels::new(0.05, 0.95)?;
            for error in [ErrorLaw::Normal, ErrorLaw::Exp, ErrorLaw::Sin] {
                for model in [SyntheticModel::Sine, SyntheticModel::TwoPhase, SyntheticModel::Triangle, SyntheticModel::Discontinuous] {
                    for method in [Method::NcCqr, Method::Qr] {
                        let spec = SyntheticSpec::new(model, error, n, 1, 0)?;
                        out.push(Setting {
                            labels: vec![error.to_string(), model.to_string(), method.label().into()],
                            experiment: synthetic(spec, n, method, 0.1, levels, cfg, r, seed),
                        });
                    }
                }
            }
            vec!["Error", "Setting", "Method", "Length", "Coverage", "Q"]
        }
        TableId::S2 => {
            let levels = QuantileLevels::new(0.1, 0.9)?;
            for d in [5, 10, 15, 20, 25] {
                for method in [Method::Cqr, Method::NcCqr] {
                    let spec = SyntheticSpec::new(SyntheticModel::SingleIndex, ErrorLaw::Sin, n, d, 0)?;
                    out.push(Setting {
                        labels: vec![d.to_string(), method.label().into()],
                        experiment: synthetic(spec, n, method, 0.2, levels, cfg, r, seed),
                    });
                }
            }
            vec!["d", "Method", "CR-NN", "CR-CI", "Coverage", "Length", "Q"]
        }
        TableId::S3 => {
            if cfg.datasets.is_empty() {
                bail!("table S3 needs --config with a 'datasets' list of CSV files");
            }
            let levels = QuantileLevels::new(0.1, 0.9)?;
            for ds in &cfg.datasets {
                for method in [Method::NcCqr, Method::Cqr, Method::Qr] {
                    out.push(Setting {
                        labels: vec![ds.name.clone(), method.label().into()],
                        experiment: Experiment {
                            source: DataSource::Csv {
                                path: ds.path.clone(),
                                target: ds.target.clone(),
                                drop: ds.drop.clone(),
                            },
                            method,
                            alpha: 0.2,
                            levels,
                            train: cfg.train.clone(),
                            split: cfg.split.unwrap_or(SplitPlan::Ratios {
                                train: 0.3,
                                calib: 0.3,
                                test: 0.4,
                            }),
                            replications: r,
                            base_seed: seed,
                        },
                    });
                }
            }
            vec!["Dataset", "Method", "CR-NN", "CR-CI", "Coverage", "Length", "Q"]
        }
    };
    Ok((header.into_iter().map(String::from).collect(), out))
}

fn row(id: TableId, labels: &[String], s: &ReplicationSummary) -> Vec<String> {
    let (m, sd) = (&s.mean, &s.sd);
    let mut cells = labels.to_vec();
    match id {
        TableId::S1 => {
            cells.push(format_cell(m.avg_length, sd.avg_length, false, 3));
            cells.push(format_cell(m.coverage, sd.coverage, true, 3));
            cells.push(format_cell(m.q_hat, sd.q_hat, false, 3));
        }
        TableId::S2 | TableId::S3 => {
            cells.push(format!("{:.1}%", 100.0 * m.cr_nn));
            cells.push(format!("{:.1}%", 100.0 * m.cr_ci));
            cells.push(format_cell(m.coverage, sd.coverage, true, 3));
            cells.push(format_cell(m.avg_length, sd.avg_length, false, 2));
            cells.push(format_cell(m.q_hat, sd.q_hat, false, 2));
        }
    }
    cells
}

#[derive(Serialize)]
struct TableRecord<'a> {
    table: &'a str,
    scale: f64,
    replications: usize,
    rows: Vec<serde_json::Value>,
    provenance: Provenance,
}

/// Run a table and write `table_<id>.txt` and `table_<id>.json`.
pub fn reproduce(id: TableId, scale: f64, seed: u64, cfg: &TableConfig, out: &Path) -> Result<(String, Vec<PathBuf>)> {
    match cfg.precision {
        Precision::F32 => reproduce_at::<f32>(id, scale, seed, cfg, out),
        Precision::F64 => reproduce_at::<f64>(id, scale, seed, cfg, out),
    }
}

fn reproduce_at<T: Real>(id: TableId, scale: f64, seed: u64, cfg: &TableConfig, out: &Path) -> Result<(String, Vec<PathBuf>)> {
    let (header, settings) = settings(id, scale, seed, cfg)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        eprintln!("[{}/{}] {}", i + 1, settings.len(), s.labels.join(" / "));
        let summary = replicate_with::<T>(&s.experiment, |seed, r| {
            eprintln!("  seed {seed}: coverage {:.3} length {:.3}", r.coverage, r.avg_length)
        })
        .with_context(|| format!("setting {}", s.labels.join(" / ")))?;
        rows.push(row(id, &s.labels, &summary));
        records.push(json!({"labels": s.labels, "summary": summary}));
    }
    let text = render_table(&header, &rows);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let txt = out.join(format!("table_{}.txt", id.name()));
    nccqr::datasets::write_atomic(&txt, text.as_bytes())?;
    let seeds = (0..id.replications(scale) as u64).map(|r| seed + r).collect();
    let record = TableRecord {
        table: id.name(),
        scale,
        replications: id.replications(scale),
        rows: records,
        provenance: Provenance::new("reproduce-table", cfg, seeds, cfg.precision.name())?,
    };
    let js = out.join(format!("table_{}.json", id.name()));
    write_json(&js, &record)?;
    Ok((text, vec![txt, js]))
}
