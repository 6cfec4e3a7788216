//! Test-set statistics for a calibrated band and the replication harness.
//!
//! Statistics per test set of size `T`:
//! - coverage: fraction of `y` inside `[lo, hi]` (a crossed interval covers nothing),
//! - average length: mean of `|hi - lo|`,
//! - CR-NN: fraction with `f̂₂ < f̂₁`,
//! - CR-CI: fraction with `hi < lo`,
//! - oracle gap: `‖hi - lo‖₂ - ‖f_τ₂ - f_τ₁‖₂`, both root-mean-squares over the
//!   same test covariates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, fit_cqr, fit_linear_pair, fit_nccqr, ConformalBand, QuantileModel, TrainConfig};
use crate::datasets::{load_csv, split, Dataset, SplitPlan, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::QuantileLevels;
use crate::provenance::{derive_seed, SeedStream};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub avg_length: f64,
    pub cr_nn: f64,
    pub cr_ci: f64,
    pub q_hat: f64,
    #[serde(default)]
    pub oracle_gap: Option<f64>,
    pub n_test: usize,
}

fn fraction(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

fn check_rows<T: Real>(intervals: &ArrayView2<'_, T>, n: usize) -> Result<()> {
    if intervals.ncols() != 2 || intervals.nrows() != n {
        return Err(Error::shape(format!("{:?} intervals for {n} responses", intervals.dim())));
    }
    if n == 0 {
        return Err(Error::invalid("empty test set"));
    }
    Ok(())
}

/// Coverage of explicit `(lo, hi)` rows.
pub fn coverage_of<T: Real>(intervals: ArrayView2<'_, T>, y: ArrayView1<'_, T>) -> Result<f64> {
    check_rows(&intervals, y.len())?;
    let hits = intervals
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(iv, &yi)| iv[0] <= yi && yi <= iv[1])
        .count();
    Ok(fraction(hits, y.len()))
}

pub fn avg_length_of<T: Real>(intervals: ArrayView2<'_, T>) -> Result<f64> {
    check_rows(&intervals, intervals.nrows())?;
    let total: f64 = intervals.rows().into_iter().map(|iv| (iv[1] - iv[0]).abs().as_f64()).sum();
    Ok(total / intervals.nrows() as f64)
}

/// Fraction of rows with second column strictly below the first.
pub fn crossing_rate_of<T: Real>(pairs: ArrayView2<'_, T>) -> Result<f64> {
    check_rows(&pairs, pairs.nrows())?;
    let crossed = pairs.rows().into_iter().filter(|p| p[1] < p[0]).count();
    Ok(fraction(crossed, pairs.nrows()))
}

pub fn coverage<T: Real>(band: &ConformalBand<T>, test: &Dataset<T>) -> Result<f64> {
    coverage_of(band.predict_intervals(test.x())?.view(), test.y())
}

pub fn avg_length<T: Real>(band: &ConformalBand<T>, test: &Dataset<T>) -> Result<f64> {
    avg_length_of(band.predict_intervals(test.x())?.view())
}

pub fn crossing_rate_nn<T: Real>(model: &QuantileModel<T>, test: &Dataset<T>) -> Result<f64> {
    crossing_rate_of(model.predict(test.x())?.view())
}

pub fn crossing_rate_ci<T: Real>(band: &ConformalBand<T>, test: &Dataset<T>) -> Result<f64> {
    crossing_rate_of(band.predict_intervals(test.x())?.view())
}

/// Oracle band `(f_τ₁(x), f_τ₂(x))` at every row of `x`.
pub fn oracle_band<T: Real>(spec: &SyntheticSpec, levels: QuantileLevels, x: ArrayView2<'_, T>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), 2));
    for (mut o, row) in out.rows_mut().into_iter().zip(x.rows()) {
        let r: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        o[0] = spec.oracle_quantile(&r, levels.tau1())?;
        o[1] = spec.oracle_quantile(&r, levels.tau2())?;
    }
    Ok(out)
}

fn rms_width<I: Iterator<Item = f64>>(widths: I) -> f64 {
    let (sum, n) = widths.fold((0.0, 0usize), |(s, n), w| (s + w * w, n + 1));
    (sum / n as f64).sqrt()
}

/// Gap between the `L²` width of explicit intervals and of the oracle band.
pub fn oracle_gap_of<T: Real>(intervals: ArrayView2<'_, T>, oracle: ArrayView2<'_, f64>) -> Result<f64> {
    check_rows(&intervals, oracle.nrows())?;
    let band = rms_width(intervals.rows().into_iter().map(|iv| (iv[1] - iv[0]).as_f64()));
    let truth = rms_width(oracle.rows().into_iter().map(|o| o[1] - o[0]));
    Ok(band - truth)
}

pub fn oracle_gap<T: Real>(band: &ConformalBand<T>, spec: &SyntheticSpec, test: &Dataset<T>) -> Result<f64> {
    let intervals = band.predict_intervals(test.x())?;
    let oracle = oracle_band(spec, band.model.levels, test.x())?;
    oracle_gap_of(intervals.view(), oracle.view())
}

/// All statistics from a single prediction pass.
pub fn evaluate<T: Real>(band: &ConformalBand<T>, test: &Dataset<T>, spec: Option<&SyntheticSpec>) -> Result<EvalReport> {
    let raw = band.model.predict(test.x())?;
    let mut intervals = raw.clone();
    intervals.column_mut(0).mapv_inplace(|v| v - band.q_hat);
    intervals.column_mut(1).mapv_inplace(|v| v + band.q_hat);
    let oracle_gap = match spec {
        Some(s) => {
            let oracle = oracle_band(s, band.model.levels, test.x())?;
            Some(oracle_gap_of(intervals.view(), oracle.view())?)
        }
        None => None,
    };
    Ok(EvalReport {
        coverage: coverage_of(intervals.view(), test.y())?,
        avg_length: avg_length_of(intervals.view())?,
        cr_nn: crossing_rate_of(raw.view())?,
        cr_ci: crossing_rate_of(intervals.view())?,
        q_hat: band.q_hat.as_f64(),
        oracle_gap,
        n_test: test.n(),
    })
}

/// Per-point `(x..., y, lo, hi)` rows for external plotting.
pub fn write_interval_dump<T: Real>(path: &Path, band: &ConformalBand<T>, test: &Dataset<T>) -> Result<()> {
    let iv = band.predict_intervals(test.x())?;
    let mut out = String::new();
    let names = test.column_names();
    writeln!(out, "{},y,lo,hi", names.join(",")).unwrap();
    for i in 0..test.n() {
        for v in test.x().row(i) {
            write!(out, "{},", crate::datasets::format_real(*v)).unwrap();
        }
        writeln!(
            out,
            "{},{},{}",
            crate::datasets::format_real(test.y()[i]),
            crate::datasets::format_real(iv[[i, 0]]),
            crate::datasets::format_real(iv[[i, 1]])
        )
        .unwrap();
    }
    crate::datasets::write_atomic(path, out.as_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nccqr")]
    NcCqr,
    #[serde(rename = "cqr")]
    Cqr,
    #[serde(rename = "qr")]
    Qr,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::NcCqr => "NC-CQR",
            Method::Cqr => "CQR",
            Method::Qr => "QR",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Method::NcCqr => "nccqr",
            Method::Cqr => "cqr",
            Method::Qr => "qr",
        }
    }

    /// Fit the quantile pair for this method.
    pub fn fit<T: Real>(self, train: &Dataset<T>, levels: QuantileLevels, cfg: &TrainConfig) -> Result<QuantileModel<T>> {
        match self {
            Method::NcCqr => fit_nccqr(train, levels, cfg).map(|(m, _)| m),
            Method::Cqr => fit_cqr(train, levels, cfg).map(|(m, _)| m),
            Method::Qr => fit_linear_pair(train, levels, cfg),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nccqr" => Ok(Method::NcCqr),
            "cqr" => Ok(Method::Cqr),
            "qr" => Ok(Method::Qr),
            other => Err(Error::invalid(format!("unknown method '{other}' (expected nccqr, cqr or qr)"))),
        }
    }
}

/// Where an experiment's observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// A fresh pool of `spec.n` draws per replication, generated with a
    /// seed derived from the replication seed.
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        drop: Vec<String>,
    },
}

impl DataSource {
    pub fn synthetic_spec(&self) -> Option<&SyntheticSpec> {
        match self {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Csv { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub source: DataSource,
    pub method: Method,
    pub alpha: f64,
    pub levels: QuantileLevels,
    pub train: TrainConfig,
    pub split: SplitPlan,
    pub replications: usize,
    pub base_seed: u64,
}

/// The three parts of one replication's data.
pub struct SplitData<T: Real> {
    pub train: Dataset<T>,
    pub calib: Dataset<T>,
    pub test: Dataset<T>,
    /// The generating spec for this replication (synthetic sources only).
    pub spec: Option<SyntheticSpec>,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        self.train.validate()?;
        if let DataSource::Synthetic(s) = &self.source {
            s.validate()?;
            self.split.sizes(s.n)?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.base_seed + r).collect()
    }

    /// Data for the replication with `seed`; CSV sources reuse `loaded`.
    pub fn materialize<T: Real>(&self, seed: u64, loaded: Option<&Dataset<T>>) -> Result<SplitData<T>> {
        let (pool, spec) = match (&self.source, loaded) {
            (DataSource::Synthetic(s), _) => {
                let spec = s.with_seed(derive_seed(seed, SeedStream::Data));
                (spec.generate::<T>()?, Some(spec))
            }
            (DataSource::Csv { .. }, Some(d)) => (d.clone(), None),
            (DataSource::Csv { path, target, drop }, None) => (load_csv::<T>(path, target, drop)?, None),
        };
        let parts = split(pool.n(), self.split, derive_seed(seed, SeedStream::Split))?;
        Ok(SplitData {
            train: pool.select(&parts.train)?,
            calib: pool.select(&parts.calib)?,
            test: pool.select(&parts.test)?,
            spec,
        })
    }

    /// Split, fit, calibrate and evaluate once.
    pub fn run_once<T: Real>(&self, seed: u64, loaded: Option<&Dataset<T>>) -> Result<(ConformalBand<T>, EvalReport)> {
        let data = self.materialize(seed, loaded)?;
        let cfg = self.train.with_seed(derive_seed(seed, SeedStream::Init));
        let model = self.method.fit(&data.train, self.levels, &cfg)?;
        let band = calibrate(model, &data.calib, self.alpha)?;
        let report = evaluate(&band, &data.test, data.spec.as_ref())?;
        Ok((band, report))
    }
}

/// Mean or standard deviation of each statistic across replications.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatLine {
    pub coverage: f64,
    pub avg_length: f64,
    pub cr_nn: f64,
    pub cr_ci: f64,
    pub q_hat: f64,
    pub oracle_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub method: Method,
    pub replications: usize,
    pub seeds: Vec<u64>,
    pub mean: StatLine,
    /// Sample standard deviation (`R - 1` divisor); zeros when `R = 1`.
    pub sd: StatLine,
    pub sd_defined: bool,
    pub runs: Vec<EvalReport>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl ReplicationSummary {
    pub fn from_runs(method: Method, seeds: Vec<u64>, runs: Vec<EvalReport>) -> Result<Self> {
        if runs.is_empty() || runs.len() != seeds.len() {
            return Err(Error::invalid("summary needs one report per seed"));
        }
        let col = |f: &dyn Fn(&EvalReport) -> f64| mean_sd(&runs.iter().map(f).collect::<Vec<_>>());
        let (cov, cov_sd) = col(&|r| r.coverage);
        let (len, len_sd) = col(&|r| r.avg_length);
        let (nn, nn_sd) = col(&|r| r.cr_nn);
        let (ci, ci_sd) = col(&|r| r.cr_ci);
        let (q, q_sd) = col(&|r| r.q_hat);
        let gaps: Option<Vec<f64>> = runs.iter().map(|r| r.oracle_gap).collect();
        let (gap, gap_sd) = match gaps {
            Some(g) => {
                let (m, s) = mean_sd(&g);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        Ok(ReplicationSummary {
            method,
            replications: runs.len(),
            seeds,
            mean: StatLine {
                coverage: cov,
                avg_length: len,
                cr_nn: nn,
                cr_ci: ci,
                q_hat: q,
                oracle_gap: gap,
            },
            sd: StatLine {
                coverage: cov_sd,
                avg_length: len_sd,
                cr_nn: nn_sd,
                cr_ci: ci_sd,
                q_hat: q_sd,
                oracle_gap: gap_sd,
            },
            sd_defined: runs.len() > 1,
            runs,
        })
    }
}

/// Run `R` independent replications with seeds `base_seed..base_seed + R`.
///
/// Each run depends only on its own seed, so results do not depend on the
/// order in which runs execute.
pub fn replicate<T: Real>(exp: &Experiment) -> Result<ReplicationSummary> {
    replicate_with::<T>(exp, |_, _| {})
}

/// [`replicate`] with a callback after each finished run.
pub fn replicate_with<T: Real>(exp: &Experiment, mut on_run: impl FnMut(u64, &EvalReport)) -> Result<ReplicationSummary> {
    exp.validate()?;
    let loaded: Option<Dataset<T>> = match &exp.source {
        DataSource::Csv { path, target, drop } => Some(load_csv(path, target, drop)?),
        DataSource::Synthetic(_) => None,
    };
    let seeds = exp.seeds();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let (_, report) = exp.run_once::<T>(seed, loaded.as_ref()).map_err(|e| Error::Replication {
            seed,
            source: Box::new(e),
        })?;
        on_run(seed, &report);
        runs.push(report);
    }
    ReplicationSummary::from_runs(exp.method, seeds, runs)
}

/// `mean(sd)` cell; percentages when `percent` is set.
pub fn format_cell(mean: f64, sd: f64, percent: bool, decimals: usize) -> String {
    if percent {
        format!("{:.1}%({:.3})", 100.0 * mean, sd)
    } else {
        format!("{mean:.decimals$}({sd:.3})")
    }
}

/// Render rows of cells as a left-aligned text table with a header rule.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (j, cell) in row.iter().enumerate().take(cols) {
            widths[j] = widths[j].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
