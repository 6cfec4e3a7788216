//! Datasets: the in-memory container, CSV ingestion, standardization and
//! random train/calibration/test splits. Synthetic benchmarks live in
//! [`synthetic`].

pub mod normal;
pub mod synthetic;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use normal::{normal_cdf, normal_inv_cdf};
pub use synthetic::{ErrorLaw, SyntheticModel, SyntheticSpec};

/// Feature matrix plus response, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    x: Array2<T>,
    y: Array1<T>,
    feature_names: Option<Vec<String>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: Array2<T>, y: Array1<T>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one row"));
        }
        if x.nrows() != y.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(Error::shape(format!(
                    "{} feature names for {} features",
                    names.len(),
                    x.ncols()
                )));
            }
        }
        if let Some(i) = x.iter().chain(y.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset entry {i}")));
        }
        Ok(Dataset { x, y, feature_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Column names, falling back to `x1..xd`.
    pub fn column_names(&self) -> Vec<String> {
        match &self.feature_names {
            Some(names) => names.clone(),
            None => (1..=self.d()).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("row index {bad} out of range for {} rows", self.n())));
        }
        Dataset::new(
            self.x.select(Axis(0), indices),
            self.y.select(Axis(0), indices),
            self.feature_names.clone(),
        )
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            x: self.x.mapv(|v| U::of(v.as_f64())),
            y: self.y.mapv(|v| U::of(v.as_f64())),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Write features then `target` as CSV; the file appears only once complete.
    pub fn write_csv(&self, path: &Path, target: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.column_names();
        header.push(target.to_string());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (row, &y) in self.x.rows().into_iter().zip(&self.y) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(&y)).map(|v| format_real(*v)).collect();
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        write_atomic(path, &bytes)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "feature_names": self.column_names(),
            "x": self.x.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "y": self.y.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
        })
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_real<T: Real>(v: T) -> String {
    format!("{:?}", v.as_f64())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Load a headed, comma-separated numeric table. The target column becomes
/// the response; `drop_columns` are discarded; every other column is a
/// feature, in file order.
pub fn load_csv<T: Real>(path: &Path, target_column: &str, drop_columns: &[String]) -> Result<Dataset<T>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    for name in drop_columns.iter().chain(std::iter::once(&target_column.to_string())) {
        if !headers.contains(name) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!("column '{name}' not found in header"),
            });
        }
    }
    let target = headers.iter().position(|h| h == target_column).unwrap();
    let features: Vec<usize> = (0..headers.len())
        .filter(|&j| j != target && !drop_columns.contains(&headers[j]))
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let cell = |j: usize| -> Result<T> {
            let raw = rec.get(j).unwrap_or("");
            let msg = if raw.is_empty() {
                "missing value".to_string()
            } else {
                format!("non-numeric value '{raw}'")
            };
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(T::of(v)),
                _ => Err(Error::CsvCell {
                    path: path.to_path_buf(),
                    row,
                    column: headers[j].clone(),
                    message: msg,
                }),
            }
        };
        for &j in &features {
            xs.push(cell(j)?);
        }
        ys.push(cell(target)?);
    }
    if ys.is_empty() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let x = Array2::from_shape_vec((ys.len(), features.len()), xs).map_err(|e| Error::shape(e.to_string()))?;
    let names = features.iter().map(|&j| headers[j].clone()).collect();
    Dataset::new(x, Array1::from(ys), Some(names))
}

/// Per-feature affine standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    /// Column means and sample (`n - 1`) standard deviations.
    pub fn fit<T: Real>(data: &Dataset<T>) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(Error::invalid("standardization needs at least 2 rows"));
        }
        let mut mean = Vec::with_capacity(data.d());
        let mut sd = Vec::with_capacity(data.d());
        for (j, col) in data.x.columns().into_iter().enumerate() {
            let m = col.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::invalid(format!(
                    "feature '{}' is constant on the training set",
                    data.column_names()[j]
                )));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Scaler { mean, sd })
    }

    pub fn identity(d: usize) -> Self {
        Scaler {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_matrix<T: Real>(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "scaler fitted on {} features, input has {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| T::of((v.as_f64() - m) / s));
        }
        Ok(out)
    }

    pub fn transform<T: Real>(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        Dataset::new(self.transform_matrix(data.x())?, data.y.clone(), data.feature_names.clone())
    }
}

/// Fit a [`Scaler`] on `train` and return it with the standardized training set.
pub fn standardize<T: Real>(train: &Dataset<T>) -> Result<(Scaler, Dataset<T>)> {
    let scaler = Scaler::fit(train)?;
    let scaled = scaler.transform(train)?;
    Ok((scaler, scaled))
}

/// Sizes of the three parts of a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitPlan {
    /// Fractions of `n`, each rounded down; the remainder is discarded.
    Ratios { train: f64, calib: f64, test: f64 },
    /// Exact counts; must not exceed `n` in total.
    Counts { train: usize, calib: usize, test: usize },
}

impl SplitPlan {
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let sizes = match *self {
            SplitPlan::Ratios { train, calib, test } => {
                let rs = [train, calib, test];
                if rs.iter().any(|r| !(*r > 0.0)) || rs.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return Err(Error::invalid(format!(
                        "split ratios must be positive and sum to at most 1, got ({train}, {calib}, {test})"
                    )));
                }
                let part = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
                (part(train), part(calib), part(test))
            }
            SplitPlan::Counts { train, calib, test } => (train, calib, test),
        };
        if sizes.0 == 0 || sizes.1 == 0 || sizes.2 == 0 {
            return Err(Error::invalid(format!(
                "every split part must be nonempty, got sizes {sizes:?} from n = {n}"
            )));
        }
        if sizes.0 + sizes.1 + sizes.2 > n {
            return Err(Error::invalid(format!("split sizes {sizes:?} exceed n = {n}")));
        }
        Ok(sizes)
    }
}

/// Disjoint training, calibration and test index sets (0-based, sorted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniformly random split of `0..n`, deterministic in `seed`.
pub fn split(n: usize, plan: SplitPlan, seed: u64) -> Result<SplitIndices> {
    let (a, b, c) = plan.sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let part = |range: std::ops::Range<usize>| {
        let mut v = perm[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        train: part(0..a),
        calib: part(a..a + b),
        test: part(a + b..a + b + c),
    })
}

/// Write `contents` to `path` through a temporary sibling, renaming on success.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}
