use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nccqr::conformal::TrainConfig;
use nccqr::datasets::{ErrorLaw, SplitPlan, SyntheticModel, SyntheticSpec};
use nccqr::evaluation::{DataSource, Experiment, Method};
use nccqr::losses::QuantileLevels;
use nccqr::model_selection::{CvPlan, DEFAULT_FOLDS};
use nccqr::provenance::{derive_seed, SeedStream};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "NCCQR_OUT";
pub const DEFAULT_OUT: &str = "nccqr-out";
pub const DEFAULT_TEST_SIZE: usize = 3000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// `n` observations for training and calibration plus `test_size` test draws.
    Synthetic {
        model: SyntheticModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ErrorLaw>,
        n: usize,
        #[serde(default = "one")]
        d: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        drop: Vec<String>,
    },
}

fn one() -> usize {
    1
}
fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}
fn default_alpha() -> f64 {
    0.1
}
fn default_method() -> Method {
    Method::NcCqr
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub k: usize,
    /// Candidate weights; default `{0, ½, 1, 2, 4} · ln n_train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { k: DEFAULT_FOLDS, grid: None }
    }
}

/// One experiment: data source, method and every tuning knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Defaults to `(α/2, 1 - α/2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<QuantileLevels>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Defaults to a half/half train/calibration split of `n` plus the test
    /// draws for synthetic data, and 30/30/40 percent for CSV data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitPlan>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub cv: CvConfig,
}

/// Command-line values that take precedence over file keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub alpha: Option<f64>,
    pub precision: Option<Precision>,
}

/// Parse JSON, reporting the path of the offending key on failure.
pub fn parse_json<C: DeserializeOwned>(text: &str) -> Result<C> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config key '{}': {}", path, e.into_inner())
    })
}

pub fn read_json<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_json(&text).with_context(|| format!("invalid config {}", path.display()))
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let raw: ExperimentConfig = read_json(path)?;
        raw.resolve(overrides)
    }

    /// Apply overrides, fill derived defaults and check every precondition.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
            self.levels = None;
        }
        if let Some(p) = o.precision {
            self.precision = p;
        }
        if !(0.0 < self.alpha && self.alpha < 0.5) {
            bail!("config key 'alpha': must lie in (0, 0.5), got {}", self.alpha);
        }
        if self.levels.is_none() {
            self.levels = Some(QuantileLevels::symmetric(self.alpha).context("config key 'alpha'")?);
        }
        if let DataConfig::Synthetic { model, error, n, d, test_size } = &mut self.data {
            let err = error.unwrap_or(match model {
                SyntheticModel::DoubleSine | SyntheticModel::SingleIndex => ErrorLaw::Sin,
                _ => ErrorLaw::Normal,
            });
            *error = Some(err);
            SyntheticSpec::new(*model, err, *n, *d, 0).context("config key 'data.synthetic'")?;
            if *n < 2 {
                bail!("config key 'data.synthetic.n': need at least 2 observations");
            }
            if self.split.is_none() {
                self.split = Some(SplitPlan::Counts {
                    train: *n / 2,
                    calib: *n - *n / 2,
                    test: *test_size,
                });
            }
        }
        if self.split.is_none() {
            self.split = Some(SplitPlan::Ratios {
                train: 0.3,
                calib: 0.3,
                test: 0.4,
            });
        }
        self.train.validate().context("config key 'train'")?;
        if self.replications == 0 {
            bail!("config key 'replications': must be at least 1");
        }
        if let Some(g) = &self.cv.grid {
            CvPlan::new(self.cv.k, g.clone(), 0).context("config key 'cv'")?;
        } else if self.cv.k < 2 {
            bail!("config key 'cv.k': need at least 2 folds");
        }
        self.experiment().validate().context("invalid experiment")?;
        Ok(self)
    }

    pub fn levels(&self) -> QuantileLevels {
        self.levels.expect("resolved config")
    }

    /// Spec generating `rows` observations (test draws included when asked).
    pub fn synthetic_spec(&self, with_test: bool) -> Option<SyntheticSpec> {
        match &self.data {
            DataConfig::Synthetic { model, error, n, d, test_size } => {
                let rows = if with_test { n + test_size } else { *n };
                SyntheticSpec::new(*model, error.unwrap_or(ErrorLaw::Normal), rows, *d, 0).ok()
            }
            DataConfig::Csv { .. } => None,
        }
    }

    pub fn experiment(&self) -> Experiment {
        let source = match &self.data {
            DataConfig::Synthetic { .. } => DataSource::Synthetic(self.synthetic_spec(true).expect("validated spec")),
            DataConfig::Csv { path, target, drop } => DataSource::Csv {
                path: path.clone(),
                target: target.clone(),
                drop: drop.clone(),
            },
        };
        Experiment {
            source,
            method: self.method,
            alpha: self.alpha,
            levels: self.levels(),
            train: self.train.clone(),
            split: self.split.expect("resolved config"),
            replications: self.replications,
            base_seed: self.seed,
        }
    }

    pub fn cv_plan(&self, n_train: usize) -> Result<CvPlan> {
        let seed = derive_seed(self.seed, SeedStream::Folds);
        let plan = match &self.cv.grid {
            Some(g) => CvPlan::new(self.cv.k, g.clone(), seed)?,
            None => {
                let d = CvPlan::default_for(n_train, seed)?;
                CvPlan::new(self.cv.k, d.grid().to_vec(), seed)?
            }
        };
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_json::<ExperimentConfig>(text)?.resolve(&Overrides::default())
    }

    #[test]
    fn synthetic_defaults() {
        let c = parse(r#"{"data": {"synthetic": {"model": "sine", "n": 2000}}}"#).unwrap();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.levels().tau1(), 0.05);
        assert_eq!(
            c.split,
            Some(SplitPlan::Counts {
                train: 1000,
                calib: 1000,
                test: 3000
            })
        );
        assert_eq!(c.synthetic_spec(true).unwrap().n, 5000);
        assert_eq!(c.synthetic_spec(false).unwrap().n, 2000);
    }

    #[test]
    fn bad_model_names_key() {
        let e = parse(r#"{"data": {"synthetic": {"model": "cosine", "n": 20}}}"#).unwrap_err();
        assert!(format!("{e:#}").contains("data.synthetic.model"), "{e:#}");
        let e = parse(r#"{"data": {"synthetic": {"model": "sine", "n": 20}}, "alhpa": 0.1}"#).unwrap_err();
        assert!(format!("{e:#}").contains("alhpa"), "{e:#}");
    }

    #[test]
    fn overrides_win() {
        let raw: ExperimentConfig =
            parse_json(r#"{"data": {"synthetic": {"model": "sine", "n": 20}}, "alpha": 0.1, "seed": 4}"#).unwrap();
        let c = raw
            .resolve(&Overrides {
                seed: Some(9),
                alpha: Some(0.2),
                method: Some(Method::Qr),
                precision: None,
            })
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.levels().tau2(), 0.9);
        assert_eq!(c.method, Method::Qr);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse(r#"{"data": {"csv": {"path": "a.csv", "target": "y"}}, "method": "qr"}"#).unwrap();
        let again = parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn invalid_values() {
        assert!(parse(r#"{"data": {"synthetic": {"model": "sine", "n": 20}}, "alpha": 0.7}"#).is_err());
        assert!(parse(r#"{"data": {"synthetic": {"model": "double-sine", "error": "normal", "n": 20}}}"#).is_err());
        assert!(parse(r#"{"data": {"synthetic": {"model": "sine", "n": 20}}, "cv": {"k": 1}}"#).is_err());
    }
}
