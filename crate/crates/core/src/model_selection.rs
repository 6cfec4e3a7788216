//! K-fold selection of the crossing penalty weight.
//!
//! Each candidate `λ` is scored by the average-length-plus-crossings (ALC)
//! criterion on held-out folds:
//! `mean |f̂₂ - f̂₁| + #{f̂₂ < f̂₁}`. The count term is not normalized, so a
//! single held-out crossing outweighs any realistic width difference.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::conformal::{fit_nccqr, QuantileModel, TrainConfig};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::losses::QuantileLevels;
use crate::scalar::Real;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan")]
pub struct CvPlan {
    k: usize,
    grid: Vec<f64>,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    k: usize,
    grid: Vec<f64>,
    seed: u64,
}

impl TryFrom<RawPlan> for CvPlan {
    type Error = Error;
    fn try_from(r: RawPlan) -> Result<Self> {
        CvPlan::new(r.k, r.grid, r.seed)
    }
}

impl CvPlan {
    pub fn new(k: usize, grid: Vec<f64>, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
        }
        if grid.is_empty() {
            return Err(Error::invalid("lambda grid is empty"));
        }
        if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("lambda grid values must be finite and non-negative"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lambda grid must be strictly ascending"));
        }
        Ok(CvPlan { k, grid, seed })
    }

    /// `K = 5` over `{0, ½ ln n, ln n, 2 ln n, 4 ln n}`.
    pub fn default_for(n: usize, seed: u64) -> Result<Self> {
        let l = (n.max(2) as f64).ln();
        CvPlan::new(DEFAULT_FOLDS, vec![0.0, 0.5 * l, l, 2.0 * l, 4.0 * l], seed)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::invalid(format!("cannot split {n} rows into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, idx) in perm.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// ALC from a matrix of `(f̂₁, f̂₂)` rows.
pub fn alc_of<T: Real>(pairs: ArrayView2<'_, T>) -> Result<f64> {
    if pairs.ncols() != 2 {
        return Err(Error::shape(format!("expected two columns, got {}", pairs.ncols())));
    }
    if pairs.nrows() == 0 {
        return Err(Error::invalid("empty fold"));
    }
    let mut width = 0.0;
    let mut crossings = 0usize;
    for p in pairs.rows() {
        width += (p[1] - p[0]).abs().as_f64();
        if p[1] < p[0] {
            crossings += 1;
        }
    }
    Ok(width / pairs.nrows() as f64 + crossings as f64)
}

pub fn alc<T: Real>(model: &QuantileModel<T>, fold: &Dataset<T>) -> Result<f64> {
    alc_of(model.predict(fold.x())?.view())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub fold_alc: Vec<f64>,
    pub mean_alc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_hat: f64,
    pub table: Vec<CvRow>,
}

impl CvResult {
    /// One line per `λ`: the mean and every fold score.
    pub fn to_csv(&self) -> String {
        let k = self.table.first().map_or(0, |r| r.fold_alc.len());
        let mut out = String::from("lambda,mean_alc");
        for j in 0..k {
            write!(out, ",fold{}", j + 1).unwrap();
        }
        out.push('\n');
        for row in &self.table {
            write!(out, "{:?},{:?}", row.lambda, row.mean_alc).unwrap();
            for a in &row.fold_alc {
                write!(out, ",{a:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Index of the smallest score; earlier (smaller `λ`) entries win ties.
pub fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Pick `λ` from `plan.grid` by K-fold ALC.
///
/// Every `(fold, λ)` fit uses the same initialization seed `cfg.seed`, so
/// results depend only on `(plan.seed, cfg.seed)`.
pub fn select_lambda<T: Real>(
    train: &Dataset<T>,
    plan: &CvPlan,
    levels: QuantileLevels,
    cfg: &TrainConfig,
) -> Result<CvResult> {
    if train.n() < 3 * plan.k {
        return Err(Error::invalid(format!(
            "{} training rows are too few for {} folds",
            train.n(),
            plan.k
        )));
    }
    let folds = fold_partition(train.n(), plan.k, plan.seed)?;
    let mut scores = vec![Vec::with_capacity(plan.k); plan.grid.len()];
    for held in &folds {
        let keep: Vec<usize> = {
            let mut mask = vec![true; train.n()];
            for &i in held {
                mask[i] = false;
            }
            (0..train.n()).filter(|&i| mask[i]).collect()
        };
        let fit_part = train.select(&keep)?;
        let held_part = train.select(held)?;
        for (j, &lambda) in plan.grid.iter().enumerate() {
            let (model, _) = fit_nccqr(&fit_part, levels, &cfg.with_lambda(lambda))?;
            scores[j].push(alc(&model, &held_part)?);
        }
    }
    let table: Vec<CvRow> = plan
        .grid
        .iter()
        .zip(scores)
        .map(|(&lambda, fold_alc)| CvRow {
            lambda,
            mean_alc: fold_alc.iter().sum::<f64>() / fold_alc.len() as f64,
            fold_alc,
        })
        .collect();
    let means: Vec<f64> = table.iter().map(|r| r.mean_alc).collect();
    let best = argmin_first(&means).expect("grid is nonempty");
    Ok(CvResult {
        lambda_hat: plan.grid[best],
        table,
    })
}
