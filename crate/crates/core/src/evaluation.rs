//! Cross-validation splits, regression/classification metrics and the
//! fold-parallel evaluation harness.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovarianceDataset, TargetKind};
use crate::error::{Error, Result};
use crate::pipelines::{fit_pipeline, PipelineConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitScheme {
    KFold { k: usize },
    LeaveOneGroupOut,
}

/// Test sets of a cross-validation run. Training sets are the complements.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    n: usize,
    seed: u64,
    test_folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    /// A plan from explicit test sets, which must be disjoint subsets of
    /// `0..n`. They need not cover every index.
    pub fn from_test_folds(n: usize, test_folds: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        let mut seen = vec![false; n];
        for fold in &test_folds {
            for &i in fold {
                if i >= n || seen[i] {
                    return Err(Error::Contract(format!(
                        "test index {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(SplitPlan { n, seed, test_folds })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_folds(&self) -> usize {
        self.test_folds.len()
    }

    pub fn test(&self, fold: usize) -> &[usize] {
        &self.test_folds[fold]
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut in_test = vec![false; self.n];
        for &i in &self.test_folds[fold] {
            in_test[i] = true;
        }
        (0..self.n).filter(|&i| !in_test[i]).collect()
    }

    /// Fold of each observation (`None` if it is never tested).
    pub fn assignments(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n];
        for (f, fold) in self.test_folds.iter().enumerate() {
            for &i in fold {
                out[i] = Some(f);
            }
        }
        out
    }
}

/// Seeded k-fold or leave-one-group-out split of `n` observations.
pub fn make_splits(
    n: usize,
    scheme: SplitScheme,
    groups: Option<&[String]>,
    seed: u64,
) -> Result<SplitPlan> {
    match scheme {
        SplitScheme::KFold { k } => {
            if k == 0 || k > n {
                return Err(Error::Contract(format!(
                    "k-fold needs 1 <= k <= n, got k = {k}, n = {n}"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::seeded(seed));
            let (base, extra) = (n / k, n % k);
            let mut folds = Vec::with_capacity(k);
            let mut start = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                folds.push(idx[start..start + len].to_vec());
                start += len;
            }
            SplitPlan::from_test_folds(n, folds, seed)
        }
        SplitScheme::LeaveOneGroupOut => {
            let groups = groups.ok_or_else(|| {
                Error::Contract("leave-one-group-out needs group labels".into())
            })?;
            if groups.len() != n {
                return Err(Error::Shape(format!("{} group labels for {n} observations", groups.len())));
            }
            let mut labels: Vec<&str> = Vec::new();
            let mut folds: Vec<Vec<usize>> = Vec::new();
            for (i, g) in groups.iter().enumerate() {
                match labels.iter().position(|l| *l == g) {
                    Some(f) => folds[f].push(i),
                    None => {
                        labels.push(g);
                        folds.push(vec![i]);
                    }
                }
            }
            SplitPlan::from_test_folds(n, folds, seed)
        }
    }
}

/// Single train/test split with `round(test_fraction * n)` test points
/// (at least one, leaving at least one for training).
pub fn holdout(n: usize, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if n < 2 || !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "holdout needs n >= 2 and a fraction in (0, 1), got n = {n}, fraction = {test_fraction}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let mut test = idx[..n_test].to_vec();
    test.sort_unstable();
    SplitPlan::from_test_folds(n, vec![test], seed)
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("{} targets but {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("metric of an empty set".into()));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// MAE relative to a dummy predicting the training mean.
pub fn normalized_mae(y: &[f64], y_hat: &[f64], y_train_mean: f64) -> Result<f64> {
    let model = mae(y, y_hat)?;
    let dummy = y.iter().map(|v| (v - y_train_mean).abs()).sum::<f64>() / y.len() as f64;
    if dummy == 0.0 {
        return Err(Error::Degenerate("dummy MAE is zero".into()));
    }
    Ok(model / dummy)
}

pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("constant targets have no variance to explain".into()));
    }
    let residual: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - residual / total)
}

/// Mean per-class recall over the distinct values in `labels`.
pub fn balanced_accuracy(labels: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(labels, predicted)?;
    let mut classes = labels.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Contract("balanced accuracy needs at least two classes".into()));
    }
    let recall_sum: f64 = classes
        .iter()
        .map(|&c| {
            let (hit, total) = labels
                .iter()
                .zip(predicted)
                .filter(|(l, _)| **l == c)
                .fold((0usize, 0usize), |(h, t), (_, p)| (h + usize::from(*p == c), t + 1));
            hit as f64 / total as f64
        })
        .sum();
    Ok(recall_sum / classes.len() as f64)
}

/// Metrics of one fold. A metric is `None` when it does not apply to the
/// target kind or is undefined on the fold (e.g. R² of a single point).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub mae: Option<f64>,
    pub normalized_mae: Option<f64>,
    pub r_squared: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test: Vec<usize>,
    pub predictions: Vec<f64>,
    pub train_mean: f64,
    pub metrics: FoldMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    /// Predictions in observation order (`None` for untested points).
    pub fn out_of_fold(&self, n: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; n];
        for f in &self.folds {
            for (&i, &p) in f.test.iter().zip(&f.predictions) {
                out[i] = Some(p);
            }
        }
        out
    }

    /// Mean of a metric over the folds where it is defined.
    pub fn mean(&self, metric: impl Fn(&FoldMetrics) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self.folds.iter().filter_map(|f| metric(&f.metrics)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn fold_metrics(kind: TargetKind, y: &[f64], y_hat: &[f64], train_mean: f64) -> FoldMetrics {
    match kind {
        TargetKind::Continuous => FoldMetrics {
            mae: mae(y, y_hat).ok(),
            normalized_mae: normalized_mae(y, y_hat, train_mean).ok(),
            r_squared: r_squared(y, y_hat).ok(),
            balanced_accuracy: None,
        },
        TargetKind::Binary => FoldMetrics {
            balanced_accuracy: balanced_accuracy(y, y_hat).ok(),
            ..FoldMetrics::default()
        },
    }
}

/// Fits on each fold's training set and scores its test set. Folds run in
/// parallel; results are ordered by fold index.
pub fn cross_validate(
    ds: &CovarianceDataset,
    config: &PipelineConfig,
    plan: &SplitPlan,
) -> Result<CvReport> {
    if plan.n_obs() != ds.n_obs() {
        return Err(Error::Shape(format!(
            "plan over {} observations for a dataset of {}",
            plan.n_obs(),
            ds.n_obs()
        )));
    }
    let folds = (0..plan.n_folds())
        .into_par_iter()
        .map(|f| {
            run_fold(ds, config, plan, f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport { folds })
}

fn run_fold(
    ds: &CovarianceDataset,
    config: &PipelineConfig,
    plan: &SplitPlan,
    fold: usize,
) -> Result<FoldResult> {
    let train = ds.subset(&plan.train(fold));
    let test_idx = plan.test(fold).to_vec();
    let test = ds.subset(&test_idx);
    let model = fit_pipeline(&train, config)?;
    let predictions = model.predict(&test)?;
    let train_mean = train.targets().iter().sum::<f64>() / train.n_obs() as f64;
    let metrics = if test_idx.is_empty() {
        FoldMetrics::default()
    } else {
        fold_metrics(ds.target_kind(), test.targets(), &predictions, train_mean)
    };
    Ok(FoldResult {
        fold,
        test: test_idx,
        predictions,
        train_mean,
        metrics,
    })
}
