//! In-memory covariance datasets: `N` observations by `B` frequency bands of
//! `P x P` covariance matrices, one target per observation, optional session
//! labels and optional simulation ground truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::SymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Continuous,
    Binary,
}

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `P x P` mixing matrix; the first `n_sources` columns are the
    /// patterns of the encoding sources.
    pub mixing: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub n_sources: usize,
}

impl GroundTruth {
    /// Pattern of the source with the largest `|b_j|` (first on ties).
    pub fn strongest_pattern(&self) -> Vec<f64> {
        let j = self
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, w)| {
                if w.abs() > best.1 {
                    (j, w.abs())
                } else {
                    best
                }
            })
            .0;
        self.mixing.column(j).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDataset {
    n_channels: usize,
    n_bands: usize,
    /// Observation-major, then band.
    covariances: Vec<SymmetricMatrix>,
    targets: Vec<f64>,
    target_kind: TargetKind,
    groups: Option<Vec<String>>,
    truth: Option<GroundTruth>,
}

impl CovarianceDataset {
    /// `covariances` holds `targets.len() * n_bands` matrices, observation
    /// major. Binary targets may take at most two distinct values; fitting
    /// requires both to be present.
    pub fn new(
        n_channels: usize,
        n_bands: usize,
        covariances: Vec<SymmetricMatrix>,
        targets: Vec<f64>,
        target_kind: TargetKind,
    ) -> Result<Self> {
        if n_bands == 0 {
            return Err(Error::Shape("a dataset needs at least one band".into()));
        }
        if covariances.len() != targets.len() * n_bands {
            return Err(Error::Shape(format!(
                "{} covariances for {} observations x {} bands",
                covariances.len(),
                targets.len(),
                n_bands
            )));
        }
        if let Some(c) = covariances.iter().find(|c| c.dim() != n_channels) {
            return Err(Error::Shape(format!(
                "covariance of dimension {} in a {}-channel dataset",
                c.dim(),
                n_channels
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("targets must be finite".into()));
        }
        if target_kind == TargetKind::Binary && distinct(&targets).len() > 2 {
            return Err(Error::Contract(
                "binary targets take more than two values".into(),
            ));
        }
        Ok(CovarianceDataset {
            n_channels,
            n_bands,
            covariances,
            targets,
            target_kind,
            groups: None,
            truth: None,
        })
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n_obs() {
            return Err(Error::Shape(format!(
                "{} group labels for {} observations",
                groups.len(),
                self.n_obs()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if truth.mixing.nrows() != self.n_channels || truth.mixing.ncols() != self.n_channels {
            return Err(Error::Shape("ground-truth mixing must be P x P".into()));
        }
        if truth.weights.len() != truth.n_sources || truth.n_sources > self.n_channels {
            return Err(Error::Shape("ground-truth weights must have Q <= P entries".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    /// Same covariances with new targets (used by the shuffle test).
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(
            self.n_channels,
            self.n_bands,
            self.covariances.clone(),
            targets,
            self.target_kind,
        )?;
        out.groups = self.groups.clone();
        out.truth = self.truth.clone();
        Ok(out)
    }

    pub fn n_obs(&self) -> usize {
        self.targets.len()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn covariance(&self, obs: usize, band: usize) -> &SymmetricMatrix {
        &self.covariances[obs * self.n_bands + band]
    }

    pub fn covariances(&self) -> &[SymmetricMatrix] {
        &self.covariances
    }

    /// All observations of one band, in observation order.
    pub fn band(&self, band: usize) -> Vec<&SymmetricMatrix> {
        (0..self.n_obs()).map(|i| self.covariance(i, band)).collect()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    /// Distinct target values in ascending order.
    pub fn classes(&self) -> Vec<f64> {
        distinct(&self.targets)
    }

    /// Observations at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> CovarianceDataset {
        let covariances = indices
            .iter()
            .flat_map(|&i| (0..self.n_bands).map(move |b| (i, b)))
            .map(|(i, b)| self.covariance(i, b).clone())
            .collect();
        CovarianceDataset {
            n_channels: self.n_channels,
            n_bands: self.n_bands,
            covariances,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            target_kind: self.target_kind,
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i].clone()).collect()),
            truth: self.truth.clone(),
        }
    }

    /// Replaces one covariance; used by mutation tests.
    pub fn replace_covariance(&mut self, obs: usize, band: usize, c: SymmetricMatrix) -> Result<()> {
        if c.dim() != self.n_channels {
            return Err(Error::Shape("replacement has the wrong dimension".into()));
        }
        self.covariances[obs * self.n_bands + band] = c;
        Ok(())
    }
}

fn distinct(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye_set(n: usize, bands: usize) -> Vec<SymmetricMatrix> {
        (0..n * bands).map(|_| SymmetricMatrix::identity(2)).collect()
    }

    #[test]
    fn shape_checks() {
        assert!(CovarianceDataset::new(2, 1, eye_set(3, 1), vec![0.0; 3], TargetKind::Continuous).is_ok());
        assert!(CovarianceDataset::new(2, 2, eye_set(3, 1), vec![0.0; 3], TargetKind::Continuous).is_err());
        assert!(CovarianceDataset::new(3, 1, eye_set(3, 1), vec![0.0; 3], TargetKind::Continuous).is_err());
        assert!(CovarianceDataset::new(2, 1, eye_set(3, 1), vec![0.0, 1.0, 2.0], TargetKind::Binary).is_err());
    }

    #[test]
    fn subset_keeps_band_layout() {
        let covs: Vec<_> = (0..6).map(|k| SymmetricMatrix::from_diagonal(&[k as f64 + 1.0, 1.0])).collect();
        let ds = CovarianceDataset::new(2, 2, covs, vec![0.0, 1.0, 2.0], TargetKind::Continuous)
            .unwrap()
            .with_groups(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let s = ds.subset(&[2, 0]);
        assert_eq!(s.targets(), &[2.0, 0.0]);
        assert_eq!(s.covariance(0, 1).as_matrix()[(0, 0)], 6.0);
        assert_eq!(s.covariance(1, 0).as_matrix()[(0, 0)], 1.0);
        assert_eq!(s.groups().unwrap(), &["c".to_string(), "a".to_string()]);
    }
}
