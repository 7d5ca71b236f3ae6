//! End-to-end decoding pipelines over covariance datasets.
//!
//! * `Riemann`: optional PCA reduction, geometric mean, tangent-space
//!   embedding.
//! * `Spoc`: supervised filters from the generalized eigenproblem between
//!   the target-weighted and the plain arithmetic mean covariance, then
//!   log-variance features.
//! * `Csp`: filters from the class-conditional means, spectral ends
//!   interleaved, log-variance features.
//! * `Diag`: log channel power.
//!
//! Every band is fitted on its own and the feature blocks are concatenated,
//! z-scored, and passed to a ridge or logistic head. A [`FittedPipeline`] is
//! frozen: transforming new data reads stored parameters only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{apply_reducer, pca_reducer, SpatialReducer};
use crate::dataset::{CovarianceDataset, TargetKind};
use crate::error::{Error, Result};
use crate::linmodel::{
    fit_logistic_l2, fit_ridge_gcv, HeadKind, LinearHead, LogisticOptions, RegularizationGrid,
    Standardizer,
};
use crate::manifold::{
    arithmetic_mean, gen_eig, geometric_mean, tangent_len, MeanOptions, SpdMatrix,
    SymmetricMatrix, TangentSpace,
};

/// Variances are floored here before taking logarithms.
pub const VARIANCE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Riemann,
    Spoc,
    Csp,
    Diag,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Riemann => "riemann",
            Method::Spoc => "spoc",
            Method::Csp => "csp",
            Method::Diag => "diag",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "riemann" => Ok(Method::Riemann),
            "spoc" => Ok(Method::Spoc),
            "csp" => Ok(Method::Csp),
            "diag" => Ok(Method::Diag),
            other => Err(Error::Contract(format!("unknown method `{other}`"))),
        }
    }
}

/// Hyperparameters of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub method: Method,
    /// Components per band. `None` keeps all `P` channels (the largest even
    /// number `<= P` for CSP). Ignored by `Diag`.
    pub components: Option<usize>,
    pub head: HeadKind,
    pub grid: RegularizationGrid,
    pub mean: MeanOptions,
    pub logistic: LogisticOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::Riemann,
            components: None,
            head: HeadKind::Ridge,
            grid: RegularizationGrid::default(),
            mean: MeanOptions::default(),
            logistic: LogisticOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn new(method: Method, components: Option<usize>, head: HeadKind) -> Self {
        PipelineConfig {
            method,
            components,
            head,
            ..Self::default()
        }
    }

    /// Resolved component count for `n_channels`.
    pub fn resolved_components(&self, n_channels: usize) -> Result<usize> {
        let k = match (self.method, self.components) {
            (Method::Diag, _) => return Ok(n_channels),
            (Method::Csp, None) => n_channels - n_channels % 2,
            (_, None) => n_channels,
            (_, Some(k)) => k,
        };
        if k == 0 || k > n_channels {
            return Err(Error::Contract(format!(
                "components must be in 1..={n_channels}, got {k}"
            )));
        }
        if self.method == Method::Csp && k % 2 != 0 {
            return Err(Error::Contract(format!("CSP needs an even component count, got {k}")));
        }
        Ok(k)
    }
}

/// Fitted per-band spatial stage.
#[derive(Debug, Clone, PartialEq)]
pub enum BandModel {
    Riemann {
        /// `None` when no PCA reduction was applied.
        reducer: Option<SpatialReducer>,
        /// Geometric mean of the (reduced) training covariances.
        reference: SpdMatrix,
    },
    Filters {
        /// `P x k`, one filter per column.
        filters: DMatrix<f64>,
        /// Generalized eigenvalue of each kept filter.
        eigenvalues: Vec<f64>,
    },
    Diag,
}

impl BandModel {
    pub fn feature_len(&self, n_channels: usize) -> usize {
        match self {
            BandModel::Riemann { reference, .. } => tangent_len(reference.dim()),
            BandModel::Filters { filters, .. } => filters.ncols(),
            BandModel::Diag => n_channels,
        }
    }
}

/// A frozen pipeline: spatial stages, standardizer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    config: PipelineConfig,
    n_channels: usize,
    bands: Vec<BandModel>,
    standardizer: Standardizer,
    head: LinearHead,
    block_offsets: Vec<usize>,
    /// Target values for the negative and positive class (binary targets).
    classes: Option<[f64; 2]>,
}

/// Raw (pre-z-score) features and how many variances hit the floor.
#[derive(Debug, Clone)]
pub struct Features {
    pub values: DMatrix<f64>,
    pub floored: usize,
}

impl FittedPipeline {
    /// Reassembles a pipeline from stored parts, validating shapes.
    pub fn from_parts(
        config: PipelineConfig,
        n_channels: usize,
        bands: Vec<BandModel>,
        standardizer: Standardizer,
        head: LinearHead,
        classes: Option<[f64; 2]>,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Shape("pipeline without bands".into()));
        }
        let mut block_offsets = Vec::with_capacity(bands.len());
        let mut total = 0;
        for band in &bands {
            block_offsets.push(total);
            total += band.feature_len(n_channels);
            let ok = match (config.method, band) {
                (Method::Riemann, BandModel::Riemann { reducer, reference }) => reducer
                    .as_ref()
                    .map_or(reference.dim() == n_channels, |r| {
                        r.input_dim() == n_channels && r.output_dim() == reference.dim()
                    }),
                (Method::Spoc | Method::Csp, BandModel::Filters { filters, eigenvalues }) => {
                    filters.nrows() == n_channels && eigenvalues.len() == filters.ncols()
                }
                (Method::Diag, BandModel::Diag) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "band model does not match method {} with {n_channels} channels",
                    config.method
                )));
            }
        }
        if standardizer.dim() != total || head.dim() != total {
            return Err(Error::Shape(format!(
                "feature length {total}, standardizer {}, head {}",
                standardizer.dim(),
                head.dim()
            )));
        }
        Ok(FittedPipeline {
            config,
            n_channels,
            bands,
            standardizer,
            head,
            block_offsets,
            classes,
        })
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandModel] {
        &self.bands
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    /// Start of each band's block in the feature vector.
    pub fn block_offsets(&self) -> &[usize] {
        &self.block_offsets
    }

    pub fn feature_len(&self) -> usize {
        self.head.dim()
    }

    /// Feature range `[start, end)` of `band`.
    pub fn block(&self, band: usize) -> std::ops::Range<usize> {
        let start = self.block_offsets[band];
        start..start + self.bands[band].feature_len(self.n_channels)
    }

    pub fn classes(&self) -> Option<[f64; 2]> {
        self.classes
    }

    fn check_dataset(&self, ds: &CovarianceDataset) -> Result<()> {
        if ds.n_channels() != self.n_channels || ds.n_bands() != self.bands.len() {
            return Err(Error::Shape(format!(
                "pipeline fitted on {} channels x {} bands, dataset has {} x {}",
                self.n_channels,
                self.bands.len(),
                ds.n_channels(),
                ds.n_bands()
            )));
        }
        Ok(())
    }

    /// Concatenated per-band features before z-scoring.
    pub fn raw_features(&self, ds: &CovarianceDataset) -> Result<Features> {
        self.check_dataset(ds)?;
        let mut values = DMatrix::zeros(ds.n_obs(), self.feature_len());
        let mut floored = 0;
        for (b, band) in self.bands.iter().enumerate() {
            let block = band_features(band, &ds.band(b), &mut floored)?;
            values
                .columns_mut(self.block_offsets[b], block.ncols())
                .copy_from(&block);
        }
        Ok(Features { values, floored })
    }

    /// Head scores on z-scored features.
    pub fn decision_function(&self, ds: &CovarianceDataset) -> Result<DVector<f64>> {
        let raw = self.raw_features(ds)?;
        let z = self.standardizer.transform(&raw.values)?;
        self.head.decision_function(&z)
    }

    /// Ridge: real-valued predictions. Logistic: predicted class values.
    pub fn predict(&self, ds: &CovarianceDataset) -> Result<Vec<f64>> {
        let scores = self.decision_function(ds)?;
        Ok(match (self.head.kind, self.classes) {
            (HeadKind::Logistic, Some([neg, pos])) => scores
                .iter()
                .map(|&s| if s > 0.0 { pos } else { neg })
                .collect(),
            _ => scores.as_slice().to_vec(),
        })
    }

    pub fn predict_proba(&self, ds: &CovarianceDataset) -> Result<Vec<f64>> {
        let raw = self.raw_features(ds)?;
        let z = self.standardizer.transform(&raw.values)?;
        Ok(self.head.predict_proba(&z)?.as_slice().to_vec())
    }
}

/// `pipeline_predict`.
pub fn pipeline_predict(p: &FittedPipeline, ds: &CovarianceDataset) -> Result<Vec<f64>> {
    p.predict(ds)
}

fn log_variance(v: f64, floored: &mut usize) -> f64 {
    if v > VARIANCE_FLOOR {
        v.ln()
    } else {
        *floored += 1;
        VARIANCE_FLOOR.ln()
    }
}

fn band_features(
    band: &BandModel,
    covs: &[&SymmetricMatrix],
    floored: &mut usize,
) -> Result<DMatrix<f64>> {
    let n = covs.len();
    match band {
        BandModel::Riemann { reducer, reference } => {
            let ts = TangentSpace::new(reference.clone())?;
            let mut out = DMatrix::zeros(n, tangent_len(reference.dim()));
            for (i, c) in covs.iter().enumerate() {
                let spd = to_spd(c, reducer.as_ref())?;
                out.row_mut(i).copy_from(&ts.project(&spd)?.values().transpose());
            }
            Ok(out)
        }
        BandModel::Filters { filters, .. } => {
            let mut out = DMatrix::zeros(n, filters.ncols());
            for (i, c) in covs.iter().enumerate() {
                let projected = c.as_matrix() * filters;
                for j in 0..filters.ncols() {
                    out[(i, j)] = log_variance(filters.column(j).dot(&projected.column(j)), floored);
                }
            }
            Ok(out)
        }
        BandModel::Diag => {
            let p = covs.first().map_or(0, |c| c.dim());
            let mut out = DMatrix::zeros(n, p);
            for (i, c) in covs.iter().enumerate() {
                for j in 0..p {
                    out[(i, j)] = log_variance(c.as_matrix()[(j, j)], floored);
                }
            }
            Ok(out)
        }
    }
}

fn to_spd(c: &SymmetricMatrix, reducer: Option<&SpatialReducer>) -> Result<SpdMatrix> {
    match reducer {
        Some(r) => SpdMatrix::from_symmetric(apply_reducer(c, r)?),
        None => SpdMatrix::from_symmetric(c.clone()),
    }
}

fn fit_riemann_band(
    covs: &[&SymmetricMatrix],
    k: usize,
    opts: &MeanOptions,
) -> Result<BandModel> {
    let p = covs[0].dim();
    let reducer = if k < p {
        let owned: Vec<SymmetricMatrix> = covs.iter().map(|c| (*c).clone()).collect();
        Some(pca_reducer(&owned, k)?)
    } else {
        None
    };
    let spd: Vec<SpdMatrix> = covs
        .iter()
        .map(|c| to_spd(c, reducer.as_ref()))
        .collect::<Result<_>>()?;
    let reference = geometric_mean(&spd, opts)?;
    Ok(BandModel::Riemann { reducer, reference })
}

fn population_zscore(y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Contract("SPOC needs a target with nonzero variance".into()));
    }
    let sd = var.sqrt();
    Ok(y.iter().map(|v| (v - mean) / sd).collect())
}

fn spd_arithmetic_mean(covs: &[&SymmetricMatrix]) -> Result<SpdMatrix> {
    SpdMatrix::from_symmetric(arithmetic_mean(covs.iter().copied())?)
}

fn fit_spoc_band(covs: &[&SymmetricMatrix], y: &[f64], k: usize) -> Result<BandModel> {
    let z = population_zscore(y)?;
    let p = covs[0].dim();
    let mut weighted = DMatrix::zeros(p, p);
    for (c, zi) in covs.iter().zip(&z) {
        weighted += c.as_matrix() * *zi;
    }
    let weighted = SymmetricMatrix::new(weighted / covs.len() as f64)?;
    let mean = spd_arithmetic_mean(covs)?;
    let eig = gen_eig(&weighted, &mean)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.values[b].abs().total_cmp(&eig.values[a].abs()));
    order.truncate(k);
    Ok(filters_from(&eig.vectors, &eig.values, &order))
}

fn filters_from(vectors: &DMatrix<f64>, values: &DVector<f64>, order: &[usize]) -> BandModel {
    let mut filters = DMatrix::zeros(vectors.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        filters.set_column(dst, &vectors.column(src));
    }
    BandModel::Filters {
        filters,
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
    }
}

/// Largest, smallest, second largest, second smallest, ... for descending
/// eigenvalues of dimension `p`.
pub fn interleaved_ends(p: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|j| if j % 2 == 0 { j / 2 } else { p - 1 - j / 2 })
        .collect()
}

fn fit_csp_band(covs: &[&SymmetricMatrix], positive: &[bool], k: usize) -> Result<BandModel> {
    let pos: Vec<&SymmetricMatrix> = covs.iter().zip(positive).filter(|(_, &p)| p).map(|(c, _)| *c).collect();
    let neg: Vec<&SymmetricMatrix> = covs.iter().zip(positive).filter(|(_, &p)| !p).map(|(c, _)| *c).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract("CSP needs observations of both classes".into()));
    }
    let c_pos = arithmetic_mean(pos)?;
    let c_neg = arithmetic_mean(neg)?;
    let composite = SpdMatrix::from_symmetric(SymmetricMatrix::symmetrized(
        c_pos.as_matrix() + c_neg.as_matrix(),
    ))?;
    let eig = gen_eig(&c_pos, &composite)?;
    let order = interleaved_ends(c_pos.dim(), k);
    Ok(filters_from(&eig.vectors, &eig.values, &order))
}

/// Fits `config.method` on `ds`.
pub fn fit_pipeline(ds: &CovarianceDataset, config: &PipelineConfig) -> Result<FittedPipeline> {
    let n = ds.n_obs();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 training observations, got {n}"
        )));
    }
    let p = ds.n_channels();
    if p == 0 {
        return Err(Error::Shape("dataset has no channels".into()));
    }
    let k = config.resolved_components(p)?;
    let y = ds.targets();

    let classes = match ds.target_kind() {
        TargetKind::Binary => {
            let c = ds.classes();
            if c.len() != 2 {
                return Err(Error::Contract(
                    "binary training targets must contain both classes".into(),
                ));
            }
            Some([c[0], c[1]])
        }
        TargetKind::Continuous => None,
    };
    let positive: Option<Vec<bool>> = classes.map(|[_, pos]| y.iter().map(|&v| v == pos).collect());

    match (config.method, config.head, ds.target_kind()) {
        (Method::Spoc, _, TargetKind::Binary) => {
            return Err(Error::Contract("SPOC needs continuous targets".into()))
        }
        (Method::Csp, _, TargetKind::Continuous) => {
            return Err(Error::Contract("CSP needs binary labels".into()))
        }
        (_, HeadKind::Logistic, TargetKind::Continuous) => {
            return Err(Error::Contract("a logistic head needs binary labels".into()))
        }
        _ => {}
    }

    let bands = (0..ds.n_bands())
        .map(|b| {
            let covs = ds.band(b);
            match config.method {
                Method::Riemann => fit_riemann_band(&covs, k, &config.mean),
                Method::Spoc => fit_spoc_band(&covs, y, k),
                Method::Csp => fit_csp_band(&covs, positive.as_deref().expect("binary"), k),
                Method::Diag => Ok(BandModel::Diag),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut block_offsets = Vec::with_capacity(bands.len());
    let mut total = 0;
    for band in &bands {
        block_offsets.push(total);
        total += band.feature_len(p);
    }
    let mut raw = DMatrix::zeros(n, total);
    let mut floored = 0;
    for (b, band) in bands.iter().enumerate() {
        let block = band_features(band, &ds.band(b), &mut floored)?;
        raw.columns_mut(block_offsets[b], block.ncols()).copy_from(&block);
    }
    let standardizer = Standardizer::fit(&raw)?;
    let z = standardizer.transform(&raw)?;
    let head = match config.head {
        HeadKind::Ridge => fit_ridge_gcv(&z, &DVector::from_column_slice(y), &config.grid)?,
        HeadKind::Logistic => fit_logistic_l2(
            &z,
            positive.as_deref().expect("checked binary"),
            &config.grid,
            &config.logistic,
        )?,
    };
    Ok(FittedPipeline {
        config: config.clone(),
        n_channels: p,
        bands,
        standardizer,
        head,
        block_offsets,
        classes,
    })
}

pub fn fit_riemann(ds: &CovarianceDataset, k: Option<usize>, head: HeadKind) -> Result<FittedPipeline> {
    fit_pipeline(ds, &PipelineConfig::new(Method::Riemann, k, head))
}

pub fn fit_spoc(ds: &CovarianceDataset, k: Option<usize>, head: HeadKind) -> Result<FittedPipeline> {
    fit_pipeline(ds, &PipelineConfig::new(Method::Spoc, k, head))
}

pub fn fit_csp(ds: &CovarianceDataset, k: Option<usize>, head: HeadKind) -> Result<FittedPipeline> {
    fit_pipeline(ds, &PipelineConfig::new(Method::Csp, k, head))
}

pub fn fit_diag(ds: &CovarianceDataset, head: HeadKind) -> Result<FittedPipeline> {
    fit_pipeline(ds, &PipelineConfig::new(Method::Diag, None, head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag_dataset(diags: &[[f64; 2]], targets: Vec<f64>, kind: TargetKind) -> CovarianceDataset {
        let covs = diags.iter().map(|d| SymmetricMatrix::from_diagonal(d)).collect();
        CovarianceDataset::new(2, 1, covs, targets, kind).unwrap()
    }

    #[test]
    fn interleaving_order() {
        assert_eq!(interleaved_ends(6, 4), vec![0, 5, 1, 4]);
        assert_eq!(interleaved_ends(2, 2), vec![0, 1]);
    }

    #[test]
    fn csp_closed_form_two_by_two() {
        let ds = diag_dataset(
            &[[4.0, 1.0], [4.0, 1.0], [1.0, 4.0], [1.0, 4.0]],
            vec![1.0, 1.0, 0.0, 0.0],
            TargetKind::Binary,
        );
        let p = fit_pipeline(&ds, &PipelineConfig::new(Method::Csp, Some(2), HeadKind::Logistic)).unwrap();
        let BandModel::Filters { filters, eigenvalues } = &p.bands()[0] else {
            panic!("expected filters")
        };
        assert_abs_diff_eq!(eigenvalues[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(eigenvalues[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(filters[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(filters[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn csp_identical_classes_give_half() {
        let ds = diag_dataset(
            &[[2.0, 1.0], [1.0, 3.0], [2.0, 1.0], [1.0, 3.0]],
            vec![1.0, 1.0, 0.0, 0.0],
            TargetKind::Binary,
        );
        let p = fit_pipeline(&ds, &PipelineConfig::new(Method::Csp, Some(2), HeadKind::Logistic)).unwrap();
        let BandModel::Filters { eigenvalues, .. } = &p.bands()[0] else { panic!() };
        for l in eigenvalues {
            assert_abs_diff_eq!(*l, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn method_target_contracts() {
        let cont = diag_dataset(&[[1.0, 2.0], [2.0, 1.0], [3.0, 1.0]], vec![0.1, 0.2, 0.3], TargetKind::Continuous);
        assert!(matches!(fit_csp(&cont, Some(2), HeadKind::Ridge), Err(Error::Contract(_))));
        assert!(matches!(fit_diag(&cont, HeadKind::Logistic), Err(Error::Contract(_))));
        assert!(matches!(fit_spoc(&cont, Some(3), HeadKind::Ridge), Err(Error::Contract(_))));
        assert!(matches!(
            fit_pipeline(&cont, &PipelineConfig::new(Method::Csp, Some(1), HeadKind::Ridge)),
            Err(Error::Contract(_))
        ));
        let flat = diag_dataset(&[[1.0, 2.0], [2.0, 1.0]], vec![0.5, 0.5], TargetKind::Continuous);
        assert!(matches!(fit_spoc(&flat, None, HeadKind::Ridge), Err(Error::Contract(_))));
        let one_class = diag_dataset(&[[1.0, 2.0], [2.0, 1.0]], vec![1.0, 1.0], TargetKind::Binary);
        assert!(matches!(fit_csp(&one_class, Some(2), HeadKind::Logistic), Err(Error::Contract(_))));
    }

    #[test]
    fn diag_single_channel_feature_per_band() {
        let covs = (0..8).map(|i| SymmetricMatrix::from_diagonal(&[1.0 + i as f64])).collect();
        let y: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let ds = CovarianceDataset::new(1, 2, covs, y, TargetKind::Continuous).unwrap();
        let p = fit_diag(&ds, HeadKind::Ridge).unwrap();
        assert_eq!(p.feature_len(), 2);
        assert_eq!(p.block_offsets(), &[0, 1]);
        let f = p.raw_features(&ds).unwrap();
        assert_abs_diff_eq!(f.values[(1, 0)], 3f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(f.values[(1, 1)], 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn variance_floor_is_counted() {
        let covs = vec![
            SymmetricMatrix::from_diagonal(&[1.0, 2.0]),
            SymmetricMatrix::from_diagonal(&[2.0, 3.0]),
            SymmetricMatrix::from_diagonal(&[4.0, 1.0]),
        ];
        let ds = CovarianceDataset::new(2, 1, covs, vec![0.0, 1.0, 2.0], TargetKind::Continuous).unwrap();
        let p = fit_diag(&ds, HeadKind::Ridge).unwrap();
        let bad = CovarianceDataset::new(2, 1, vec![SymmetricMatrix::from_diagonal(&[0.0, 1.0])], vec![0.0], TargetKind::Continuous).unwrap();
        let f = p.raw_features(&bad).unwrap();
        assert_eq!(f.floored, 1);
        assert_eq!(f.values[(0, 0)], VARIANCE_FLOOR.ln());
        assert!(p.predict(&bad).unwrap()[0].is_finite());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let ds = diag_dataset(&[[1.0, 2.0], [2.0, 1.0], [3.0, 1.0]], vec![0.1, 0.2, 0.3], TargetKind::Continuous);
        let p = fit_riemann(&ds, None, HeadKind::Ridge).unwrap();
        let other = CovarianceDataset::new(1, 1, vec![SymmetricMatrix::identity(1)], vec![0.0], TargetKind::Continuous).unwrap();
        assert!(matches!(p.predict(&other), Err(Error::Shape(_))));
        let empty = ds.subset(&[]);
        assert!(p.predict(&empty).unwrap().is_empty());
    }

    #[test]
    fn components_resolution() {
        let c = PipelineConfig::new(Method::Csp, None, HeadKind::Logistic);
        assert_eq!(c.resolved_components(5).unwrap(), 4);
        let c = PipelineConfig::new(Method::Riemann, Some(6), HeadKind::Ridge);
        assert!(c.resolved_components(5).is_err());
        let c = PipelineConfig::new(Method::Diag, Some(2), HeadKind::Ridge);
        assert_eq!(c.resolved_components(5).unwrap(), 5);
    }
}
