//! Channel-space patterns from fitted pipelines.
//!
//! For tangent-space models the weight vector of each band is turned into a
//! tangent pattern with the Haufe transform, mapped back onto the manifold
//! at the band's reference `C̄`, and split by the generalized eigenproblem
//! `eigh(C_d, C̄)`. The generalized eigenvectors `V` are spatial filters; the
//! patterns are `C̄ V`. Because `C_d = C̄^{1/2} exp(D) C̄^{1/2}` with
//! `D = upper⁻¹(d_c)`, the problem reduces to the ordinary eigenproblem of
//! `D`, which is solved directly so that large `|log λ|` never overflows.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SpatialReducer;
use crate::dataset::CovarianceDataset;
use crate::error::{Error, Result};
use crate::linmodel::RegularizationGrid;
use crate::manifold::{
    arithmetic_mean, sym_eig, upper_inv, SpdMatrix, SymmetricMatrix, TangentSpace,
};
use crate::pipelines::{fit_pipeline, BandModel, FittedPipeline, Method};
use crate::rng;

/// Haufe pattern of a linear readout in tangent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPattern {
    /// Weights in raw (unstandardized) tangent coordinates.
    pub weights: DVector<f64>,
    pub pattern: DVector<f64>,
    /// `bᵀ C_v b`, the variance of the band's contribution to the prediction.
    pub sigma_yhat_sq: f64,
}

/// `d = C_v b / (bᵀ C_v b)`, so that `bᵀ d = 1`.
pub fn haufe_tangent_pattern(b: &DVector<f64>, cv: &DMatrix<f64>) -> Result<TangentPattern> {
    if cv.nrows() != b.len() || cv.ncols() != b.len() {
        return Err(Error::Shape(format!(
            "feature covariance is {}x{}, weights have length {}",
            cv.nrows(),
            cv.ncols(),
            b.len()
        )));
    }
    let cb = cv * b;
    let sigma_yhat_sq = b.dot(&cb);
    if !(sigma_yhat_sq > 0.0) || !sigma_yhat_sq.is_finite() {
        return Err(Error::Degenerate(format!(
            "prediction variance bᵀC_v b = {sigma_yhat_sq:.3e} is not positive"
        )));
    }
    Ok(TangentPattern {
        weights: b.clone(),
        pattern: cb / sigma_yhat_sq,
        sigma_yhat_sq,
    })
}

/// `λ_j = exp(b_j / ‖b‖²)` for the first `q` sources and 1 for the rest.
pub fn predict_eigenvalues(b: &[f64], q: usize, p_total: usize) -> Result<Vec<f64>> {
    if q > p_total || q > b.len() {
        return Err(Error::Contract(format!(
            "q = {q} must not exceed the dimension {p_total} or the weight count {}",
            b.len()
        )));
    }
    let norm_sq: f64 = b[..q].iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::Contract("weights are all zero".into()));
    }
    Ok((0..p_total)
        .map(|j| if j < q { (b[j] / norm_sq).exp() } else { 1.0 })
        .collect())
}

/// `1 − |âᵀa| / (‖â‖ ‖a‖)`.
pub fn pattern_distance(a: &[f64], a_hat: &[f64]) -> Result<f64> {
    if a.len() != a_hat.len() {
        return Err(Error::Shape(format!(
            "patterns of length {} and {}",
            a.len(),
            a_hat.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = a_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Contract("pattern distance of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(a_hat).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot.abs() / (na * nb)).clamp(0.0, 1.0))
}

/// Patterns of one band, most relevant first.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPatterns {
    /// `P x K`, unit-norm columns, largest-magnitude entry positive.
    pub patterns: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Position of each column in the solver's output (eigenvalues
    /// descending for tangent models, filter order for SPOC/CSP).
    pub order: Vec<usize>,
    /// Relevance score used for ranking: `max(λ, 1/λ)` for tangent models,
    /// `|λ|` for SPOC and `max(λ, 1 − λ)` for CSP.
    pub criterion: Vec<f64>,
    /// Haufe pattern of the band's weights (tangent models only).
    pub tangent: Option<TangentPattern>,
    pub q_hat: Option<usize>,
}

impl BandPatterns {
    pub fn top_pattern(&self) -> Vec<f64> {
        self.patterns.column(0).iter().copied().collect()
    }

    /// `ln λ_j` (NaN where λ ≤ 0).
    pub fn log_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| if l > 0.0 { l.ln() } else { f64::NAN })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub method: Method,
    pub bands: Vec<BandPatterns>,
}

/// Scales columns to unit norm and flips each so its largest-magnitude
/// entry is positive.
pub fn normalize_columns(m: &mut DMatrix<f64>) -> Result<()> {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("pattern column has zero or non-finite norm".into()));
        }
        col /= norm;
        let peak = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if peak < 0.0 {
            col.neg_mut();
        }
    }
    Ok(())
}

fn permute_columns(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

/// Uncentered second moment `E{v vᵀ}` of the rows of `v`.
pub fn feature_second_moment(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() == 0 {
        return Err(Error::InsufficientData("no training features".into()));
    }
    Ok(v.transpose() * v / v.nrows() as f64)
}

/// Solution of `eigh(proj⁻¹(d), C̄)` in the reduced space, returned as
/// `(log λ, filters, patterns)` with eigenvalues descending.
pub fn tangent_eigenpatterns(
    d: &DVector<f64>,
    reference: &SpdMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let ts = TangentSpace::new(reference.clone())?;
    let dm = upper_inv(d.as_slice())?;
    if dm.dim() != ts.dim() {
        return Err(Error::Shape(format!(
            "tangent pattern of a {0}x{0} matrix at a {1}x{1} reference",
            dm.dim(),
            ts.dim()
        )));
    }
    let eig = sym_eig(&dm)?;
    let filters = ts.inv_sqrt() * &eig.vectors;
    let patterns = ts.sqrt() * &eig.vectors;
    Ok((eig.values, filters, patterns))
}

fn rank_by(criterion: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..criterion.len()).collect();
    order.sort_by(|&a, &b| criterion[b].total_cmp(&criterion[a]));
    order
}

fn riemann_band(
    tangent: TangentPattern,
    reference: &SpdMatrix,
    reducer: Option<&SpatialReducer>,
) -> Result<BandPatterns> {
    let (log_lambda, _, reduced) = tangent_eigenpatterns(&tangent.pattern, reference)?;
    let channel = match reducer {
        Some(r) => r.filters() * reduced,
        None => reduced,
    };
    let abs_log: Vec<f64> = log_lambda.iter().map(|m| m.abs()).collect();
    let order = rank_by(&abs_log);
    let mut patterns = permute_columns(&channel, &order);
    normalize_columns(&mut patterns)?;
    Ok(BandPatterns {
        patterns,
        eigenvalues: order.iter().map(|&j| log_lambda[j].exp()).collect(),
        criterion: order.iter().map(|&j| abs_log[j].exp()).collect(),
        order,
        tangent: Some(tangent),
        q_hat: None,
    })
}

/// Haufe patterns of every band of a tangent-space pipeline, with `C_v`
/// taken from the raw tangent features of `training`.
pub fn tangent_patterns(p: &FittedPipeline, training: &CovarianceDataset) -> Result<Vec<TangentPattern>> {
    if p.method() != Method::Riemann {
        return Err(Error::Contract(format!(
            "tangent patterns need a riemann pipeline, got {}",
            p.method()
        )));
    }
    if training.n_obs() == 0 {
        return Err(Error::Contract("pattern extraction needs the training features".into()));
    }
    let raw = p.raw_features(training)?;
    let weights = &p.head().weights;
    let stds = p.standardizer().stds();
    (0..p.n_bands())
        .map(|b| {
            let block = p.block(b);
            let w = DVector::from_iterator(
                block.len(),
                block.clone().map(|j| weights[j] / stds[j]),
            );
            let v = raw.values.columns(block.start, block.len()).into_owned();
            haufe_tangent_pattern(&w, &feature_second_moment(&v)?)
        })
        .collect()
}

/// Channel-space patterns and eigenvalues of a fitted tangent-space
/// pipeline, one set per band, sorted by `max(λ, 1/λ)`.
pub fn extract_patterns(p: &FittedPipeline, training: &CovarianceDataset) -> Result<PatternSet> {
    let tangents = tangent_patterns(p, training)?;
    let bands = p
        .bands()
        .iter()
        .zip(tangents)
        .map(|(band, tangent)| match band {
            BandModel::Riemann { reducer, reference } => {
                riemann_band(tangent, reference, reducer.as_ref())
            }
            _ => Err(Error::Contract("band model is not a tangent-space model".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternSet {
        method: Method::Riemann,
        bands,
    })
}

/// Forward patterns `A = C̄ W (Wᵀ C̄ W)⁻¹` of SPOC/CSP filters, with `C̄` the
/// arithmetic mean of each band of `training`.
pub fn component_patterns(p: &FittedPipeline, training: &CovarianceDataset) -> Result<PatternSet> {
    if !matches!(p.method(), Method::Spoc | Method::Csp) {
        return Err(Error::Contract(format!(
            "component patterns need a spoc or csp pipeline, got {}",
            p.method()
        )));
    }
    if training.n_obs() == 0 {
        return Err(Error::Contract("pattern extraction needs the training covariances".into()));
    }
    if training.n_channels() != p.n_channels() || training.n_bands() != p.n_bands() {
        return Err(Error::Shape("training data does not match the pipeline".into()));
    }
    let bands = p
        .bands()
        .iter()
        .enumerate()
        .map(|(b, band)| {
            let BandModel::Filters { filters, eigenvalues } = band else {
                return Err(Error::Contract("band model has no spatial filters".into()));
            };
            let mean = arithmetic_mean(training.band(b))?;
            let mut patterns = filter_patterns(filters, &mean)?;
            normalize_columns(&mut patterns)?;
            let criterion = eigenvalues
                .iter()
                .map(|&l| match p.method() {
                    Method::Csp => l.max(1.0 - l),
                    _ => l.abs(),
                })
                .collect();
            Ok(BandPatterns {
                patterns,
                eigenvalues: eigenvalues.clone(),
                order: (0..eigenvalues.len()).collect(),
                criterion,
                tangent: None,
                q_hat: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternSet {
        method: p.method(),
        bands,
    })
}

/// `C W (Wᵀ C W)⁻¹`.
pub fn filter_patterns(filters: &DMatrix<f64>, cov: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    if filters.nrows() != cov.dim() {
        return Err(Error::Shape(format!(
            "{} filter rows for a {}-channel covariance",
            filters.nrows(),
            cov.dim()
        )));
    }
    let cw = cov.as_matrix() * filters;
    let gram = SymmetricMatrix::new(filters.transpose() * &cw)
        .map_err(|_| Error::Degenerate("filter Gram matrix is not symmetric".into()))?;
    let eig = sym_eig(&gram)?;
    let max = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Degenerate(format!(
            "filter Gram matrix WᵀCW is singular (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    let inverse = eig.map(|l| 1.0 / l).into_inner();
    Ok(cw * inverse)
}

/// Patterns of any supported pipeline.
pub fn patterns_for(p: &FittedPipeline, training: &CovarianceDataset) -> Result<PatternSet> {
    match p.method() {
        Method::Riemann => extract_patterns(p, training),
        Method::Spoc | Method::Csp => component_patterns(p, training),
        Method::Diag => Err(Error::Contract("diag pipelines have no spatial patterns".into())),
    }
}

/// Per-component statistic compared against the shuffle null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleStatistic {
    /// `max(λ, 1/λ)` as used for ranking.
    EigenvalueRatio,
    /// `σ²_ŷ |ln λ|`: the ranking criterion in log units, scaled by the
    /// variance the band contributes to the prediction. Under the generative
    /// model this equals `|b_j|`.
    #[default]
    ExplainedLogEigenvalue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShuffleOptions {
    pub n_shuffles: usize,
    /// Percentile of the null maxima, in `(0, 100)`.
    pub percentile: f64,
    pub seed: u64,
    pub statistic: ShuffleStatistic,
}

impl Default for ShuffleOptions {
    fn default() -> Self {
        ShuffleOptions {
            n_shuffles: 50,
            percentile: 95.0,
            seed: 0,
            statistic: ShuffleStatistic::default(),
        }
    }
}

/// Outcome of the shuffle test, per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub q_hat: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// Statistic of each observed component, in pattern order.
    pub observed: Vec<Vec<f64>>,
    /// Per band, the maximum statistic of every shuffle.
    pub null_maxima: Vec<Vec<f64>>,
    pub n_shuffles: usize,
    pub percentile: f64,
    pub statistic: ShuffleStatistic,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return Err(Error::Contract("percentile of an empty set or outside [0, 100]".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

fn statistics(set: &PatternSet, statistic: ShuffleStatistic) -> Vec<Vec<f64>> {
    set.bands
        .iter()
        .map(|band| match (&band.tangent, statistic) {
            (Some(t), ShuffleStatistic::ExplainedLogEigenvalue) => band
                .criterion
                .iter()
                .map(|c| t.sigma_yhat_sq * c.ln())
                .collect(),
            _ => band.criterion.clone(),
        })
        .collect()
}

/// Counts, per band, the components whose statistic exceeds the chosen
/// percentile of the maximum statistic over refits on shuffled targets.
/// Refits reuse the penalty chosen for `p`.
pub fn estimate_num_sources(
    p: &FittedPipeline,
    ds: &CovarianceDataset,
    opts: &ShuffleOptions,
) -> Result<Significance> {
    if opts.n_shuffles == 0 {
        return Err(Error::Contract("the shuffle test needs at least one shuffle".into()));
    }
    if !(opts.percentile > 0.0 && opts.percentile < 100.0) {
        return Err(Error::Contract(format!(
            "percentile must lie in (0, 100), got {}",
            opts.percentile
        )));
    }
    let observed = statistics(&patterns_for(p, ds)?, opts.statistic);
    let mut config = p.config().clone();
    config.grid = RegularizationGrid::single(p.head().chosen_alpha)?;

    let per_shuffle = (0..opts.n_shuffles)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<Vec<f64>> {
                let mut y = ds.targets().to_vec();
                y.shuffle(&mut rng::seeded(rng::derive_seed(opts.seed, &[i as u64])));
                let shuffled = ds.with_targets(y)?;
                let refit = fit_pipeline(&shuffled, &config)?;
                let stats = statistics(&patterns_for(&refit, &shuffled)?, opts.statistic);
                Ok(stats
                    .iter()
                    .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect())
            };
            run().map_err(|e| Error::Shuffle {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut thresholds = Vec::with_capacity(observed.len());
    let mut null_maxima = Vec::with_capacity(observed.len());
    let mut q_hat = Vec::with_capacity(observed.len());
    for (b, obs) in observed.iter().enumerate() {
        let null: Vec<f64> = per_shuffle.iter().map(|s| s[b]).collect();
        let t = percentile(&null, opts.percentile)?;
        q_hat.push(obs.iter().filter(|&&s| s > t).count());
        thresholds.push(t);
        null_maxima.push(null);
    }
    Ok(Significance {
        q_hat,
        thresholds,
        observed,
        null_maxima,
        n_shuffles: opts.n_shuffles,
        percentile: opts.percentile,
        statistic: opts.statistic,
    })
}
