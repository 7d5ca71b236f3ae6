//! Synthetic covariance datasets from the linear source-mixing model and
//! noise sweeps over them.
//!
//! Observation `i` has latent source powers `p_i` (log-normal), a mixing
//! matrix `A_i = A + N_i` with `N_i` i.i.d. `N(0, α²)`, covariance
//! `C_i = A_i diag(p_i) A_iᵀ` and target `y_i = Σ_{j<Q} b_j ln p_ij + b₀ + ε_i`
//! with `ε_i ~ N(0, σ²)`. The fixed mixing is `A = exp(B)` with Gaussian `B`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{sample_covariance, MultichannelWindow};
use crate::dataset::{CovarianceDataset, GroundTruth, TargetKind};
use crate::error::{Error, Result};
use crate::evaluation::{make_splits, normalized_mae, SplitScheme};
use crate::linmodel::{HeadKind, RegularizationGrid};
use crate::manifold::{MeanOptions, SpdMatrix, SymmetricMatrix};
use crate::patterns::{component_patterns, extract_patterns, pattern_distance};
use crate::pipelines::{fit_pipeline, Method, PipelineConfig};
use crate::rng::{self, Rng};

/// Ridge added to covariances that leave the SPD cone.
pub const SPD_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SimulationMode {
    /// `C_i = A_i E_i A_iᵀ` exactly.
    Direct,
    /// Sample covariance of `samples` generated time points.
    TimeSeries {
        samples: usize,
        #[serde(default)]
        center: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationParams {
    pub n_channels: usize,
    pub n_sources: usize,
    pub n_obs: usize,
    /// One weight per encoding source.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Standard deviation σ of the additive target noise.
    pub target_noise: f64,
    /// Standard deviation α of the per-observation mixing perturbation.
    pub pattern_noise: f64,
    /// Standard deviation of the entries of `B` in `A = exp(B)`; 0 gives
    /// `A = I`.
    pub mixing_scale: f64,
    /// Standard deviation of the log source powers.
    pub log_power_std: f64,
    pub seed: u64,
    pub mode: SimulationMode,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            n_channels: 5,
            n_sources: 1,
            n_obs: 1000,
            weights: vec![1.0],
            bias: 0.0,
            target_noise: 0.0,
            pattern_noise: 0.0,
            mixing_scale: 1.0,
            log_power_std: 1.0,
            seed: 0,
            mode: SimulationMode::Direct,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        let p = self.n_channels;
        if p == 0 {
            return Err(Error::Contract("n_channels must be positive".into()));
        }
        if self.n_sources > p {
            return Err(Error::Contract(format!(
                "n_sources = {} exceeds n_channels = {p}",
                self.n_sources
            )));
        }
        if self.weights.len() != self.n_sources {
            return Err(Error::Contract(format!(
                "{} weights for {} sources",
                self.weights.len(),
                self.n_sources
            )));
        }
        for (name, v) in [
            ("target_noise", self.target_noise),
            ("pattern_noise", self.pattern_noise),
            ("mixing_scale", self.mixing_scale),
            ("log_power_std", self.log_power_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Contract("weights and bias must be finite".into()));
        }
        if let SimulationMode::TimeSeries { samples: 0, .. } = self.mode {
            return Err(Error::Contract("time-series mode needs at least one sample".into()));
        }
        Ok(())
    }
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `exp(B)` with `B` entries i.i.d. `N(0, scale²)`; invertible since
/// `det A = exp(tr B)`.
pub fn gen_mixing(p: usize, scale: f64, rng: &mut Rng) -> DMatrix<f64> {
    normal_matrix(rng, p, p, scale).exp()
}

/// A simulated dataset and the number of covariances that needed the
/// [`SPD_RIDGE`] to stay positive definite.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: CovarianceDataset,
    pub ridged: usize,
}

pub fn gen_dataset(params: &SimulationParams) -> Result<Simulated> {
    params.validate()?;
    let p = params.n_channels;
    let q = params.n_sources;
    let mut rng = rng::seeded(params.seed);
    let mut sample_rng = rng::seeded(rng::derive_seed(params.seed, &[1]));
    let mixing = gen_mixing(p, params.mixing_scale, &mut rng);

    let mut covariances = Vec::with_capacity(params.n_obs);
    let mut targets = Vec::with_capacity(params.n_obs);
    let mut ridged = 0;
    for _ in 0..params.n_obs {
        let log_power = DVector::from_fn(p, |_, _| {
            params.log_power_std * rng.sample::<f64, _>(StandardNormal)
        });
        let a_i = &mixing + normal_matrix(&mut rng, p, p, params.pattern_noise);
        let cov = match params.mode {
            SimulationMode::Direct => {
                let mut scaled = a_i.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= log_power[j].exp();
                }
                SymmetricMatrix::symmetrized(scaled * a_i.transpose())
            }
            SimulationMode::TimeSeries { samples, center } => {
                let mut sources = normal_matrix(&mut sample_rng, p, samples, 1.0);
                for (j, mut row) in sources.row_iter_mut().enumerate() {
                    row *= (0.5 * log_power[j]).exp();
                }
                let window = MultichannelWindow::new(&a_i * sources)?;
                let window = if center { window.centered() } else { window };
                sample_covariance(&window)
            }
        };
        let cov = match SpdMatrix::from_symmetric(cov.clone()) {
            Ok(_) => cov,
            Err(_) => {
                ridged += 1;
                let shifted = SymmetricMatrix::symmetrized(
                    cov.as_matrix() + DMatrix::identity(p, p) * SPD_RIDGE,
                );
                SpdMatrix::from_symmetric(shifted.clone())
                    .map_err(|_| Error::Numerical("simulated covariance is not positive definite even after ridging".into()))?;
                shifted
            }
        };
        let noise = params.target_noise * rng.sample::<f64, _>(StandardNormal);
        let y = (0..q).map(|j| params.weights[j] * log_power[j]).sum::<f64>() + params.bias + noise;
        covariances.push(cov);
        targets.push(y);
    }
    let dataset = CovarianceDataset::new(p, 1, covariances, targets, TargetKind::Continuous)?
        .with_truth(GroundTruth {
            mixing,
            weights: params.weights.clone(),
            bias: params.bias,
            n_sources: q,
        })?;
    Ok(Simulated { dataset, ridged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TargetNoise,
    PatternNoise,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TargetNoise => "target_noise",
            SweepAxis::PatternNoise => "pattern_noise",
        }
    }

    fn index(self) -> u64 {
        match self {
            SweepAxis::TargetNoise => 0,
            SweepAxis::PatternNoise => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Riemann,
    Spoc,
    Diag,
    /// Predicts the training mean.
    Dummy,
}

impl SweepMethod {
    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::Riemann => "riemann",
            SweepMethod::Spoc => "spoc",
            SweepMethod::Diag => "diag",
            SweepMethod::Dummy => "dummy",
        }
    }

    fn pipeline(self) -> Option<Method> {
        match self {
            SweepMethod::Riemann => Some(Method::Riemann),
            SweepMethod::Spoc => Some(Method::Spoc),
            SweepMethod::Diag => Some(Method::Diag),
            SweepMethod::Dummy => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub methods: Vec<SweepMethod>,
    pub n_folds: usize,
    pub seeds: Vec<u64>,
    /// Parameters shared by every cell; the swept one is overridden and the
    /// seed is derived per cell.
    pub base: SimulationParams,
    pub regularization: RegularizationGrid,
    pub mean: MeanOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::TargetNoise,
            grid: vec![0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0],
            methods: vec![
                SweepMethod::Riemann,
                SweepMethod::Spoc,
                SweepMethod::Diag,
                SweepMethod::Dummy,
            ],
            n_folds: 10,
            seeds: (0..10).collect(),
            base: SimulationParams::default(),
            regularization: RegularizationGrid::default(),
            mean: MeanOptions::default(),
        }
    }
}

impl SweepConfig {
    /// Default grid of the pattern-noise axis.
    pub fn pattern_noise_grid() -> Vec<f64> {
        vec![0.0, 0.125, 0.25, 0.5, 1.0, 2.0]
    }
}

/// One (grid value, seed, method, fold) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: SweepMethod,
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub fold: usize,
    pub normalized_mae: f64,
    /// Distance of the top recovered pattern to the strongest true pattern;
    /// NaN for methods without patterns.
    pub pattern_distance: f64,
    /// `ok` or `error: <message>`.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

const DATA_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;

/// Cross-validated normalized MAE and pattern distance for every grid value,
/// seed, method and fold. Failed cells are reported through `status`.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.grid.is_empty() || config.seeds.is_empty() || config.methods.is_empty() {
        return Err(Error::Contract("a sweep needs grid values, seeds and methods".into()));
    }
    if config.n_folds < 2 {
        return Err(Error::Contract("a sweep needs at least 2 folds".into()));
    }
    let mut probe = config.base.clone();
    for &v in &config.grid {
        set_axis(&mut probe, config.axis, v);
        probe.validate()?;
    }
    let cells: Vec<(usize, u64)> = (0..config.grid.len())
        .flat_map(|g| config.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(g, seed)| sweep_cell(config, g, seed))
        .collect::<Vec<_>>();
    Ok(rows.into_iter().flatten().collect())
}

fn set_axis(params: &mut SimulationParams, axis: SweepAxis, value: f64) {
    match axis {
        SweepAxis::TargetNoise => params.target_noise = value,
        SweepAxis::PatternNoise => params.pattern_noise = value,
    }
}

fn sweep_cell(config: &SweepConfig, g: usize, seed: u64) -> Vec<SweepRow> {
    let value = config.grid[g];
    let row = |method, fold, nmae, dist, status: String| SweepRow {
        method,
        axis: config.axis,
        value,
        seed,
        fold,
        normalized_mae: nmae,
        pattern_distance: dist,
        status,
    };
    let mut params = config.base.clone();
    set_axis(&mut params, config.axis, value);
    let path = [config.axis.index(), g as u64];
    params.seed = rng::derive_seed(seed, &[path[0], path[1], DATA_STREAM]);
    let prepared = gen_dataset(&params).and_then(|sim| {
        let plan = make_splits(
            sim.dataset.n_obs(),
            SplitScheme::KFold { k: config.n_folds },
            None,
            rng::derive_seed(seed, &[path[0], path[1], SPLIT_STREAM]),
        )?;
        Ok((sim.dataset, plan))
    });
    let (ds, plan) = match prepared {
        Ok(v) => v,
        Err(e) => {
            return config
                .methods
                .iter()
                .flat_map(|&m| (0..config.n_folds).map(move |f| (m, f)))
                .map(|(m, f)| row(m, f, f64::NAN, f64::NAN, format!("error: {e}")))
                .collect();
        }
    };
    let truth = ds.truth().expect("simulated data has ground truth").strongest_pattern();
    let mut out = Vec::with_capacity(config.methods.len() * plan.n_folds());
    for &method in &config.methods {
        for fold in 0..plan.n_folds() {
            let train = ds.subset(&plan.train(fold));
            let test = ds.subset(plan.test(fold));
            match evaluate_method(config, method, &train, &test, &truth) {
                Ok((nmae, dist)) => out.push(row(method, fold, nmae, dist, "ok".into())),
                Err(e) => out.push(row(method, fold, f64::NAN, f64::NAN, format!("error: {e}"))),
            }
        }
    }
    out
}

fn evaluate_method(
    config: &SweepConfig,
    method: SweepMethod,
    train: &CovarianceDataset,
    test: &CovarianceDataset,
    truth: &[f64],
) -> Result<(f64, f64)> {
    let train_mean = train.targets().iter().sum::<f64>() / train.n_obs() as f64;
    let Some(pipeline_method) = method.pipeline() else {
        let predictions = vec![train_mean; test.n_obs()];
        return Ok((normalized_mae(test.targets(), &predictions, train_mean)?, f64::NAN));
    };
    let pipeline_config = PipelineConfig {
        method: pipeline_method,
        components: None,
        head: HeadKind::Ridge,
        grid: config.regularization.clone(),
        mean: config.mean,
        ..PipelineConfig::default()
    };
    let model = fit_pipeline(train, &pipeline_config)?;
    let predictions = model.predict(test)?;
    let nmae = normalized_mae(test.targets(), &predictions, train_mean)?;
    let patterns = match pipeline_method {
        Method::Riemann => Some(extract_patterns(&model, train)?),
        Method::Spoc => Some(component_patterns(&model, train)?),
        _ => None,
    };
    let dist = match patterns {
        Some(set) => pattern_distance(truth, &set.bands[0].top_pattern())?,
        None => f64::NAN,
    };
    Ok((nmae, dist))
}
