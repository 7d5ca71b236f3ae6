//! Linear heads on tangent-space (or log-power) features: z-scoring, ridge
//! regression with closed-form generalized cross-validation, and
//! L2-penalized logistic regression tuned by stratified inner CV.
//!
//! The bias is never penalized. Ridge handles it by centering the features
//! and targets; the logistic Newton solver simply leaves it out of the
//! penalty term.

use nalgebra::{DMatrix, DVector, SVD};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::balanced_accuracy;
use crate::rng;

const STD_FLOOR: f64 = 1e-12;

/// Per-column z-scoring with the population (divide by `N`) convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let mut means = Vec::with_capacity(features.ncols());
        let mut stds = Vec::with_capacity(features.ncols());
        for col in features.column_iter() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                // constant column: exact mean so it maps to 0 exactly
                means.push(first);
                stds.push(STD_FLOOR);
                continue;
            }
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            means.push(mean);
            stds.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Standardizer { means, stds })
    }

    /// Rebuilds a fitted standardizer from stored statistics.
    pub fn from_parts(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(Error::Shape("means and stds differ in length".into()));
        }
        if stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Contract("standard deviations must be positive".into()));
        }
        Ok(Standardizer { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn transform(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, got {}",
                self.dim(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

/// Candidate penalties, strictly increasing and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RegularizationGrid(Vec<f64>);

impl RegularizationGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("regularization grid is empty".into()));
        }
        if values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Contract("grid values must be finite and positive".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("grid must be strictly increasing".into()));
        }
        Ok(RegularizationGrid(values))
    }

    /// `n` values log-spaced over `[lo, hi]`, endpoints exact.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.log10(), hi.log10());
        let values = (0..n)
            .map(|i| match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64),
            })
            .collect();
        Self::new(values)
    }

    pub fn single(alpha: f64) -> Result<Self> {
        Self::new(vec![alpha])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for RegularizationGrid {
    /// 25 values over `[1e-5, 1e3]`.
    fn default() -> Self {
        Self::log_spaced(1e-5, 1e3, 25).expect("static grid is valid")
    }
}

impl TryFrom<Vec<f64>> for RegularizationGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RegularizationGrid> for Vec<f64> {
    fn from(g: RegularizationGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Ridge,
    Logistic,
}

/// `ŷ = wᵀv + b₀`; logistic heads map the score through the logistic link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub kind: HeadKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub chosen_alpha: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearHead {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_function(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.dim(),
                features.ncols()
            )));
        }
        let w = DVector::from_column_slice(&self.weights);
        Ok((features * w).add_scalar(self.bias))
    }

    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        if self.kind != HeadKind::Logistic {
            return Err(Error::Contract("probabilities need a logistic head".into()));
        }
        Ok(self.decision_function(features)?.map(sigmoid))
    }

    /// Hard labels at probability 0.5 (score 0).
    pub fn predict_labels(&self, features: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self
            .predict_proba(features)?
            .iter()
            .map(|&p| p > 0.5)
            .collect())
    }
}

fn check_xy(features: &DMatrix<f64>, n_targets: usize) -> Result<()> {
    if features.nrows() != n_targets {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            n_targets
        )));
    }
    if features.nrows() < 2 {
        return Err(Error::InsufficientData("need at least 2 observations".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("features must be finite".into()));
    }
    Ok(())
}

/// Thin SVD of the centered design, shared by every penalty on the grid.
struct RidgeProblem {
    x_mean: DVector<f64>,
    y_mean: f64,
    y_centered: DVector<f64>,
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    u_t_y: DVector<f64>,
}

impl RidgeProblem {
    fn new(features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Self> {
        check_xy(features, targets.len())?;
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("targets must be finite".into()));
        }
        let n = features.nrows();
        let d = features.ncols();
        let x_mean = DVector::from_iterator(d, features.column_iter().map(|c| c.mean()));
        let mut xc = features.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-x_mean[j]);
        }
        let y_mean = targets.mean();
        let y_centered = targets.add_scalar(-y_mean);
        if d == 0 {
            return Ok(RidgeProblem {
                x_mean,
                y_mean,
                y_centered,
                u: DMatrix::zeros(n, 0),
                singular: DVector::zeros(0),
                v_t: DMatrix::zeros(0, 0),
                u_t_y: DVector::zeros(0),
            });
        }
        let svd = SVD::try_new(xc, true, true, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("SVD of the design matrix did not converge".into()))?;
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let u_t_y = u.transpose() * &y_centered;
        Ok(RidgeProblem {
            x_mean,
            y_mean,
            y_centered,
            u,
            singular: svd.singular_values,
            v_t,
            u_t_y,
        })
    }

    fn n(&self) -> usize {
        self.y_centered.len()
    }

    fn gcv(&self, alpha: f64) -> f64 {
        let n = self.n() as f64;
        let shrink = self.singular.map(|s| s * s / (s * s + alpha));
        let fitted = &self.u * self.u_t_y.component_mul(&shrink);
        let rss = (&self.y_centered - fitted).norm_squared();
        let dof = shrink.sum();
        (rss / n) / (1.0 - dof / n).powi(2)
    }

    fn solve(&self, alpha: f64) -> LinearHead {
        let coef = DVector::from_iterator(
            self.singular.len(),
            self.singular
                .iter()
                .zip(self.u_t_y.iter())
                .map(|(s, uy)| s / (s * s + alpha) * uy),
        );
        let weights = self.v_t.transpose() * coef;
        let bias = self.y_mean - weights.dot(&self.x_mean);
        LinearHead {
            kind: HeadKind::Ridge,
            weights: weights.as_slice().to_vec(),
            bias,
            chosen_alpha: alpha,
        }
    }
}

/// `GCV(α) = (‖y − ŷ‖²/N) / (1 − tr(H_α)/N)²` for every grid value, with
/// `H_α = X_c (X_cᵀ X_c + α I)⁻¹ X_cᵀ` on the centered design.
pub fn ridge_gcv_scores(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    grid: &RegularizationGrid,
) -> Result<Vec<f64>> {
    let problem = RidgeProblem::new(features, targets)?;
    Ok(grid.values().iter().map(|&a| problem.gcv(a)).collect())
}

/// Ridge regression at a fixed penalty.
pub fn fit_ridge(features: &DMatrix<f64>, targets: &DVector<f64>, alpha: f64) -> Result<LinearHead> {
    Ok(RidgeProblem::new(features, targets)?.solve(alpha))
}

/// Ridge regression with the penalty picked by GCV over `grid`. Exact ties
/// go to the larger penalty.
pub fn fit_ridge_gcv(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    grid: &RegularizationGrid,
) -> Result<LinearHead> {
    let problem = RidgeProblem::new(features, targets)?;
    let mut best = (f64::INFINITY, grid.values()[0]);
    for &alpha in grid.values() {
        let score = problem.gcv(alpha);
        if score <= best.0 {
            best = (score, alpha);
        }
    }
    Ok(problem.solve(best.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticOptions {
    /// Inner CV folds (capped by the minority class size).
    pub folds: usize,
    /// Seed for the stratified fold assignment.
    pub seed: u64,
    /// Gradient-norm stopping threshold for Newton.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            folds: 5,
            seed: 0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn scores(features: &DMatrix<f64>, weights: &DVector<f64>, bias: f64) -> DVector<f64> {
    (features * weights).add_scalar(bias)
}

/// `Σ_i [log(1 + e^{z_i}) − t_i z_i] + (α/2) ‖w‖²` with `z = Xw + b₀`.
pub fn logistic_objective(
    features: &DMatrix<f64>,
    labels: &[bool],
    alpha: f64,
    weights: &DVector<f64>,
    bias: f64,
) -> f64 {
    let z = scores(features, weights, bias);
    let nll: f64 = z
        .iter()
        .zip(labels)
        .map(|(&z, &t)| softplus(z) - if t { z } else { 0.0 })
        .sum();
    nll + 0.5 * alpha * weights.norm_squared()
}

/// Gradient of [`logistic_objective`]; the last entry is the bias component.
pub fn logistic_gradient(
    features: &DMatrix<f64>,
    labels: &[bool],
    alpha: f64,
    weights: &DVector<f64>,
    bias: f64,
) -> DVector<f64> {
    let z = scores(features, weights, bias);
    let resid = DVector::from_iterator(
        z.len(),
        z.iter()
            .zip(labels)
            .map(|(&z, &t)| sigmoid(z) - if t { 1.0 } else { 0.0 }),
    );
    let d = weights.len();
    let mut g = DVector::zeros(d + 1);
    g.rows_mut(0, d)
        .copy_from(&(features.transpose() * &resid + weights * alpha));
    g[d] = resid.sum();
    g
}

/// Outcome of one damped-Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonFit {
    pub weights: DVector<f64>,
    pub bias: f64,
    /// Objective value after each accepted step, starting at the origin.
    pub losses: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Minimizes [`logistic_objective`] by Newton steps with Armijo
/// backtracking and Levenberg damping when the Hessian is not numerically
/// positive definite.
pub fn logistic_newton(
    features: &DMatrix<f64>,
    labels: &[bool],
    alpha: f64,
    opts: &LogisticOptions,
) -> Result<NewtonFit> {
    check_xy(features, labels.len())?;
    let n = features.nrows();
    let d = features.ncols();
    let mut design = DMatrix::from_element(n, d + 1, 1.0);
    design.columns_mut(0, d).copy_from(features);

    let mut theta = DVector::<f64>::zeros(d + 1);
    let split = |theta: &DVector<f64>| (theta.rows(0, d).into_owned(), theta[d]);
    let objective = |theta: &DVector<f64>| {
        let (w, b) = split(theta);
        logistic_objective(features, labels, alpha, &w, b)
    };

    let mut loss = objective(&theta);
    let mut losses = vec![loss];
    for iter in 0..=opts.max_iter {
        let (w, b) = split(&theta);
        let grad = logistic_gradient(features, labels, alpha, &w, b);
        let gnorm = grad.norm();
        if gnorm <= opts.tol {
            return Ok(NewtonFit {
                weights: w,
                bias: b,
                losses,
                gradient_norm: gnorm,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            return Err(Error::Convergence {
                iterations: opts.max_iter,
                gradient_norm: gnorm,
            });
        }
        let z = &design * &theta;
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            let p = sigmoid(z[i]);
            row.scale_mut(p * (1.0 - p));
        }
        let mut hessian = design.transpose() * weighted;
        for j in 0..d {
            hessian[(j, j)] += alpha;
        }
        let step = newton_direction(hessian, &grad)?;
        let slope = grad.dot(&step);
        let slack = 4.0 * f64::EPSILON * loss.abs();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta + &step * t;
            let value = objective(&candidate);
            if value <= loss + 1e-4 * t * slope + slack {
                accepted = Some((candidate, value));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, value)) => {
                theta = candidate;
                loss = value;
                losses.push(loss);
            }
            None => {
                return Err(Error::Convergence {
                    iterations: iter,
                    gradient_norm: gnorm,
                })
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn newton_direction(hessian: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = hessian.nrows();
    let scale = hessian.diagonal().amax().max(1.0);
    let mut damping = 0.0;
    for _ in 0..20 {
        let mut h = hessian.clone();
        for j in 0..dim {
            h[(j, j)] += damping;
        }
        if let Some(chol) = h.cholesky() {
            return Ok(-chol.solve(grad));
        }
        damping = if damping == 0.0 {
            1e-12 * scale
        } else {
            damping * 10.0
        };
    }
    Err(Error::Numerical("Newton system could not be factorized".into()))
}

/// Logistic regression at a fixed penalty.
pub fn fit_logistic(
    features: &DMatrix<f64>,
    labels: &[bool],
    alpha: f64,
    opts: &LogisticOptions,
) -> Result<LinearHead> {
    let fit = logistic_newton(features, labels, alpha, opts)?;
    Ok(LinearHead {
        kind: HeadKind::Logistic,
        weights: fit.weights.as_slice().to_vec(),
        bias: fit.bias,
        chosen_alpha: alpha,
    })
}

/// Fold index per observation, stratified by label.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows)
}

/// L2-penalized logistic regression. The penalty is chosen by stratified
/// `opts.folds`-fold CV on balanced accuracy (ties go to the larger
/// penalty), then the model is refit on all data.
pub fn fit_logistic_l2(
    features: &DMatrix<f64>,
    labels: &[bool],
    grid: &RegularizationGrid,
    opts: &LogisticOptions,
) -> Result<LinearHead> {
    check_xy(features, labels.len())?;
    let positives = labels.iter().filter(|&&l| l).count();
    let minority = positives.min(labels.len() - positives);
    if minority == 0 {
        return Err(Error::Contract("logistic regression needs both classes".into()));
    }
    let alphas = grid.values();
    let folds = opts.folds.min(minority);
    let alpha = if alphas.len() == 1 {
        alphas[0]
    } else if folds < 2 {
        // too few minority samples to cross-validate
        *alphas.last().expect("grid is nonempty")
    } else {
        let assignment = stratified_folds(labels, folds, opts.seed);
        let mut best = (f64::NEG_INFINITY, alphas[0]);
        for &alpha in alphas {
            let mut total = 0.0;
            for f in 0..folds {
                let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
                let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
                let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                let head = fit_logistic(&select_rows(features, &train), &train_labels, alpha, opts)?;
                let predicted = head.predict_labels(&select_rows(features, &test))?;
                let truth: Vec<f64> = test.iter().map(|&i| labels[i] as u8 as f64).collect();
                let guess: Vec<f64> = predicted.iter().map(|&l| l as u8 as f64).collect();
                total += balanced_accuracy(&truth, &guess)?;
            }
            let score = total / folds as f64;
            if score >= best.0 {
                best = (score, alpha);
            }
        }
        best.1
    };
    fit_logistic(features, labels, alpha, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn standardizer_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 7.0, 3.0, 7.0]);
        let s = Standardizer::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        assert_eq!(z.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(z.column(1).as_slice(), &[0.0, 0.0]);
        assert_eq!(s.stds()[1], 1e-12);
        assert!(matches!(
            Standardizer::fit(&DMatrix::zeros(1, 3)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn standardizer_training_moments() {
        let x = random_matrix(50, 4, 1) * 3.0;
        let z = Standardizer::fit(&x).unwrap().transform(&x).unwrap();
        for col in z.column_iter() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn default_grid() {
        let g = RegularizationGrid::default();
        assert_eq!(g.values().len(), 25);
        assert_eq!(g.values()[0], 1e-5);
        assert_eq!(g.values()[24], 1e3);
        assert!(g.values().windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(g.values()[3], 1e-4, epsilon = 1e-18);
        assert!(RegularizationGrid::new(vec![]).is_err());
        assert!(RegularizationGrid::new(vec![1.0, 1.0]).is_err());
        assert!(RegularizationGrid::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn ridge_noiseless_line() {
        let n = 100;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / 10.0 - 5.0);
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] + 1.0);
        let head = fit_ridge_gcv(&x, &y, &RegularizationGrid::default()).unwrap();
        assert_abs_diff_eq!(head.weights[0], 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(head.bias, 1.0, epsilon = 1e-3);
        assert_eq!(head.chosen_alpha, 1e-5);
        assert_eq!(head.kind, HeadKind::Ridge);
    }

    #[test]
    fn ridge_normal_equations() {
        let x = random_matrix(30, 6, 2);
        let y = DVector::from_fn(30, |i, _| x[(i, 0)] - 0.5 * x[(i, 3)] + 0.1 * (i as f64).sin());
        for alpha in [1e-3, 0.7, 20.0] {
            let head = fit_ridge(&x, &y, alpha).unwrap();
            let means = DVector::from_iterator(6, x.column_iter().map(|c| c.mean()));
            let mut xc = x.clone();
            for (j, mut c) in xc.column_iter_mut().enumerate() {
                c.add_scalar_mut(-means[j]);
            }
            let yc = y.add_scalar(-y.mean());
            let b = DVector::from_column_slice(&head.weights);
            let lhs = (xc.transpose() * &xc + DMatrix::identity(6, 6) * alpha) * &b;
            let rhs = xc.transpose() * yc;
            assert!((lhs - &rhs).norm() / rhs.norm() < 1e-8);
        }
    }

    #[test]
    fn ridge_constant_features_predict_mean() {
        let x = DMatrix::zeros(10, 3);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let head = fit_ridge_gcv(&x, &y, &RegularizationGrid::default()).unwrap();
        assert!(head.weights.iter().all(|&w| w == 0.0));
        assert_abs_diff_eq!(head.bias, 4.5, epsilon = 1e-12);
    }

    #[test]
    fn predict_fixtures() {
        let head = LinearHead {
            kind: HeadKind::Ridge,
            weights: vec![1.0, -1.0],
            bias: 0.0,
            chosen_alpha: 1.0,
        };
        let v = DMatrix::from_row_slice(1, 2, &[3.0, 1.0]);
        assert_eq!(head.decision_function(&v).unwrap()[0], 2.0);
        assert!(head.predict_proba(&v).is_err());
        assert!(matches!(
            head.decision_function(&DMatrix::zeros(1, 3)),
            Err(Error::Shape(_))
        ));

        let zero = LinearHead {
            kind: HeadKind::Logistic,
            weights: vec![0.0, 0.0],
            bias: 0.3,
            chosen_alpha: 1.0,
        };
        assert_eq!(zero.decision_function(&v).unwrap()[0], 0.3);
        assert_abs_diff_eq!(zero.predict_proba(&v).unwrap()[0], sigmoid(0.3), epsilon = 1e-15);
        let flat = LinearHead { bias: 0.0, ..zero };
        assert_eq!(flat.predict_proba(&v).unwrap()[0], 0.5);
        assert_eq!(flat.predict_labels(&v).unwrap(), vec![false]);
    }

    fn separable_1d() -> (DMatrix<f64>, Vec<bool>) {
        let xs = [-3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
        let labels = xs.iter().map(|&v| v > 0.0).collect();
        (x, labels)
    }

    #[test]
    fn logistic_separable_and_shrinkage() {
        let (x, labels) = separable_1d();
        let head = fit_logistic_l2(&x, &labels, &RegularizationGrid::default(), &LogisticOptions::default()).unwrap();
        assert_eq!(head.predict_labels(&x).unwrap(), labels);
        let opts = LogisticOptions::default();
        let mut prev = f64::INFINITY;
        for alpha in [1e-3, 1e-1, 1.0, 10.0, 100.0] {
            let w = fit_logistic(&x, &labels, alpha, &opts).unwrap().weights[0].abs();
            assert!(w < prev, "weight {w} at alpha {alpha} not below {prev}");
            prev = w;
        }
    }

    #[test]
    fn logistic_symmetry_negates_weights() {
        let x = random_matrix(40, 3, 5);
        let labels: Vec<bool> = (0..40).map(|i| x[(i, 0)] + 0.5 * x[(i, 1)] + 0.3 * (i as f64).cos() > 0.0).collect();
        let opts = LogisticOptions::default();
        let a = fit_logistic(&x, &labels, 0.5, &opts).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let b = fit_logistic(&(-&x), &flipped, 0.5, &opts).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert_abs_diff_eq!(*wa, *wb, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(a.bias, -b.bias, epsilon = 1e-9);
    }

    #[test]
    fn logistic_losses_are_monotone() {
        let x = random_matrix(60, 4, 9);
        let labels: Vec<bool> = (0..60).map(|i| x[(i, 2)] - x[(i, 0)] > 0.2).collect();
        let fit = logistic_newton(&x, &labels, 1e-3, &LogisticOptions::default()).unwrap();
        assert!(fit.gradient_norm <= 1e-8);
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn logistic_single_class_rejected() {
        let x = random_matrix(6, 2, 3);
        let labels = vec![true; 6];
        assert!(matches!(
            fit_logistic_l2(&x, &labels, &RegularizationGrid::default(), &LogisticOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn logistic_reports_non_convergence() {
        let (x, labels) = separable_1d();
        let opts = LogisticOptions {
            max_iter: 1,
            ..LogisticOptions::default()
        };
        assert!(matches!(
            fit_logistic(&x, &labels, 1e-5, &opts),
            Err(Error::Convergence { .. })
        ));
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<bool> = (0..23).map(|i| i % 3 == 0).collect();
        let a = stratified_folds(&labels, 5, 11);
        assert_eq!(a, stratified_folds(&labels, 5, 11));
        for f in 0..5 {
            let pos = (0..23).filter(|&i| a[i] == f && labels[i]).count();
            assert!((1..=2).contains(&pos));
        }
    }
}
