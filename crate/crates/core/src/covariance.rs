//! Covariance features: sample covariance of a multichannel window, OAS
//! shrinkage toward a scaled identity and PCA-based rank reduction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::{arithmetic_mean, sym_eig, SpdMatrix, SymmetricMatrix};

/// `P x T` block of samples, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWindow(DMatrix<f64>);

impl MultichannelWindow {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InsufficientData("window has no samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("window has non-finite samples".into()));
        }
        Ok(MultichannelWindow(values))
    }

    pub fn channels(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Subtracts each channel's mean.
    pub fn centered(&self) -> MultichannelWindow {
        let mut x = self.0.clone();
        for mut row in x.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        MultichannelWindow(x)
    }
}

/// `(1/T) X Xᵀ`. No mean is removed: the signals are taken as zero-mean.
pub fn sample_covariance(x: &MultichannelWindow) -> SymmetricMatrix {
    let m = x.as_matrix();
    SymmetricMatrix::symmetrized(m * m.transpose() / m.ncols() as f64)
}

/// OAS shrinkage coefficient `ρ ∈ [0, 1]`:
///
/// `ρ = min(1, ((1 − 2/P) tr(C²) + tr(C)²) / ((n + 1 − 2/P)(tr(C²) − tr(C)²/P)))`.
///
/// A vanishing denominator (`C` already proportional to the identity) gives
/// `ρ = 1`.
pub fn oas_coefficient(c: &SymmetricMatrix, n_samples: usize) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Contract("OAS needs n_samples >= 1".into()));
    }
    let p = c.dim() as f64;
    let tr = c.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate(format!(
            "OAS target undefined for trace {tr:.3e}"
        )));
    }
    let m = c.as_matrix();
    let tr_sq = m.component_mul(m).sum();
    let num = (1.0 - 2.0 / p) * tr_sq + tr * tr;
    let den = (n_samples as f64 + 1.0 - 2.0 / p) * (tr_sq - tr * tr / p);
    if den <= 0.0 {
        return Ok(1.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// `(1 − ρ) C + ρ (tr(C)/P) I`.
pub fn oas_shrinkage(c: &SymmetricMatrix, n_samples: usize) -> Result<SpdMatrix> {
    let rho = oas_coefficient(c, n_samples)?;
    let p = c.dim();
    let mu = c.trace() / p as f64;
    let shrunk = c.as_matrix() * (1.0 - rho) + DMatrix::identity(p, p) * (rho * mu);
    SpdMatrix::from_symmetric(SymmetricMatrix::symmetrized(shrunk))
}

/// Orthonormal `P x K` projection onto a subspace of channel space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialReducer {
    filters: DMatrix<f64>,
}

impl SpatialReducer {
    pub fn new(filters: DMatrix<f64>) -> Result<Self> {
        let k = filters.ncols();
        let gram = filters.transpose() * &filters;
        let err = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if err > 1e-10 {
            return Err(Error::Contract(format!(
                "reducer columns are not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(SpatialReducer { filters })
    }

    pub fn identity(dim: usize) -> Self {
        SpatialReducer {
            filters: DMatrix::identity(dim, dim),
        }
    }

    pub fn filters(&self) -> &DMatrix<f64> {
        &self.filters
    }

    pub fn input_dim(&self) -> usize {
        self.filters.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.filters.ncols()
    }

    /// `Wᵀ C W`; positive definite input stays positive definite.
    pub fn reduce_spd(&self, c: &SpdMatrix) -> Result<SpdMatrix> {
        apply_reducer(c.as_symmetric(), self).map(SpdMatrix::from_symmetric_unchecked)
    }
}

/// Top-`k` eigenvectors of the arithmetic mean of `cs`. Eigenvalue ties at
/// the cut keep the solver's order, so only the spanned subspace is stable.
pub fn pca_reducer(cs: &[SymmetricMatrix], k: usize) -> Result<SpatialReducer> {
    let mean = arithmetic_mean(cs)?;
    let p = mean.dim();
    if k == 0 || k > p {
        return Err(Error::Shape(format!("components must be in 1..={p}, got {k}")));
    }
    let eig = sym_eig(&mean)?;
    Ok(SpatialReducer {
        filters: eig.vectors.columns(0, k).into_owned(),
    })
}

/// `Wᵀ C W`.
pub fn apply_reducer(c: &SymmetricMatrix, r: &SpatialReducer) -> Result<SymmetricMatrix> {
    if c.dim() != r.input_dim() {
        return Err(Error::Shape(format!(
            "reducer expects {} channels, matrix has {}",
            r.input_dim(),
            c.dim()
        )));
    }
    c.congruence(&r.filters.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::relative_error;
    use approx::assert_abs_diff_eq;

    /// Plain scalar evaluation of the OAS formula, written from the traces.
    fn oas_rho_oracle(trace: f64, trace_of_square: f64, p: f64, n: f64) -> f64 {
        let numerator = (1.0 - 2.0 / p) * trace_of_square + trace * trace;
        let denominator = (n + 1.0 - 2.0 / p) * (trace_of_square - trace * trace / p);
        if denominator <= 0.0 {
            1.0
        } else {
            f64::min(1.0, numerator / denominator)
        }
    }

    #[test]
    fn sample_covariance_examples() {
        let x = MultichannelWindow::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, -2.0])).unwrap();
        assert_eq!(
            sample_covariance(&x).as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])
        );
        let x = MultichannelWindow::new(DMatrix::identity(3, 3)).unwrap();
        assert!(relative_error(sample_covariance(&x).as_matrix(), &(DMatrix::identity(3, 3) / 3.0)) < 1e-15);
        let x = MultichannelWindow::new(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(sample_covariance(&x).as_matrix()[(0, 0)], 12.5);
        assert!(matches!(
            MultichannelWindow::new(DMatrix::zeros(2, 0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn centering_removes_channel_means() {
        let x = MultichannelWindow::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0])).unwrap();
        let c = sample_covariance(&x.centered());
        assert_abs_diff_eq!(c.as_matrix()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(c.as_matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn oas_identity_is_fixed_point() {
        for p in 1..5 {
            for n in [1, 2, 100] {
                let out = oas_shrinkage(&SymmetricMatrix::identity(p), n).unwrap();
                assert!(relative_error(out.as_matrix(), &DMatrix::identity(p, p)) < 1e-15);
            }
        }
    }

    #[test]
    fn oas_rank_one_matches_oracle() {
        let c = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        let rho = oas_coefficient(&c, 2).unwrap();
        assert_abs_diff_eq!(rho, oas_rho_oracle(1.0, 1.0, 2.0, 2.0), epsilon = 1e-15);
        let out = oas_shrinkage(&c, 2).unwrap();
        assert!(sym_eig(out.as_symmetric()).unwrap().values[1] > 0.0);

        // P = 3 rank-one case where the coefficient is strictly inside (0, 1).
        let c = SymmetricMatrix::from_diagonal(&[1.0, 0.0, 0.0]);
        let rho = oas_coefficient(&c, 10).unwrap();
        let expected = oas_rho_oracle(1.0, 1.0, 3.0, 10.0);
        assert!(expected > 0.0 && expected < 1.0);
        assert_abs_diff_eq!(rho, expected, epsilon = 1e-15);
        assert!(sym_eig(oas_shrinkage(&c, 10).unwrap().as_symmetric()).unwrap().values[2] > 0.0);
    }

    #[test]
    fn oas_coefficient_nonincreasing_in_samples() {
        let c = SymmetricMatrix::from_row_slice(3, &[3.0, 1.0, 0.5, 1.0, 2.0, 0.2, 0.5, 0.2, 0.1]).unwrap();
        let m = c.as_matrix();
        let (tr, tr2) = (m.trace(), m.component_mul(m).sum());
        let mut prev = f64::INFINITY;
        for n in 2..=1000 {
            let rho = oas_coefficient(&c, n).unwrap();
            assert_abs_diff_eq!(rho, oas_rho_oracle(tr, tr2, 3.0, n as f64), epsilon = 1e-14);
            assert!(rho <= prev);
            prev = rho;
        }
    }

    #[test]
    fn oas_zero_trace_is_degenerate() {
        assert!(matches!(
            oas_shrinkage(&SymmetricMatrix::zeros(3), 5),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            oas_shrinkage(&SymmetricMatrix::identity(3), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pca_examples() {
        let c = SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        let r = pca_reducer(std::slice::from_ref(&c), 2).unwrap();
        assert_eq!(r.output_dim(), 2);
        // Projection onto the span of W must keep e1, e2 and kill e3.
        let proj = r.filters() * r.filters().transpose();
        assert!(relative_error(&proj, &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]))) < 1e-12);
        let reduced = apply_reducer(&c, &r).unwrap();
        let e = sym_eig(&reduced).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 2.0, epsilon = 1e-12);

        let full = pca_reducer(std::slice::from_ref(&c), 3).unwrap();
        let wtw = full.filters().transpose() * full.filters();
        assert!(relative_error(&wtw, &DMatrix::identity(3, 3)) < 1e-12);
        assert!(matches!(pca_reducer(&[c.clone()], 0), Err(Error::Shape(_))));
        assert!(matches!(pca_reducer(&[c], 4), Err(Error::Shape(_))));
    }

    #[test]
    fn pca_tie_is_deterministic() {
        let c = SymmetricMatrix::from_diagonal(&[2.0, 1.0, 1.0]);
        let a = pca_reducer(std::slice::from_ref(&c), 2).unwrap();
        let b = pca_reducer(std::slice::from_ref(&c), 2).unwrap();
        assert_eq!(a, b);
        // The first column is pinned by the simple top eigenvalue.
        assert_abs_diff_eq!(a.filters()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_reducer_is_noop() {
        let c = SymmetricMatrix::from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let out = apply_reducer(&c, &SpatialReducer::identity(2)).unwrap();
        assert_eq!(out, c);
        assert!(matches!(
            apply_reducer(&c, &SpatialReducer::identity(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reducer_rejects_non_orthonormal() {
        assert!(SpatialReducer::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).is_err());
    }
}
