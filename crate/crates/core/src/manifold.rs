//! Geometry of the manifold of symmetric positive definite matrices.
//!
//! Everything here works with the affine-invariant metric: matrix functions
//! through the symmetric eigendecomposition, the Karcher (geometric) mean,
//! the tangent-space embedding at a reference point and its inverse, the
//! geodesic distance and the generalized symmetric-definite eigenproblem.
//!
//! The half-vectorization [`upper`] walks the upper triangle row by row
//! (row `i`, columns `j >= i`) and weights off-diagonal entries by `sqrt(2)`,
//! so the Euclidean norm of the vector equals the Frobenius norm of the
//! matrix.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 10_000;

/// A real symmetric matrix, not necessarily definite.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates squareness and symmetry (relative tolerance `1e-10` of the
    /// largest absolute entry) and stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        let scale = m.amax();
        let asymmetry = (&m - m.transpose()).amax();
        if asymmetry > SYMMETRY_RTOL * scale {
            return Err(Error::NotSymmetric { asymmetry, scale });
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its transpose. The caller guarantees `m` is square.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        let t = m.transpose();
        SymmetricMatrix((m + t) * 0.5)
    }

    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Row-major constructor, convenient for fixtures and file formats.
    pub fn from_row_slice(dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} values for a {dim}x{dim} matrix, got {}",
                dim * dim,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `W M Wᵀ` for any conformable `W`.
    pub fn congruence(&self, w: &DMatrix<f64>) -> Result<SymmetricMatrix> {
        if w.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "congruence needs {} columns, got {}",
                self.dim(),
                w.ncols()
            )));
        }
        Ok(Self::symmetrized(w * &self.0 * w.transpose()))
    }
}

/// A symmetric positive definite matrix. Definiteness is checked when the
/// value is built; no eigenvalue clamping happens anywhere in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(SymmetricMatrix);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_symmetric(SymmetricMatrix::new(m)?)
    }

    pub fn from_symmetric(s: SymmetricMatrix) -> Result<Self> {
        let eig = sym_eig(&s)?;
        let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(SpdMatrix(s))
    }

    /// Wraps a matrix that is positive definite by construction (products
    /// of definite factors, exponentials, ...).
    pub(crate) fn from_symmetric_unchecked(s: SymmetricMatrix) -> Self {
        SpdMatrix(s)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(SymmetricMatrix::identity(dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(&bad) = diag.iter().find(|&&d| !(d > 0.0)) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: bad,
            });
        }
        Ok(SpdMatrix(SymmetricMatrix::from_diagonal(diag)))
    }

    pub fn from_row_slice(dim: usize, values: &[f64]) -> Result<Self> {
        Self::from_symmetric(SymmetricMatrix::from_row_slice(dim, values)?)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.0.as_matrix()
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.0
    }

    pub fn into_symmetric(self) -> SymmetricMatrix {
        self.0
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        spd_power(self, -1.0)
    }
}

/// Eigendecomposition with eigenvalues sorted in descending order and the
/// eigenvectors stored as the matching columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&l| f(l)));
        let mut left = self.vectors.clone();
        for (j, s) in scaled.iter().enumerate() {
            left.column_mut(j).scale_mut(*s);
        }
        SymmetricMatrix::symmetrized(left * self.vectors.transpose())
    }

    fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn require_positive(&self) -> Result<()> {
        let min = self.min_value();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            })
        }
    }
}

/// Symmetric eigendecomposition, eigenvalues descending. Ties keep the order
/// produced by the solver, so vectors inside a repeated eigenspace are an
/// arbitrary orthonormal basis.
pub fn sym_eig(m: &SymmetricMatrix) -> Result<SymEigen> {
    let dim = m.dim();
    let raw = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (dim {dim}, max |entry| {:.3e}, frobenius {:.3e})",
                m.as_matrix().amax(),
                m.as_matrix().norm()
            ))
        })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));
    let values = DVector::from_iterator(dim, order.iter().map(|&i| raw.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &raw.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// `C^exponent` through the eigendecomposition.
pub fn spd_power(c: &SpdMatrix, exponent: f64) -> Result<SpdMatrix> {
    if exponent == 0.0 {
        return Ok(SpdMatrix::identity(c.dim()));
    }
    let eig = sym_eig(c.as_symmetric())?;
    eig.require_positive()?;
    Ok(SpdMatrix::from_symmetric_unchecked(
        eig.map(|l| l.powf(exponent)),
    ))
}

pub fn spd_log(c: &SpdMatrix) -> Result<SymmetricMatrix> {
    let eig = sym_eig(c.as_symmetric())?;
    eig.require_positive()?;
    Ok(eig.map(f64::ln))
}

pub fn spd_exp(m: &SymmetricMatrix) -> Result<SpdMatrix> {
    let eig = sym_eig(m)?;
    Ok(SpdMatrix::from_symmetric_unchecked(eig.map(f64::exp)))
}

/// Number of entries in the half-vectorization of a `dim x dim` matrix.
pub fn tangent_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Inverse of [`tangent_len`]; `None` when `len` is not triangular.
pub fn dim_from_tangent_len(len: usize) -> Option<usize> {
    let approx = (((8 * len + 1) as f64).sqrt() - 1.0) / 2.0;
    let p = approx.round() as usize;
    (tangent_len(p) == len).then_some(p)
}

/// Half-vectorization with `sqrt(2)`-weighted off-diagonal entries.
pub fn upper(m: &SymmetricMatrix) -> DVector<f64> {
    let p = m.dim();
    let a = m.as_matrix();
    let mut out = Vec::with_capacity(tangent_len(p));
    for i in 0..p {
        out.push(a[(i, i)]);
        for j in i + 1..p {
            out.push(SQRT_2 * a[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Exact inverse of [`upper`].
pub fn upper_inv(v: &[f64]) -> Result<SymmetricMatrix> {
    let p = dim_from_tangent_len(v.len()).ok_or_else(|| {
        Error::Shape(format!("length {} is not of the form P(P+1)/2", v.len()))
    })?;
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        m[(i, i)] = v[k];
        k += 1;
        for j in i + 1..p {
            let x = v[k] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    Ok(SymmetricMatrix(m))
}

/// Identifies the reference point a tangent vector was computed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReferenceId(pub u64);

impl ReferenceId {
    /// FNV-1a over the bit patterns of the entries.
    pub fn of(m: &SpdMatrix) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in m.as_matrix().iter() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        ReferenceId(h)
    }
}

/// A point of the tangent space in half-vectorized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    dim: usize,
    values: DVector<f64>,
    reference: Option<ReferenceId>,
}

impl TangentVector {
    /// A tangent vector not tied to a particular base point.
    pub fn new(values: DVector<f64>) -> Result<Self> {
        let dim = dim_from_tangent_len(values.len()).ok_or_else(|| {
            Error::Shape(format!(
                "length {} is not of the form P(P+1)/2",
                values.len()
            ))
        })?;
        Ok(TangentVector {
            dim,
            values,
            reference: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn reference(&self) -> Option<ReferenceId> {
        self.reference
    }
}

/// Tangent space at a fixed reference point, with `ref^{±1/2}` cached.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    reference: SpdMatrix,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    id: ReferenceId,
}

impl TangentSpace {
    pub fn new(reference: SpdMatrix) -> Result<Self> {
        let eig = sym_eig(reference.as_symmetric())?;
        eig.require_positive()?;
        let sqrt = eig.map(f64::sqrt).into_inner();
        let inv_sqrt = eig.map(|l| 1.0 / l.sqrt()).into_inner();
        let id = ReferenceId::of(&reference);
        Ok(TangentSpace {
            reference,
            sqrt,
            inv_sqrt,
            id,
        })
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.reference
    }

    pub fn id(&self) -> ReferenceId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::Shape(format!(
                "reference is {0}x{0}, argument is {1}x{1}",
                self.dim(),
                dim
            )));
        }
        Ok(())
    }

    /// `ref^{-1/2} C ref^{-1/2}`.
    pub fn whiten(&self, c: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        self.check_dim(c.dim())?;
        Ok(SymmetricMatrix::symmetrized(
            &self.inv_sqrt * c.as_matrix() * &self.inv_sqrt,
        ))
    }

    /// `log(ref^{-1/2} C ref^{-1/2})`, the symmetric-matrix form of the
    /// embedding.
    pub fn log_map(&self, c: &SpdMatrix) -> Result<SymmetricMatrix> {
        let w = self.whiten(c.as_symmetric())?;
        let eig = sym_eig(&w)?;
        eig.require_positive()?;
        Ok(eig.map(f64::ln))
    }

    /// `ref^{1/2} exp(S) ref^{1/2}`.
    pub fn exp_map(&self, s: &SymmetricMatrix) -> Result<SpdMatrix> {
        self.check_dim(s.dim())?;
        let e = spd_exp(s)?;
        Ok(SpdMatrix::from_symmetric_unchecked(
            SymmetricMatrix::symmetrized(&self.sqrt * e.as_matrix() * &self.sqrt),
        ))
    }

    pub fn project(&self, c: &SpdMatrix) -> Result<TangentVector> {
        let values = upper(&self.log_map(c)?);
        Ok(TangentVector {
            dim: self.dim(),
            values,
            reference: Some(self.id),
        })
    }

    /// Inverse of [`TangentSpace::project`]. Vectors projected at a
    /// different reference are rejected.
    pub fn unproject(&self, v: &TangentVector) -> Result<SpdMatrix> {
        self.check_dim(v.dim())?;
        if let Some(r) = v.reference {
            if r != self.id {
                return Err(Error::Contract(
                    "tangent vector belongs to a different reference point".into(),
                ));
            }
        }
        self.exp_map(&upper_inv(v.values.as_slice())?)
    }
}

pub fn tangent_project(c: &SpdMatrix, reference: &SpdMatrix) -> Result<TangentVector> {
    TangentSpace::new(reference.clone())?.project(c)
}

pub fn tangent_unproject(v: &TangentVector, reference: &SpdMatrix) -> Result<SpdMatrix> {
    TangentSpace::new(reference.clone())?.unproject(v)
}

/// Affine-invariant distance `‖log(A^{-1/2} B A^{-1/2})‖_F`.
pub fn geodesic_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let ts = TangentSpace::new(a.clone())?;
    let w = ts.whiten(b.as_symmetric())?;
    let eig = sym_eig(&w)?;
    eig.require_positive()?;
    Ok(eig.values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Solves `A v = λ B v` with `Vᵀ B V = I`, eigenvalues descending, by
/// whitening with `B^{-1/2}`.
pub fn gen_eig(a: &SymmetricMatrix, b: &SpdMatrix) -> Result<SymEigen> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "generalized eigenproblem with {0}x{0} and {1}x{1}",
            a.dim(),
            b.dim()
        )));
    }
    let ts = TangentSpace::new(b.clone())?;
    let eig = sym_eig(&ts.whiten(a)?)?;
    Ok(SymEigen {
        values: eig.values,
        vectors: ts.inv_sqrt() * eig.vectors,
    })
}

pub fn arithmetic_mean<'a, I>(cs: I) -> Result<SymmetricMatrix>
where
    I: IntoIterator<Item = &'a SymmetricMatrix>,
{
    let mut iter = cs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InsufficientData("mean of an empty set".into()))?;
    let mut sum = first.as_matrix().clone();
    let mut n = 1usize;
    for c in iter {
        if c.dim() != first.dim() {
            return Err(Error::Shape("matrices of different dimensions".into()));
        }
        sum += c.as_matrix();
        n += 1;
    }
    Ok(SymmetricMatrix::symmetrized(sum / n as f64))
}

/// Stopping rule of the Karcher mean iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanOptions {
    /// Frobenius norm of the mean log-map at which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MeanOptions {
    fn default() -> Self {
        MeanOptions {
            tol: 1e-7,
            max_iter: 50,
        }
    }
}

fn karcher_direction(ts: &TangentSpace, cs: &[SpdMatrix]) -> Result<(SymmetricMatrix, f64)> {
    let p = ts.dim();
    let mut sum = DMatrix::zeros(p, p);
    for c in cs {
        sum += ts.log_map(c)?.as_matrix();
    }
    let mean = SymmetricMatrix::symmetrized(sum / cs.len() as f64);
    let norm = mean.as_matrix().norm();
    Ok((mean, norm))
}

/// Smallest gradient norm that can be resolved in double precision: the
/// log-map of `C_i` loses about `ε · cond(C_i)` in its smallest log-eigenvalue.
fn precision_floor(cs: &[SpdMatrix]) -> Result<f64> {
    let mut worst = 1.0f64;
    for c in cs {
        let eig = sym_eig(c.as_symmetric())?;
        worst = worst.max(eig.values[0] / eig.values[eig.values.len() - 1]);
    }
    Ok(64.0 * f64::EPSILON * worst)
}

/// Geometric (Karcher) mean under the affine-invariant metric.
///
/// Fixed-point iteration `C ← C^{1/2} exp(t · mean_i log(C^{-1/2} C_i C^{-1/2})) C^{1/2}`
/// started at the arithmetic mean. Each iteration tries `t = 1` and halves
/// `t` while the step would increase the gradient norm. For badly
/// conditioned inputs the tolerance is raised to the precision floor
/// `64 ε max_i cond(C_i)`, below which the gradient is rounding noise.
pub fn geometric_mean(cs: &[SpdMatrix], opts: &MeanOptions) -> Result<SpdMatrix> {
    let first = cs
        .first()
        .ok_or_else(|| Error::InsufficientData("geometric mean of an empty set".into()))?;
    if cs.iter().any(|c| c.dim() != first.dim()) {
        return Err(Error::Shape("matrices of different dimensions".into()));
    }
    if cs.len() == 1 {
        return Ok(first.clone());
    }
    let init = arithmetic_mean(cs.iter().map(SpdMatrix::as_symmetric))?;
    let mut ts = TangentSpace::new(SpdMatrix::from_symmetric_unchecked(init))?;
    let tol = opts.tol.max(precision_floor(cs)?);
    let (mut direction, mut norm) = karcher_direction(&ts, cs)?;
    for iter in 0..=opts.max_iter {
        if norm <= tol {
            return Ok(ts.reference.clone());
        }
        if iter == opts.max_iter {
            break;
        }
        let mut step = 1.0;
        let mut halvings = 0;
        loop {
            let scaled = SymmetricMatrix::symmetrized(direction.as_matrix() * step);
            let candidate = TangentSpace::new(ts.exp_map(&scaled)?)?;
            let (next_direction, next_norm) = karcher_direction(&candidate, cs)?;
            if next_norm <= norm || halvings >= 30 {
                ts = candidate;
                direction = next_direction;
                norm = next_norm;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        gradient_norm: norm,
    })
}

/// Relative Frobenius error `‖a − b‖_F / ‖b‖_F` (absolute when `b = 0`).
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.norm();
    let diff = (a - b).norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
