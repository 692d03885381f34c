//! Symmetric-matrix primitives.
//!
//! Eigendecompositions, (pseudo)inverse square roots, nullspace projectors,
//! spectral summaries and the shrinkage covariance estimator. Everything here
//! is a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default cutoff below which eigenvalues (relative to the largest) count as zero.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    /// Orthonormal columns; each flipped so its largest-magnitude entry is positive.
    pub vectors: Mat,
}

impl SymEig {
    pub fn reconstruct(&self) -> Mat {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..d {
            let v = self.values[j];
            scaled.column_mut(j).scale_mut(v);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    fn largest(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[0]
        }
    }

    /// Build `U f(Λ) Uᵀ`, sending eigenvalues at or below the cutoff to `zero`.
    fn map(&self, rel_tol: f64, f: impl Fn(f64) -> f64, zero: f64) -> Mat {
        let d = self.values.len();
        let cutoff = rel_tol * self.largest().max(0.0);
        let mut scaled = self.vectors.clone();
        for j in 0..d {
            let lam = self.values[j];
            let g = if lam > cutoff { f(lam) } else { zero };
            scaled.column_mut(j).scale_mut(g);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub effective_rank: f64,
    /// Smallest gap between consecutive sorted eigenvalues; 0 when d = 1.
    pub eigengap: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn check_symmetric(s: &Mat) -> Result<()> {
    if !s.is_square() {
        return Err(DareError::DimMismatch(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let asym = (s - s.transpose()).norm();
    let tol = SYM_TOL * s.norm().max(1.0);
    if !(asym <= tol) {
        return Err(DareError::NotSymmetric { asym, tol });
    }
    Ok(())
}

pub fn sym_eig(s: &Mat) -> Result<SymEig> {
    check_symmetric(s)?;
    let d = s.nrows();
    if d == 0 {
        return Ok(SymEig {
            values: Vector::zeros(0),
            vectors: Mat::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = Vector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(d, d);
    for (j, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let mut best = 0;
        for r in 1..d {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(j, &col);
    }
    Ok(SymEig { values, vectors })
}

fn psd_eig(s: &Mat) -> Result<SymEig> {
    let eig = sym_eig(s)?;
    if let (Some(&max), Some(&min)) = (eig.values.iter().next(), eig.values.iter().next_back()) {
        if min < -PSD_TOL * max.abs().max(f64::MIN_POSITIVE) && min < 0.0 {
            return Err(DareError::NotPsd {
                min_eig: min,
                max_eig: max,
            });
        }
    }
    Ok(eig)
}

pub fn check_psd(s: &Mat) -> Result<()> {
    psd_eig(s).map(|_| ())
}

/// Pseudoinverse square root: eigenvalues at or below `rel_tol·λ_max` map to zero.
pub fn inv_sqrt_psd(s: &Mat, rel_tol: f64) -> Result<Mat> {
    Ok(psd_eig(s)?.map(rel_tol, |l| 1.0 / l.sqrt(), 0.0))
}

pub fn sqrt_psd(s: &Mat) -> Result<Mat> {
    Ok(psd_eig(s)?.map(0.0, f64::sqrt, 0.0))
}

/// Orthogonal projector onto range(S).
pub fn range_projector(s: &Mat, rel_tol: f64) -> Result<Mat> {
    Ok(psd_eig(s)?.map(rel_tol, |_| 1.0, 0.0))
}

/// Orthonormal basis of the column space of `b` (d×E), via SVD.
pub fn column_space_basis(b: &Mat, rel_tol: f64) -> Mat {
    let d = b.nrows();
    if b.ncols() == 0 || d == 0 {
        return Mat::zeros(d, 0);
    }
    let svd = SVD::new(b.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Mat::zeros(d, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * smax)
        .collect();
    let mut basis = Mat::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    basis
}

/// `I − BB†`: projector onto the orthogonal complement of the columns of `b`.
pub fn nullspace_projector(b: &Mat) -> Mat {
    let d = b.nrows();
    let u = column_space_basis(b, DEFAULT_REL_TOL);
    symmetrize(&(Mat::identity(d, d) - &u * u.transpose()))
}

/// Orthonormal basis of range(P) for a projector, taken from its eigenvectors.
pub fn projector_basis(p: &Mat) -> Result<(Mat, Mat)> {
    let eig = sym_eig(p)?;
    let d = p.nrows();
    let r = eig.values.iter().filter(|&&v| v > 0.5).count();
    let inside = eig.vectors.columns(0, r).into_owned();
    let outside = eig.vectors.columns(r, d - r).into_owned();
    Ok((inside, outside))
}

pub fn spectral_summary(s: &Mat) -> Result<SpectralSummary> {
    let eig = psd_eig(s)?;
    let d = eig.values.len();
    let lambda_max = if d == 0 { 0.0 } else { eig.values[0] };
    if !(lambda_max > 0.0) {
        return Err(DareError::ZeroMatrix);
    }
    let cutoff = DEFAULT_REL_TOL * lambda_max;
    let trace: f64 = eig.values.iter().filter(|&&v| v > cutoff).sum();
    let eigengap = (1..d)
        .map(|i| eig.values[i - 1] - eig.values[i])
        .fold(f64::INFINITY, f64::min);
    Ok(SpectralSummary {
        eigenvalues: eig.values.iter().copied().collect(),
        effective_rank: trace / lambda_max,
        eigengap: if d > 1 { eigengap.max(0.0) } else { 0.0 },
        lambda_max,
        lambda_min: eig.values[d - 1],
    })
}

pub fn column_means(x: &Mat) -> Vector {
    let n = x.nrows();
    let mut mu = Vector::zeros(x.ncols());
    for j in 0..x.ncols() {
        mu[j] = x.column(j).sum() / n as f64;
    }
    mu
}

/// Subtract `mu` from every row.
pub fn center_rows(x: &Mat, mu: &Vector) -> Mat {
    let mut xc = x.clone();
    for j in 0..x.ncols() {
        let m = mu[j];
        xc.column_mut(j).add_scalar_mut(-m);
    }
    xc
}

/// Sample mean and `(1−ρ)·(1/n)Σ(x−μ)(x−μ)ᵀ + ρI`.
pub fn shrink_cov(samples: &Mat, shrinkage_weight: f64) -> Result<(Vector, Mat)> {
    let n = samples.nrows();
    if n == 0 {
        return Err(DareError::Empty("shrink_cov needs at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&shrinkage_weight) {
        return Err(DareError::InvalidArgument(format!(
            "shrinkage weight {shrinkage_weight} outside [0, 1]"
        )));
    }
    let d = samples.ncols();
    let mu = column_means(samples);
    let xc = center_rows(samples, &mu);
    let sample_cov = xc.tr_mul(&xc) / n as f64;
    let cov = symmetrize(&sample_cov) * (1.0 - shrinkage_weight)
        + Mat::identity(d, d) * shrinkage_weight;
    Ok((mu, cov))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}
