//! Spectral primitives on symmetric positive semidefinite matrices:
//! square root, smallest strictly positive eigenvalue, the square-root
//! perturbation inequality, and the exact Gaussian W2 (Bures) distance.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative tolerance below which negative eigenvalues count as round-off.
pub const TOL_PSD: f64 = 1e-10;

/// Relative cutoff separating zero from strictly positive eigenvalues.
pub const LAMBDA_PLUS_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Columns are the matching orthonormal eigenvectors.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

/// Symmetrize ((M + Mᵀ)/2), guarding against upstream entrywise accumulation.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn decompose(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn max_eigenvalue_magnitude(dec: &SpectralDecomposition) -> f64 {
    dec.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Symmetric PSD square root via the spectral theorem.
///
/// Negative eigenvalues within `TOL_PSD`·λ_max are zeroed as round-off dust;
/// anything more negative is an error, never silently repaired.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dec = decompose(m)?;
    let lam_max = max_eigenvalue_magnitude(&dec);
    let floor = -TOL_PSD * lam_max;
    let mut vals = dec.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            return Err(Error::NotPsd(format!(
                "eigenvalue {v} below tolerance {floor}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    Ok(&dec.eigenvectors * d * dec.eigenvectors.transpose())
}

/// Smallest strictly positive eigenvalue, with positivity decided relative
/// to λ_max. Errors when every eigenvalue sits below the cutoff.
pub fn lambda_plus(m: &DMatrix<f64>, rel_tol: f64) -> Result<f64> {
    let dec = decompose(m)?;
    let lam_max = max_eigenvalue_magnitude(&dec);
    let cutoff = rel_tol * lam_max;
    dec.eigenvalues
        .iter()
        .copied()
        .filter(|&v| v > cutoff)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        })
        .ok_or_else(|| {
            Error::Numeric("no strictly positive eigenvalue above cutoff".into())
        })
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// The square-root perturbation inequality:
/// lhs = ‖√A − √B‖_F, rhs = ‖A − B‖_F / √λ_min(A).
///
/// When A is singular the right side is reported as +∞: the inequality
/// degenerates and carries no information.
pub fn sqrt_perturbation_bound(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape("matrix dimensions differ".into()));
    }
    let sa = sqrt_psd(a)?;
    let sb = sqrt_psd(b)?;
    let lhs = frobenius(&(&sa - &sb));
    let dec = decompose(a)?;
    let lam_min = dec.eigenvalues[dec.eigenvalues.len() - 1];
    let lam_max = max_eigenvalue_magnitude(&dec);
    let rhs = if lam_min <= LAMBDA_PLUS_REL_TOL * lam_max {
        f64::INFINITY
    } else {
        frobenius(&(a - b)) / lam_min.sqrt()
    };
    Ok((lhs, rhs))
}

/// Exact W2 distance between centred Gaussians with covariances A and B:
/// √(tr A + tr B − 2 tr √(√A · B · √A)), clamped at 0 against round-off.
pub fn bures_w2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape("matrix dimensions differ".into()));
    }
    let sa = sqrt_psd(a)?;
    let inner = &sa * b * &sa;
    let cross = sqrt_psd(&inner)?;
    let val = a.trace() + b.trace() - 2.0 * cross.trace();
    Ok(val.max(0.0).sqrt())
}

/// Kronecker product helper (Id_n ⊗ A and friends).
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
