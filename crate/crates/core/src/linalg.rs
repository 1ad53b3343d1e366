//! Small dense symmetric-matrix helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in `[-CLAMP_TOL, 0)` are treated as rounding noise.
pub const CLAMP_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric PSD square root by eigendecomposition.
///
/// Fails with [`Error::NotSymmetric`] when entries differ from their
/// transpose by more than 1e-10, and with [`Error::Indefinite`] when an
/// eigenvalue is below -1e-10. Smaller negative eigenvalues are clamped to 0.
pub fn sqrt_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::DimensionMismatch {
            context: "square root input",
            expected: sigma.nrows(),
            got: sigma.ncols(),
        });
    }
    let asym = max_asymmetry(sigma);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if sigma.nrows() == 1 {
        let v = sigma[(0, 0)];
        if v < -CLAMP_TOL {
            return Err(Error::Indefinite { min_eigenvalue: v });
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let mut sym = sigma.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -CLAMP_TOL {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut s);
    Ok(s)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        _ => SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .fold(0.0, |acc: f64, l| acc.max(l.abs())),
    }
}
