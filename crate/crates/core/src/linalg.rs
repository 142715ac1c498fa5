//! Small dense helpers shared by the graph, sequence and metric modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the matrices in this
//! crate are at most a few hundred rows, so dense factorizations are used
//! throughout.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid_input, Result};

/// Dense real matrix used for combination matrices and stacked network blocks.
pub type Matrix = DMatrix<f64>;

pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

/// `(1/k) 1 1ᵀ`.
pub fn averaging_matrix(k: usize) -> Matrix {
    Matrix::from_element(k, k, 1.0 / k as f64)
}

/// `I − (1/k) 1 1ᵀ`, the projector onto the disagreement subspace.
pub fn centering_projector(k: usize) -> Matrix {
    Matrix::identity(k, k) - averaging_matrix(k)
}

pub fn is_square(a: &Matrix) -> bool {
    a.nrows() == a.ncols()
}

pub fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn all_finite(a: &Matrix) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub(crate) fn ensure_symmetric(a: &Matrix) -> Result<()> {
    if !is_square(a) {
        return Err(invalid_input(format!(
            "matrix is not square: {} x {}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(invalid_input(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, sorted descending. The sort is stable
/// so ties keep the solver's order.
pub fn symmetric_eigenvalues_desc(a: &Matrix) -> Result<Vec<f64>> {
    ensure_symmetric(a)?;
    let eig = SymmetricEigen::new(a.clone());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Spectral radius of a symmetric matrix, or of a general one via its
/// complex eigenvalues.
pub fn spectral_radius(a: &Matrix) -> f64 {
    if max_asymmetry(a) <= SYMMETRY_TOL {
        let eig = SymmetricEigen::new(a.clone());
        eig.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        a.complex_eigenvalues()
            .iter()
            .fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// `A_n ⋯ A_2 A_1`: the first element is applied first.
pub fn ordered_product<'a, I>(k: usize, factors: I) -> Matrix
where
    I: IntoIterator<Item = &'a Matrix>,
{
    factors
        .into_iter()
        .fold(Matrix::identity(k, k), |acc, a| a * acc)
}
