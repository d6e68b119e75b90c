//! Dense kernels used by the solvers: SVD, pseudo-inverse and Gram (Cholesky)
//! least-squares solves, and seeded random orthogonal matrices.

use nalgebra::{DMatrix, DVector, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used by [`pinv_solve`] unless told otherwise.
pub const DEFAULT_RCOND: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `m = u · diag(sigma) · vt` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * &self.vt
    }
}

/// The canonical generator behind every seeded helper in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the draw order matches the row-major file layout.
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Singular value decomposition with singular values in nonincreasing order.
///
/// Singular vectors are sign-normalized: the largest-magnitude entry of every
/// left singular vector is positive, so the result is deterministic.
pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some((idx, _)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: idx % m.nrows(),
            col: idx / m.nrows(),
        });
    }
    let decomposition = SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::SvdNoConvergence)?;
    let (Some(mut u), Some(mut vt)) = (decomposition.u, decomposition.v_t) else {
        return Err(Error::SvdNoConvergence);
    };
    let sigma = decomposition.singular_values;

    for j in 0..sigma.len() {
        let pivot =
            u.column(j).iter().copied().fold(
                0.0f64,
                |best, x| if x.abs() > best.abs() { x } else { best },
            );
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
    Ok(SvdResult { u, sigma, vt })
}

/// Minimum-norm least-squares solution of `a · X ≈ b` via the SVD pseudo-inverse.
///
/// Singular values at or below `rcond · σ_max` are treated as zero.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if rcond.is_nan() || rcond < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rcond must be nonnegative, got {rcond}"
        )));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let SvdResult { u, sigma, vt } = svd(a)?;
    let cutoff = rcond * sigma.max();
    let inv_sigma = sigma.map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    // X = V · Σ⁺ · Uᵀ · b
    let mut utb = u.transpose() * b;
    for (mut row, inv) in utb.row_iter_mut().zip(inv_sigma.iter()) {
        row *= *inv;
    }
    Ok(vt.transpose() * utb)
}

/// Solves the regularized normal equation `(aᵀa + ridge·I) X = aᵀ b` by Cholesky.
pub fn gram_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ridge must be a finite nonnegative number, got {ridge}"
        )));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let mut gram = a.tr_mul(a);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let rhs = a.tr_mul(b);
    let chol = gram.cholesky().ok_or(Error::SingularGram)?;
    // Cholesky succeeds on some numerically singular matrices; a vanishing
    // pivot still means the solve is meaningless.
    let l = chol.l_dirty();
    let max_pivot = l.diagonal().amax();
    if l.diagonal().iter().any(|p| *p <= max_pivot * 1e-14) {
        return Err(Error::SingularGram);
    }
    let x = chol.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGram);
    }
    Ok(x)
}

/// A `d × d` orthogonal matrix drawn deterministically from `seed`.
///
/// QR of a seeded Gaussian matrix with `R`'s diagonal made positive, which
/// makes the draw Haar-distributed.
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    assert!(d >= 1, "dimension must be at least 1");
    let mut rng = seeded_rng(seed);
    let g = gaussian_matrix(&mut rng, d, d);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
