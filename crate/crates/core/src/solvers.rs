//! Cross-lingual map fitting.
//!
//! Every solver consumes a [`ParallelCorpus`] with source rows `S_A` and
//! target rows `S_B` and returns a `d × d` [`ProjectionMatrix`] `P` such that
//! `S_A · P ≈ S_B`:
//!
//! * [`fit_least_squares`]: unconstrained minimizer of `‖S_A P − S_B‖_F`,
//!   i.e. the normal-equation solution `(S_AᵀS_A)⁻¹ S_AᵀS_B`. The default
//!   route is the SVD pseudo-inverse, which also yields the minimum-norm
//!   solution when `S_A` is rank deficient (`n < d` is common).
//! * [`fit_procrustes`]: the same objective restricted to orthogonal `P`,
//!   solved in closed form as `U Vᵀ` with `U Σ Vᵀ = svd(S_Aᵀ S_B)`.
//! * [`fit_sgd`]: a single linear layer trained by mini-batch SGD on
//!   `(1/2n) ‖S_A W − S_B‖²_F`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, ParallelCorpus, Preprocess};
use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RCOND};

/// Tolerance on `‖PᵀP − I‖_max` for a matrix labelled orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LeastSquares,
    Procrustes,
    Sgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::LeastSquares => "least_squares",
            Method::Procrustes => "procrustes",
            Method::Sgd => "sgd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" | "lsq" => Ok(Method::LeastSquares),
            "procrustes" => Ok(Method::Procrustes),
            "sgd" => Ok(Method::Sgd),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Diagnostics recorded alongside a fitted map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    /// Final value of the method's own objective: residual Frobenius norm for
    /// the closed-form fits, mean-squared error for SGD.
    pub objective: f64,
    /// `‖S_A P − S_B‖_F` on the (preprocessed) training corpus.
    pub residual_frobenius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    #[serde(default)]
    pub preprocess: Preprocess,
}

/// A fitted `d × d` cross-lingual map, applied as `row · P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    data: DMatrix<f64>,
    method: Method,
    pub meta: FitMeta,
}

impl ProjectionMatrix {
    pub fn new(data: DMatrix<f64>, method: Method, meta: FitMeta) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "projection must be square and non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = data.nrows();
            return Err(Error::NonFinite {
                row: idx % d,
                col: idx / d,
            });
        }
        if method == Method::Procrustes {
            let dev = orthogonality_error(&data);
            if dev > ORTHOGONALITY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "procrustes map is not orthogonal (max deviation {dev:.3e})"
                )));
            }
        }
        Ok(Self { data, method, meta })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            data: DMatrix::identity(d, d),
            method: Method::Procrustes,
            meta: FitMeta::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_orthogonal(&self) -> bool {
        orthogonality_error(&self.data) <= ORTHOGONALITY_TOL
    }
}

/// `‖PᵀP − I‖_max`.
pub fn orthogonality_error(p: &DMatrix<f64>) -> f64 {
    (p.tr_mul(p) - DMatrix::identity(p.ncols(), p.ncols())).amax()
}

/// `‖S_A P − S_B‖_F`.
pub fn residual_frobenius(corpus: &ParallelCorpus, p: &DMatrix<f64>) -> f64 {
    (corpus.source().as_matrix() * p - corpus.target().as_matrix()).norm()
}

/// Least-squares backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeastSquaresSolver {
    /// SVD pseudo-inverse with relative cutoff `rcond`.
    Pinv { rcond: f64 },
    /// Cholesky on `S_AᵀS_A + ridge·I`.
    Gram { ridge: f64 },
}

impl Default for LeastSquaresSolver {
    fn default() -> Self {
        LeastSquaresSolver::Pinv {
            rcond: DEFAULT_RCOND,
        }
    }
}

/// Normal-equation fit. `ridge == 0` takes the pseudo-inverse route, a
/// positive ridge switches to the regularized Gram solve.
pub fn fit_least_squares(corpus: &ParallelCorpus, ridge: f64) -> Result<ProjectionMatrix> {
    let solver = if ridge == 0.0 {
        LeastSquaresSolver::default()
    } else {
        LeastSquaresSolver::Gram { ridge }
    };
    fit_least_squares_with(corpus, solver)
}

pub fn fit_least_squares_with(
    corpus: &ParallelCorpus,
    solver: LeastSquaresSolver,
) -> Result<ProjectionMatrix> {
    let a = corpus.source().as_matrix();
    let b = corpus.target().as_matrix();
    let (phi, ridge, label) = match solver {
        LeastSquaresSolver::Pinv { rcond } => (linalg::pinv_solve(a, b, rcond)?, 0.0, "pinv"),
        LeastSquaresSolver::Gram { ridge } => (linalg::gram_solve(a, b, ridge)?, ridge, "gram"),
    };
    let residual = residual_frobenius(corpus, &phi);
    ProjectionMatrix::new(
        phi,
        Method::LeastSquares,
        FitMeta {
            objective: residual,
            residual_frobenius: residual,
            ridge: Some(ridge),
            solver: Some(label.to_owned()),
            ..FitMeta::default()
        },
    )
}

/// Orthogonal Procrustes: `Ψ = U Vᵀ` where `U Σ Vᵀ = svd(S_Aᵀ S_B)`.
pub fn fit_procrustes(corpus: &ParallelCorpus) -> Result<ProjectionMatrix> {
    let cross = corpus
        .source()
        .as_matrix()
        .tr_mul(corpus.target().as_matrix());
    let svd = linalg::svd(&cross)?;
    let psi = &svd.u * &svd.vt;
    let residual = residual_frobenius(corpus, &psi);
    ProjectionMatrix::new(
        psi,
        Method::Procrustes,
        FitMeta {
            objective: residual,
            residual_frobenius: residual,
            solver: Some("svd".to_owned()),
            ..FitMeta::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdInit {
    Zeros,
    Gaussian { sigma: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training stops once the epoch-end MSE drops below this value.
    pub tol: f64,
    pub seed: u64,
    pub init: SgdInit,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: 32,
            tol: 1e-6,
            seed: 0,
            init: SgdInit::Zeros,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if let SgdInit::Gaussian { sigma } = self.init {
            if !sigma.is_finite() || sigma < 0.0 {
                return bad(format!("init sigma must be nonnegative, got {sigma}"));
            }
        }
        Ok(())
    }
}

/// `(1/2n) ‖S_A W − S_B‖²_F`.
pub fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let n = a.nrows() as f64;
    (a * w - b).norm_squared() / (2.0 * n)
}

/// Gradient of the column objective `(1/2n) ‖S_A w − b‖²` with respect to `w`:
/// `(1/n) S_Aᵀ (S_A w − b)`.
pub fn sgd_gradient(
    w_col: &DVector<f64>,
    s_a: &EmbeddingMatrix,
    b_col: &DVector<f64>,
) -> Result<DVector<f64>> {
    let a = s_a.as_matrix();
    if w_col.len() != a.ncols() || b_col.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "weights of length {} and targets of length {} do not fit a {}x{} design",
            w_col.len(),
            b_col.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let residual = a * w_col - b_col;
    Ok(a.tr_mul(&residual) / a.nrows() as f64)
}

/// Trains `W` by mini-batch SGD with per-epoch shuffling.
///
/// Each step updates all `d` columns at once with the batch gradient
/// `(1/|B|) S_Bᵀ(S_B W − T_B)`. After every epoch the full-corpus MSE is
/// evaluated; training stops when it falls below `config.tol`.
pub fn fit_sgd(corpus: &ParallelCorpus, config: &SgdConfig) -> Result<ProjectionMatrix> {
    config.validate()?;
    let a = corpus.source().as_matrix();
    let b = corpus.target().as_matrix();
    let (n, d) = (a.nrows(), a.ncols());
    let mut rng = linalg::seeded_rng(config.seed);

    let mut w = match config.init {
        SgdInit::Zeros => DMatrix::zeros(d, d),
        SgdInit::Identity => DMatrix::identity(d, d),
        SgdInit::Gaussian { sigma } => {
            let normal =
                Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            DMatrix::from_fn(d, d, |_, _| normal.sample(&mut rng))
        }
    };

    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss = mse(a, b, &w);
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = a.select_rows(chunk);
            let yb = b.select_rows(chunk);
            let grad = xb.tr_mul(&(&xb * &w - yb)) / chunk.len() as f64;
            w -= grad * config.learning_rate;
        }
        epochs_run = epoch;
        loss = mse(a, b, &w);
        if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::SgdDiverged { epoch });
        }
        if loss < config.tol {
            break;
        }
    }

    let residual = residual_frobenius(corpus, &w);
    ProjectionMatrix::new(
        w,
        Method::Sgd,
        FitMeta {
            objective: loss,
            residual_frobenius: residual,
            iterations: Some(epochs_run),
            seed: Some(config.seed),
            solver: Some("minibatch_sgd".to_owned()),
            ..FitMeta::default()
        },
    )
}

/// `m · P`.
pub fn apply_projection(proj: &ProjectionMatrix, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.cols() != proj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have dimension {} but the projection is {}x{}",
            m.cols(),
            proj.dim(),
            proj.dim()
        )));
    }
    EmbeddingMatrix::from_matrix(m.as_matrix() * proj.as_matrix())
}

/// Fitting entry point shared by the CLI: preprocesses the corpus, runs the
/// chosen solver and records the preprocessing in the result.
#[derive(Debug, Clone, PartialEq)]
pub enum FitRequest {
    LeastSquares(LeastSquaresSolver),
    Procrustes,
    Sgd(SgdConfig),
}

pub fn fit(
    corpus: &ParallelCorpus,
    request: &FitRequest,
    preprocess: Preprocess,
) -> Result<ProjectionMatrix> {
    let prepared = preprocess.apply_corpus(corpus)?;
    let mut proj = match request {
        FitRequest::LeastSquares(solver) => fit_least_squares_with(&prepared, *solver)?,
        FitRequest::Procrustes => fit_procrustes(&prepared)?,
        FitRequest::Sgd(config) => fit_sgd(&prepared, config)?,
    };
    proj.meta.preprocess = preprocess;
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, random_orthogonal, seeded_rng};
    use proptest::prelude::*;

    fn corpus(a: DMatrix<f64>, b: DMatrix<f64>) -> ParallelCorpus {
        ParallelCorpus::unlabeled(
            EmbeddingMatrix::from_matrix(a).unwrap(),
            EmbeddingMatrix::from_matrix(b).unwrap(),
        )
        .unwrap()
    }

    fn random(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        gaussian_matrix(&mut seeded_rng(seed), r, c)
    }

    /// Row-by-column triple loop, independent of nalgebra's product.
    fn naive_matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), b.ncols());
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn lsq_identity_mapping() {
        let a = random(1, 30, 5);
        let p = fit_least_squares(&corpus(a.clone(), a), 0.0).unwrap();
        assert!((p.as_matrix() - DMatrix::identity(5, 5)).amax() < 1e-12);
        assert!(p.meta.residual_frobenius < 1e-12);
    }

    #[test]
    fn lsq_consistent_system() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        for ridge_path in [
            LeastSquaresSolver::default(),
            LeastSquaresSolver::Gram { ridge: 0.0 },
        ] {
            let p = fit_least_squares_with(&corpus(a.clone(), &a * &m), ridge_path).unwrap();
            assert!((p.as_matrix() - &m).amax() < 1e-12);
        }
    }

    #[test]
    fn lsq_noisy_recovery_matches_pinv_oracle() {
        let a = random(2, 100, 8);
        let m = random(3, 8, 8);
        let noise = random(4, 100, 8) * 0.01;
        let b = &a * &m + noise;
        let c = corpus(a.clone(), b.clone());
        let p = fit_least_squares(&c, 0.0).unwrap();
        assert!((p.as_matrix() - &m).norm() <= 0.1);

        // Explicit pseudo-inverse (SᵀS)⁻¹Sᵀ, built without the SVD route.
        let pinv = (a.transpose() * &a).try_inverse().unwrap() * a.transpose();
        let oracle = pinv * &b;
        let oracle_res = (&a * &oracle - &b).norm();
        assert!((p.meta.residual_frobenius - oracle_res).abs() <= 1e-9);
    }

    #[test]
    fn lsq_ridge_uses_gram_path() {
        let a = random(5, 40, 4);
        let b = random(6, 40, 4);
        let p = fit_least_squares(&corpus(a, b), 0.5).unwrap();
        assert_eq!(p.meta.solver.as_deref(), Some("gram"));
        assert_eq!(p.meta.ridge, Some(0.5));
    }

    #[test]
    fn lsq_underdetermined_is_minimum_norm() {
        // n < d: infinitely many exact fits; pinv picks the smallest.
        let a = random(7, 3, 6);
        let b = random(8, 3, 6);
        let c = corpus(a.clone(), b.clone());
        let p = fit_least_squares(&c, 0.0).unwrap();
        assert!(p.meta.residual_frobenius < 1e-10);
        // Minimum-norm solution lies in the row space of a: Aᵀ(AAᵀ)⁻¹B.
        let oracle = a.transpose() * (&a * a.transpose()).try_inverse().unwrap() * &b;
        assert!((p.as_matrix() - oracle).amax() < 1e-10);
        assert!(matches!(
            fit_least_squares_with(&c, LeastSquaresSolver::Gram { ridge: 0.0 }),
            Err(Error::SingularGram)
        ));
    }

    #[test]
    fn procrustes_recovers_rotation_from_identity_source() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let p = fit_procrustes(&corpus(a, b.clone())).unwrap();
        assert!((p.as_matrix() - b).amax() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_planted_map() {
        let q = random_orthogonal(16, 99);
        let a = random(10, 200, 16);
        let p = fit_procrustes(&corpus(a.clone(), &a * &q)).unwrap();
        assert!((p.as_matrix() - q).amax() <= 1e-6);
        assert!(orthogonality_error(p.as_matrix()) <= 1e-8);
    }

    fn rotation(theta: f64, reflect: bool) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        if reflect {
            DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
        } else {
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
    }

    #[test]
    fn procrustes_beats_brute_force_sweep() {
        let a = random(11, 3, 2);
        let b = random(12, 3, 2);
        let c = corpus(a.clone(), b.clone());
        let psi = fit_procrustes(&c).unwrap();
        let best_closed = psi.meta.residual_frobenius;
        let steps = (std::f64::consts::TAU / 0.001).ceil() as usize;
        let mut best_sweep = f64::INFINITY;
        for k in 0..steps {
            let theta = k as f64 * 0.001;
            for reflect in [false, true] {
                let r = (&a * rotation(theta, reflect) - &b).norm();
                best_sweep = best_sweep.min(r);
            }
        }
        assert!(
            best_closed <= best_sweep + 1e-12,
            "{best_closed} > {best_sweep}"
        );
        assert!(best_sweep - best_closed < 1e-3);
    }

    #[test]
    fn non_orthogonal_procrustes_label_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(ProjectionMatrix::new(m.clone(), Method::Procrustes, FitMeta::default()).is_err());
        assert!(ProjectionMatrix::new(m, Method::LeastSquares, FitMeta::default()).is_ok());
    }

    #[test]
    fn sgd_learns_identity_on_orthonormal_rows() {
        let a = DMatrix::identity(4, 4);
        let c = corpus(a.clone(), a);
        let config = SgdConfig {
            learning_rate: 0.5,
            ..SgdConfig::default()
        };
        let p = fit_sgd(&c, &config).unwrap();
        assert!(p.meta.objective < config.tol);
        assert!(p.meta.iterations.unwrap() < config.epochs);
    }

    #[test]
    fn sgd_matches_closed_form() {
        let a = random(13, 200, 8);
        let m = random(14, 8, 8);
        let c = corpus(a.clone(), &a * &m);
        let lsq = fit_least_squares(&c, 0.0).unwrap();
        let config = SgdConfig {
            tol: 1e-14,
            seed: 3,
            ..SgdConfig::default()
        };
        let w = fit_sgd(&c, &config).unwrap();
        assert!((w.as_matrix() - lsq.as_matrix()).norm() <= 1e-3);
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let a = random(15, 50, 4);
        let b = random(16, 50, 4);
        let c = corpus(a, b);
        let config = SgdConfig {
            epochs: 20,
            batch_size: 7,
            init: SgdInit::Gaussian { sigma: 0.1 },
            seed: 42,
            ..SgdConfig::default()
        };
        let x = fit_sgd(&c, &config).unwrap();
        let y = fit_sgd(&c, &config).unwrap();
        assert_eq!(x, y);
        let z = fit_sgd(&c, &SgdConfig { seed: 43, ..config }).unwrap();
        assert_ne!(x.as_matrix(), z.as_matrix());
    }

    #[test]
    fn sgd_diverges_with_huge_step() {
        let a = random(13, 200, 8);
        let m = random(14, 8, 8);
        let c = corpus(a.clone(), &a * &m);
        let config = SgdConfig {
            learning_rate: 10.0,
            ..SgdConfig::default()
        };
        let err = fit_sgd(&c, &config).unwrap_err();
        assert!(err
            .to_string()
            .starts_with("sgd diverged; reduce learning_rate"));
        assert!(err.is_numerical());
    }

    #[test]
    fn sgd_rejects_bad_config() {
        let a = random(1, 4, 2);
        let c = corpus(a.clone(), a);
        for bad in [
            SgdConfig {
                learning_rate: 0.0,
                ..SgdConfig::default()
            },
            SgdConfig {
                epochs: 0,
                ..SgdConfig::default()
            },
            SgdConfig {
                batch_size: 0,
                ..SgdConfig::default()
            },
            SgdConfig {
                tol: -1.0,
                ..SgdConfig::default()
            },
        ] {
            assert!(matches!(fit_sgd(&c, &bad), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let a = random(17, 30, 5);
        let b = random(18, 30, 5);
        let c = corpus(a.clone(), b.clone());
        let phi = fit_least_squares(&c, 0.0).unwrap();
        for j in 0..5 {
            let g = sgd_gradient(
                &phi.as_matrix().column(j).into_owned(),
                c.source(),
                &b.column(j).into_owned(),
            )
            .unwrap();
            assert!(g.amax() <= 1e-8);
        }
    }

    #[test]
    fn gradient_of_zero_design_is_zero() {
        let a = EmbeddingMatrix::from_matrix(DMatrix::zeros(6, 3)).unwrap();
        let g = sgd_gradient(
            &DVector::from_vec(vec![1.0, -2.0, 3.0]),
            &a,
            &DVector::from_element(6, 4.0),
        )
        .unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn gradient_shape_mismatch() {
        let a = EmbeddingMatrix::from_matrix(DMatrix::zeros(6, 3)).unwrap();
        assert!(sgd_gradient(&DVector::zeros(2), &a, &DVector::zeros(6)).is_err());
        assert!(sgd_gradient(&DVector::zeros(3), &a, &DVector::zeros(5)).is_err());
    }

    /// Column objective `(1/2n)‖S_A w − b‖²`, evaluated directly.
    fn column_loss(a: &DMatrix<f64>, w: &[f64], b: &DVector<f64>) -> f64 {
        let n = a.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let mut pred = 0.0;
            for (k, wk) in w.iter().enumerate() {
                pred += a[(i, k)] * wk;
            }
            total += (pred - b[i]).powi(2);
        }
        total / (2.0 * n as f64)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random(19, 10, 4);
        let b = random(20, 10, 1).column(0).into_owned();
        let w = random(21, 4, 1).column(0).into_owned();
        let g = sgd_gradient(&w, &EmbeddingMatrix::from_matrix(a.clone()).unwrap(), &b).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut plus = w.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (column_loss(&a, &plus, &b) - column_loss(&a, &minus, &b)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5, "component {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn apply_identity_and_rotation() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        assert_eq!(
            apply_projection(&ProjectionMatrix::identity(2), &m).unwrap(),
            m
        );
        let rot =
            ProjectionMatrix::new(rotation(0.3, false), Method::Procrustes, FitMeta::default())
                .unwrap();
        let out = apply_projection(&rot, &m).unwrap();
        for i in 0..2 {
            assert!((out.row(i).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_matches_triple_loop() {
        let m = random(22, 9, 5);
        let p = ProjectionMatrix::new(random(23, 5, 5), Method::LeastSquares, FitMeta::default())
            .unwrap();
        let out = apply_projection(&p, &EmbeddingMatrix::from_matrix(m.clone()).unwrap()).unwrap();
        assert!((out.as_matrix() - naive_matmul(&m, p.as_matrix())).amax() < 1e-12);
    }

    #[test]
    fn apply_dimension_mismatch_names_dims() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let err = apply_projection(&ProjectionMatrix::identity(2), &m).unwrap_err();
        assert!(err.to_string().contains("dimension 3"), "{err}");
        assert!(err.to_string().contains("2x2"), "{err}");
    }

    #[test]
    fn fit_records_preprocessing() {
        let a = random(24, 20, 3);
        let q = random_orthogonal(3, 1);
        let c = corpus(a.clone(), &a * &q);
        let pre = Preprocess {
            center: true,
            unit_norm: false,
        };
        let p = fit(&c, &FitRequest::Procrustes, pre).unwrap();
        assert_eq!(p.meta.preprocess, pre);
        // Centering commutes with a linear map, so the planted map survives.
        assert!((p.as_matrix() - q).amax() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn procrustes_orthogonal_and_never_beats_lsq(
            seed in any::<u64>(),
            n in 1usize..40,
            d in 1usize..10,
        ) {
            let c = corpus(random(seed, n, d), random(seed ^ 0xabc, n, d));
            let psi = fit_procrustes(&c).unwrap();
            let phi = fit_least_squares(&c, 0.0).unwrap();
            prop_assert!(orthogonality_error(psi.as_matrix()) <= 1e-8);
            prop_assert!(psi.meta.residual_frobenius >= phi.meta.residual_frobenius - 1e-9);
        }

        #[test]
        fn exact_recovery(seed in any::<u64>(), d in 1usize..10) {
            let n = 4 * d + 5;
            let a = random(seed, n, d);
            let m = random(seed.wrapping_add(7), d, d);
            let q = random_orthogonal(d, seed);
            let phi = fit_least_squares(&corpus(a.clone(), &a * &m), 0.0).unwrap();
            prop_assert!((phi.as_matrix() - &m).norm() <= 1e-8 * m.norm().max(1.0));
            let psi = fit_procrustes(&corpus(a.clone(), &a * &q)).unwrap();
            prop_assert!((psi.as_matrix() - &q).amax() <= 1e-6);
        }

        #[test]
        fn gradient_matches_fd_on_random_instances(
            seed in any::<u64>(),
            n in 1usize..=20,
            d in 1usize..=8,
        ) {
            let a = random(seed, n, d);
            let b = random(seed ^ 1, n, 1).column(0).into_owned();
            let w = random(seed ^ 2, d, 1).column(0).into_owned();
            let g = sgd_gradient(&w, &EmbeddingMatrix::from_matrix(a.clone()).unwrap(), &b).unwrap();
            let h = 1e-5;
            for k in 0..d {
                let mut plus = w.as_slice().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (column_loss(&a, &plus, &b) - column_loss(&a, &minus, &b)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-5);
            }
        }

        #[test]
        fn orthogonal_projection_preserves_row_norms(seed in any::<u64>(), n in 1usize..20, d in 1usize..12) {
            let m = EmbeddingMatrix::from_matrix(random(seed, n, d)).unwrap();
            let q = ProjectionMatrix::new(random_orthogonal(d, seed), Method::Procrustes, FitMeta::default()).unwrap();
            let out = apply_projection(&q, &m).unwrap();
            for i in 0..n {
                let before = m.row(i).norm();
                let after = out.row(i).norm();
                prop_assert!((before - after).abs() <= 1e-10 * before.max(1e-300));
            }
        }
    }
}
