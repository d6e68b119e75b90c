//! Sentence-embedding containers and mean pooling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let cols = first.len();
    if cols == 0 {
        return Err(Error::EmptyInput);
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} columns, expected {cols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// An `n × d` matrix holding one sentence embedding per row.
///
/// Always non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(DMatrix<f64>);

impl EmbeddingMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        check_finite(&m)?;
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(matrix_from_rows(rows)?)
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }

    /// Row-major copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    /// Subtracts the column means from every row.
    pub fn centered(&self) -> Self {
        let mean = self.0.row_mean();
        let mut m = self.0.clone();
        for mut row in m.row_iter_mut() {
            row -= &mean;
        }
        Self(m)
    }

    /// Rescales every row to unit Euclidean norm.
    pub fn unit_rows(&self) -> Result<Self> {
        let mut m = self.0.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            let norm = row.norm();
            if norm == 0.0 {
                return Err(Error::ZeroVector(Some(i)));
            }
            row /= norm;
        }
        Ok(Self(m))
    }
}

/// The `t × d` token-level encoder output for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingMatrix(DMatrix<f64>);

impl TokenEmbeddingMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        check_finite(&m)?;
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(matrix_from_rows(rows)?)
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<EmbeddingMatrix> for TokenEmbeddingMatrix {
    fn from(m: EmbeddingMatrix) -> Self {
        Self(m.0)
    }
}

/// Averages all token rows into a single `d`-dimensional sentence embedding.
pub fn mean_pool(tokens: &TokenEmbeddingMatrix) -> DVector<f64> {
    let t = tokens.tokens() as f64;
    let m = tokens.as_matrix();
    DVector::from_iterator(m.ncols(), m.column_iter().map(|col| col.sum() / t))
}

/// Mean-pools each token matrix and stacks the results as rows.
pub fn stack_pooled(token_matrices: &[TokenEmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let first = token_matrices.first().ok_or(Error::EmptyInput)?;
    let d = first.cols();
    let mut out = DMatrix::zeros(token_matrices.len(), d);
    for (i, tm) in token_matrices.iter().enumerate() {
        if tm.cols() != d {
            return Err(Error::DimensionMismatch(format!(
                "token matrix {i} has dimension {}, expected {d}",
                tm.cols()
            )));
        }
        out.set_row(i, &mean_pool(tm).transpose());
    }
    EmbeddingMatrix::from_matrix(out)
}

/// Row-aligned source and target embeddings of translated sentence pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    source: EmbeddingMatrix,
    target: EmbeddingMatrix,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelCorpus {
    pub fn new(
        source: EmbeddingMatrix,
        target: EmbeddingMatrix,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
    ) -> Result<Self> {
        if source.rows() != target.rows() {
            return Err(Error::DimensionMismatch(format!(
                "source has {} rows, target has {}",
                source.rows(),
                target.rows()
            )));
        }
        if source.cols() != target.cols() {
            return Err(Error::DimensionMismatch(format!(
                "source dimension {} differs from target dimension {}",
                source.cols(),
                target.cols()
            )));
        }
        Ok(Self {
            source,
            target,
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
        })
    }

    /// Pairs two matrices with placeholder language tags.
    pub fn unlabeled(source: EmbeddingMatrix, target: EmbeddingMatrix) -> Result<Self> {
        Self::new(source, target, "src", "tgt")
    }

    pub fn source(&self) -> &EmbeddingMatrix {
        &self.source
    }

    pub fn target(&self) -> &EmbeddingMatrix {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.source.cols()
    }
}

/// Optional row preprocessing applied before fitting and replayed at
/// evaluation time. Both steps are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocess {
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub unit_norm: bool,
}

impl Preprocess {
    pub fn is_identity(&self) -> bool {
        !self.center && !self.unit_norm
    }

    /// Centers (column means from `m` itself), then normalizes rows.
    pub fn apply(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let mut out = if self.center { m.centered() } else { m.clone() };
        if self.unit_norm {
            out = out.unit_rows()?;
        }
        Ok(out)
    }

    pub fn apply_corpus(&self, corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
        if self.is_identity() {
            return Ok(corpus.clone());
        }
        ParallelCorpus::new(
            self.apply(corpus.source())?,
            self.apply(corpus.target())?,
            corpus.source_lang.clone(),
            corpus.target_lang.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn pool_two_rows() {
        let t = TokenEmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(mean_pool(&t).as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn pool_single_token_is_identity() {
        let t = TokenEmbeddingMatrix::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(mean_pool(&t).as_slice(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn pool_matches_column_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = random_rows(&mut rng, 7, 4);
        let pooled = mean_pool(&TokenEmbeddingMatrix::from_rows(&rows).unwrap());
        for j in 0..4 {
            let mut acc = 0.0;
            for row in &rows {
                acc += row[j];
            }
            let expected = acc / 7.0;
            assert!((pooled[j] - expected).abs() <= 1e-14 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        let err = TokenEmbeddingMatrix::from_rows(&[]).unwrap_err();
        assert_eq!(err.to_string(), "empty input");
        let err =
            TokenEmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![f64::NAN, 0.0]]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at (1,0)");
        let err = EmbeddingMatrix::from_rows(&[vec![f64::INFINITY]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 0 }));
    }

    #[test]
    fn stack_two_basis_vectors() {
        let a = TokenEmbeddingMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b = TokenEmbeddingMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let m = stack_pooled(&[a, b]).unwrap();
        assert_eq!(m.to_row_major(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn stack_empty_sequence_fails() {
        assert!(matches!(stack_pooled(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn stack_names_mismatched_index() {
        let a = TokenEmbeddingMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = TokenEmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let err = stack_pooled(&[a.clone(), a, b]).unwrap_err();
        assert!(err.to_string().contains("token matrix 2"), "{err}");
    }

    #[test]
    fn stack_rows_match_per_item_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mats: Vec<_> = (0..10)
            .map(|i| TokenEmbeddingMatrix::from_rows(&random_rows(&mut rng, 1 + i, 6)).unwrap())
            .collect();
        let stacked = stack_pooled(&mats).unwrap();
        assert_eq!(stacked.rows(), 10);
        for (i, m) in mats.iter().enumerate() {
            assert_eq!(stacked.row(i), mean_pool(m));
        }
    }

    #[test]
    fn corpus_shape_checks() {
        let a = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let c = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(ParallelCorpus::unlabeled(a.clone(), b).is_err());
        assert!(ParallelCorpus::unlabeled(a.clone(), c).is_err());
        assert!(ParallelCorpus::unlabeled(a.clone(), a).is_ok());
    }

    #[test]
    fn preprocess_center_then_normalize() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        let p = Preprocess {
            center: true,
            unit_norm: true,
        };
        let out = p.apply(&m).unwrap();
        let expected = [
            -1.0 / 5f64.sqrt(),
            -2.0 / 5f64.sqrt(),
            1.0 / 5f64.sqrt(),
            2.0 / 5f64.sqrt(),
        ];
        for (a, b) in out.to_row_major().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let flat = EmbeddingMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(p.apply(&flat), Err(Error::ZeroVector(Some(0)))));
        assert_eq!(Preprocess::default().apply(&m).unwrap(), m);
    }

    proptest! {
        #[test]
        fn pool_of_repeated_row_is_that_row(
            v in prop::collection::vec(-1e3f64..1e3, 1..8),
            t in 1usize..40,
        ) {
            let rows = vec![v.clone(); t];
            let pooled = mean_pool(&TokenEmbeddingMatrix::from_rows(&rows).unwrap());
            for (p, x) in pooled.iter().zip(&v) {
                prop_assert!((p - x).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn pool_is_linear(
            seed in any::<u64>(),
            t in 1usize..12,
            d in 1usize..6,
            alpha in -5.0f64..5.0,
            beta in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_row_slice(t, d, &random_rows(&mut rng, t, d).concat());
            let y = DMatrix::from_row_slice(t, d, &random_rows(&mut rng, t, d).concat());
            let combo = &x * alpha + &y * beta;
            let lhs = mean_pool(&TokenEmbeddingMatrix::from_matrix(combo).unwrap());
            let rhs = mean_pool(&TokenEmbeddingMatrix::from_matrix(x).unwrap()) * alpha
                + mean_pool(&TokenEmbeddingMatrix::from_matrix(y).unwrap()) * beta;
            let scale = rhs.amax().max(1.0);
            prop_assert!((lhs - rhs).amax() <= 1e-10 * scale);
        }
    }
}
