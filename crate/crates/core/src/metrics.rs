//! Alignment and STS evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, ParallelCorpus};
use crate::error::{Error, Result};
use crate::solvers::{apply_projection, ProjectionMatrix};

/// Attached to every STS report so the metric convention travels with the
/// numbers.
pub const STS_METRIC_NOTE: &str =
    "cross-lingual STS scored by Spearman rank correlation (Pearson alongside), x100 in percent fields";

/// Gold similarity scores on the 0 to 5 scale, one per corpus row.
#[derive(Debug, Clone, PartialEq)]
pub struct StsGold(Vec<f64>);

impl StsGold {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=5.0).contains(*s))
        {
            return Err(Error::InvalidParameter(format!(
                "gold score {s} at index {i} outside [0,5]"
            )));
        }
        Ok(Self(scores))
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Metrics bundle written by the evaluation commands.
///
/// Correlations are stored raw in `[-1, 1]`; the `*_percent` accessors give
/// the ×100 rendering used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub method: String,
    pub n_pairs: usize,
    pub avg_cosine: f64,
    pub residual_frobenius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair_cosine: Option<Vec<f64>>,
}

impl AlignmentReport {
    pub fn spearman_percent(&self) -> Option<f64> {
        self.spearman.map(to_percent)
    }

    pub fn pearson_percent(&self) -> Option<f64> {
        self.pearson.map(to_percent)
    }
}

pub fn to_percent(r: f64) -> f64 {
    r * 100.0
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row-wise cosines between two equally shaped matrices.
pub fn row_cosines(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Vec<f64>> {
    (0..a.rows())
        .map(|i| {
            cosine(a.row(i).as_slice(), b.row(i).as_slice()).map_err(|e| match e {
                Error::ZeroVector(_) => Error::ZeroVector(Some(i)),
                other => other,
            })
        })
        .collect()
}

/// Source rows after the projection's recorded preprocessing and the map
/// itself, alongside the matching (preprocessed) target rows.
fn aligned_pair(
    corpus: &ParallelCorpus,
    proj: Option<&ProjectionMatrix>,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    match proj {
        None => Ok((corpus.source().clone(), corpus.target().clone())),
        Some(p) => {
            if p.dim() != corpus.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "projection is {}x{} but the corpus has dimension {}",
                    p.dim(),
                    p.dim(),
                    corpus.dim()
                )));
            }
            let prepared = p.meta.preprocess.apply_corpus(corpus)?;
            let mapped = apply_projection(p, prepared.source())?;
            Ok((mapped, prepared.target().clone()))
        }
    }
}

fn method_label(proj: Option<&ProjectionMatrix>) -> String {
    proj.map_or_else(|| "unaligned".to_owned(), |p| p.method().to_string())
}

/// Average cosine of the translated pairs, with the source optionally mapped
/// through `proj` first.
pub fn avg_pair_cosine(
    corpus: &ParallelCorpus,
    proj: Option<&ProjectionMatrix>,
) -> Result<AlignmentReport> {
    let (mapped, target) = aligned_pair(corpus, proj)?;
    let per_pair = row_cosines(&mapped, &target)?;
    let avg = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    let residual = (mapped.as_matrix() - target.as_matrix()).norm();
    Ok(AlignmentReport {
        method: method_label(proj),
        n_pairs: per_pair.len(),
        avg_cosine: avg,
        residual_frobenius: residual,
        spearman: None,
        pearson: None,
        note: None,
        timestamp_unix: None,
        per_pair_cosine: Some(per_pair),
    })
}

fn check_pair_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "sequences of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite observation".into()));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSequence);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) → ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Cross-lingual STS: predicted similarity of pair `i` is the cosine between
/// the (projected) source row and the target row, correlated against gold.
pub fn sts_eval(
    corpus: &ParallelCorpus,
    gold: &StsGold,
    proj: Option<&ProjectionMatrix>,
) -> Result<AlignmentReport> {
    if gold.len() != corpus.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gold scores for {} sentence pairs",
            gold.len(),
            corpus.len()
        )));
    }
    let mut report = avg_pair_cosine(corpus, proj)?;
    let predicted = report.per_pair_cosine.as_deref().unwrap_or_default();
    report.spearman = Some(spearman(predicted, gold.scores())?);
    report.pearson = Some(pearson(predicted, gold.scores())?);
    report.note = Some(STS_METRIC_NOTE.to_owned());
    Ok(report)
}
