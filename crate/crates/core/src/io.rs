//! File formats: SEMB binary matrices, TSV matrices and gold scores, JSON
//! reports and manifests, and the 2-D plot export.
//!
//! SEMB layout (all integers little-endian):
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `b"SEMB"`                    |
//! | 4      | 4    | version, `u32` = 1                 |
//! | 8      | 1    | dtype, `u8`: 1 = f32, 2 = f64      |
//! | 9      | 8    | rows, `u64`                        |
//! | 17     | 8    | cols, `u64`                        |
//! | 25     | ...  | row-major payload, `rows·cols` values |

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::embedding::{EmbeddingMatrix, ParallelCorpus};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{AlignmentReport, StsGold};
use crate::solvers::{FitMeta, Method, ProjectionMatrix};

pub const SEMB_MAGIC: &[u8; 4] = b"SEMB";
pub const SEMB_VERSION: u32 = 1;
pub const SEMB_HEADER_LEN: usize = 25;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SembHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub rows: u64,
    pub cols: u64,
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    m.iter()
        .position(|v| !v.is_finite())
        .map(|idx| (idx % m.nrows(), idx / m.nrows()))
}

/// Serializes a matrix to SEMB bytes.
pub fn encode_semb(m: &DMatrix<f64>, dtype: Dtype) -> Result<Vec<u8>> {
    if let Some((row, col)) = first_non_finite(m) {
        return Err(Error::NonFinite { row, col });
    }
    let mut out = Vec::with_capacity(SEMB_HEADER_LEN + m.len() * dtype.width());
    out.extend_from_slice(SEMB_MAGIC);
    out.extend_from_slice(&SEMB_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for row in m.row_iter() {
        for &v in row.iter() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn parse_semb_header(bytes: &[u8], path: &Path) -> Result<SembHeader> {
    if bytes.len() < 4 || &bytes[..4] != SEMB_MAGIC {
        return Err(Error::format(path, "not a SEMB file"));
    }
    if bytes.len() < SEMB_HEADER_LEN {
        return Err(Error::format(
            path,
            format!(
                "truncated header: {} of {SEMB_HEADER_LEN} bytes",
                bytes.len()
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SEMB_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported SEMB version {version}"),
        ));
    }
    let dtype = Dtype::from_code(bytes[8])
        .ok_or_else(|| Error::format(path, format!("unknown dtype code {} at byte 8", bytes[8])))?;
    let rows = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
    Ok(SembHeader {
        version,
        dtype,
        rows,
        cols,
    })
}

/// Parses SEMB bytes into a raw matrix; `path` only labels errors.
pub fn decode_semb(bytes: &[u8], path: &Path) -> Result<(SembHeader, DMatrix<f64>)> {
    let header = parse_semb_header(bytes, path)?;
    let payload = &bytes[SEMB_HEADER_LEN..];
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(header.dtype.width() as u64));
    if expected != Some(payload.len() as u64) {
        return Err(Error::format(
            path,
            format!(
                "payload length mismatch: header declares {}x{} but payload has {} bytes",
                header.rows,
                header.cols,
                payload.len()
            ),
        ));
    }
    let (rows, cols) = (header.rows as usize, header.cols as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("empty matrix {rows}x{cols}")));
    }
    let width = header.dtype.width();
    let mut values = Vec::with_capacity(rows * cols);
    for (idx, chunk) in payload.chunks_exact(width).enumerate() {
        let v = match header.dtype {
            Dtype::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("non-finite value at row {} col {}", idx / cols, idx % cols),
            ));
        }
        values.push(v);
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &values)))
}

pub fn write_semb(m: &DMatrix<f64>, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_semb(m, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_semb_raw(path: impl AsRef<Path>) -> Result<(SembHeader, DMatrix<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_semb(&bytes, path)
}

pub fn read_semb(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let (_, m) = read_semb_raw(path)?;
    EmbeddingMatrix::from_matrix(m)
}

/// Sidecar carrying a projection's method label and fit diagnostics, stored
/// next to the SEMB file as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProjectionSidecar {
    method: Method,
    dim: usize,
    tool_version: String,
    meta: FitMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the matrix as SEMB plus the metadata sidecar.
pub fn write_projection(p: &ProjectionMatrix, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    write_semb(p.as_matrix(), path, dtype)?;
    let sidecar = ProjectionSidecar {
        method: p.method(),
        dim: p.dim(),
        tool_version: TOOL_VERSION.to_owned(),
        meta: p.meta.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Reads a projection; without a sidecar the map is labelled least squares
/// with empty diagnostics.
pub fn read_projection(path: impl AsRef<Path>) -> Result<ProjectionMatrix> {
    let path = path.as_ref();
    let (_, m) = read_semb_raw(path)?;
    let side = sidecar_path(path);
    let (method, meta) = match fs::read_to_string(&side) {
        Ok(text) => {
            let sc: ProjectionSidecar = serde_json::from_str(&text)
                .map_err(|e| Error::format(&side, format!("bad projection metadata: {e}")))?;
            if sc.dim != m.nrows() {
                return Err(Error::format(
                    &side,
                    format!(
                        "metadata declares dimension {} but matrix is {}x{}",
                        sc.dim,
                        m.nrows(),
                        m.ncols()
                    ),
                ));
            }
            (sc.method, sc.meta)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            (Method::LeastSquares, FitMeta::default())
        }
        Err(e) => return Err(Error::io(&side, e)),
    };
    ProjectionMatrix::new(m, method, meta).map_err(|e| match e {
        Error::DimensionMismatch(msg) | Error::InvalidParameter(msg) => Error::format(path, msg),
        other => other,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses tab-separated decimal rows. Blank lines are ignored.
pub fn parse_tsv_matrix(text: &str, path: &Path) -> Result<EmbeddingMatrix> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, tok) in line.split('\t').enumerate() {
            let tok = tok.trim();
            let v: f64 = tok.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {lineno} column {}: cannot parse {tok:?}", col + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("line {lineno} column {}: non-finite value", col + 1),
                ));
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: expected {c} columns, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format(path, "no data rows"))?;
    EmbeddingMatrix::from_row_major(rows, cols, &values)
}

pub fn read_tsv_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    parse_tsv_matrix(&read_text(path)?, path)
}

pub fn parse_gold_tsv(text: &str, path: &Path) -> Result<StsGold> {
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let s: f64 = tok.parse().map_err(|_| {
            Error::format(path, format!("line {lineno}: cannot parse score {tok:?}"))
        })?;
        if !(0.0..=5.0).contains(&s) {
            return Err(Error::format(
                path,
                format!("line {lineno}: score {s} outside [0,5]"),
            ));
        }
        scores.push(s);
    }
    if scores.is_empty() {
        return Err(Error::format(path, "no scores"));
    }
    StsGold::new(scores)
}

pub fn read_gold_tsv(path: impl AsRef<Path>) -> Result<StsGold> {
    let path = path.as_ref();
    parse_gold_tsv(&read_text(path)?, path)
}

/// Rounds to 6 significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn num(v: f64) -> Value {
    json!(round_sig6(v))
}

/// JSON rendering of a report with sorted keys and metric values at 6
/// significant digits. Correlations appear both raw and ×100.
pub fn report_to_json(report: &AlignmentReport) -> Value {
    let mut obj = Map::new();
    obj.insert("tool".into(), json!("sentalign"));
    obj.insert("tool_version".into(), json!(TOOL_VERSION));
    obj.insert("method".into(), json!(report.method));
    obj.insert("n_pairs".into(), json!(report.n_pairs));
    obj.insert("avg_cosine".into(), num(report.avg_cosine));
    obj.insert("residual_frobenius".into(), num(report.residual_frobenius));
    if let Some(s) = report.spearman {
        obj.insert("spearman".into(), num(s));
        obj.insert("spearman_percent".into(), num(s * 100.0));
    }
    if let Some(p) = report.pearson {
        obj.insert("pearson".into(), num(p));
        obj.insert("pearson_percent".into(), num(p * 100.0));
    }
    if let Some(note) = &report.note {
        obj.insert("note".into(), json!(note));
    }
    if let Some(ts) = report.timestamp_unix {
        obj.insert("timestamp_unix".into(), json!(ts));
    }
    if let Some(per) = &report.per_pair_cosine {
        obj.insert(
            "per_pair_cosine".into(),
            Value::Array(per.iter().map(|v| num(*v)).collect()),
        );
    }
    Value::Object(obj)
}

pub fn write_report_json(report: &AlignmentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&report_to_json(report)).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Top-2 principal-component coordinates of the rows.
///
/// Each principal direction is signed so its first nonzero component is
/// positive, which makes the output deterministic.
pub fn pca_2d(m: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    if m.rows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "2-D export needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    if m.cols() < 2 {
        return Err(Error::InvalidParameter(format!(
            "2-D export needs dimension at least 2, got {}",
            m.cols()
        )));
    }
    let centered = m.centered().into_matrix();
    let svd = linalg::svd(&centered)?;
    let mut dirs = svd.vt.rows(0, 2).transpose();
    for mut dir in dirs.column_iter_mut() {
        if let Some(first) = dir.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                dir.neg_mut();
            }
        }
    }
    Ok(centered * dirs)
}

/// Writes `x<TAB>y` per row: PCA coordinates for external plotting.
pub fn export_2d(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let coords = pca_2d(m)?;
    let mut text = String::with_capacity(coords.nrows() * 48);
    for row in coords.row_iter() {
        text.push_str(&format!("{}\t{}\n", row[0], row[1]));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// JSON manifest describing a parallel corpus on disk. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::format(path, format!("bad manifest: {e}")))
}

pub fn write_manifest(manifest: &PairManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads the corpus (and gold scores, when listed) referenced by a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(ParallelCorpus, Option<StsGold>)> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let source = read_semb(resolve(&manifest.source_path))?;
    let target = read_semb(resolve(&manifest.target_path))?;
    let corpus = ParallelCorpus::new(source, target, manifest.source_lang, manifest.target_lang)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let gold = match &manifest.gold_path {
        Some(g) => {
            let gold = read_gold_tsv(resolve(g))?;
            if gold.len() != corpus.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "{} gold scores for {} sentence pairs",
                        gold.len(),
                        corpus.len()
                    ),
                ));
            }
            Some(gold)
        }
        None => None,
    };
    Ok((corpus, gold))
}
