//! Synthetic parallel corpora with planted ground-truth maps.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, ParallelCorpus};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, random_orthogonal, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Orthogonal,
    General,
    Identity,
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::Orthogonal => "orthogonal",
            MapKind::General => "general",
            MapKind::Identity => "identity",
        })
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(MapKind::Orthogonal),
            "general" => Ok(MapKind::General),
            "identity" => Ok(MapKind::Identity),
            other => Err(Error::InvalidParameter(format!(
                "unknown map kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub map_kind: MapKind,
    /// Standard deviation of the Gaussian noise added to the target.
    pub noise_sigma: f64,
    pub seed: u64,
    pub source_scale: f64,
}

impl SynthSpec {
    pub fn new(n: usize, d: usize, map_kind: MapKind, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            map_kind,
            noise_sigma,
            seed,
            source_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::InvalidParameter(format!(
                "n and d must be at least 1, got n={} d={}",
                self.n, self.d
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if !self.source_scale.is_finite() || self.source_scale <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "source scale must be positive, got {}",
                self.source_scale
            )));
        }
        Ok(())
    }
}

/// Draws a corpus `target = source · true_map + noise` and returns it with
/// the planted map.
///
/// Source rows are i.i.d. standard Gaussian times `source_scale`. Random
/// draws happen in a fixed order (source, map, noise) from a single seeded
/// stream, so equal specs give bitwise equal output.
pub fn generate(spec: &SynthSpec) -> Result<(ParallelCorpus, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let source = gaussian_matrix(&mut rng, spec.n, spec.d) * spec.source_scale;
    let map_seed = rng.next_u64();
    let true_map = match spec.map_kind {
        MapKind::Identity => DMatrix::identity(spec.d, spec.d),
        MapKind::Orthogonal => random_orthogonal(spec.d, map_seed),
        MapKind::General => gaussian_matrix(&mut seeded_rng(map_seed), spec.d, spec.d),
    };
    let mut target = match spec.map_kind {
        MapKind::Identity => source.clone(),
        _ => &source * &true_map,
    };
    if spec.noise_sigma > 0.0 {
        target += gaussian_matrix(&mut rng, spec.n, spec.d) * spec.noise_sigma;
    }
    let corpus = ParallelCorpus::new(
        EmbeddingMatrix::from_matrix(source)?,
        EmbeddingMatrix::from_matrix(target)?,
        "synth_src",
        "synth_tgt",
    )?;
    Ok((corpus, true_map))
}
