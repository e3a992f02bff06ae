//! End-to-end runs: sample, validate, embed, cluster.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{multilink, tlinkage, ClusteringError, MultiLinkOptions, Segmentation, TLinkageOptions};
use crate::geometry::{ClassRef, PointSet};
use crate::preference::{build_preferences, PreferenceError, PreferenceMatrix};
use crate::sampling::{pool_hash, sample_hypotheses, validate_hypotheses, Hypothesis, SamplerConfig, SamplingError};
use crate::selection::{GricConfig, SelectionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("every hypothesis was rejected by validation")]
    EmptyHypothesisPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    MultiLink,
    TLinkage,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MultiLink => "multilink",
            Algorithm::TLinkage => "tlinkage",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multilink" => Ok(Algorithm::MultiLink),
            "tlinkage" => Ok(Algorithm::TLinkage),
            other => Err(format!("unknown algorithm `{other}` (expected multilink or tlinkage)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub classes: Vec<ClassRef>,
    pub epsilon: f64,
    pub sampler: SamplerConfig,
    /// Drop hypotheses failing the significance test before embedding.
    pub validate: bool,
    /// `None` uses the default weights with `σ = ε / 2`.
    pub gric: Option<GricConfig>,
    pub min_structure_size: Option<usize>,
    pub algorithm: Algorithm,
    pub record_log: bool,
    pub debug_checks: bool,
    /// See [`MultiLinkOptions::refine_assignment`].
    pub refine_assignment: bool,
}

impl PipelineConfig {
    pub fn new(classes: Vec<ClassRef>, epsilon: f64, sampler: SamplerConfig) -> Self {
        Self {
            classes,
            epsilon,
            sampler,
            validate: true,
            gric: None,
            min_structure_size: None,
            algorithm: Algorithm::MultiLink,
            record_log: false,
            debug_checks: false,
            refine_assignment: true,
        }
    }

    pub fn gric_config(&self) -> GricConfig {
        self.gric.unwrap_or_else(|| GricConfig::for_epsilon(self.epsilon))
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Sampling, validation and preference embedding, in seconds.
    pub hypotheses: f64,
    pub clustering: f64,
}

/// Hypothesis pool and embedding shared by every algorithm run on it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub hyps: Vec<Hypothesis>,
    pub prefs: PreferenceMatrix,
    pub pool_hash: u64,
    pub sampled: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub segmentation: Segmentation,
    pub prepared: Prepared,
    pub timings: Timings,
}

pub fn prepare(data: &PointSet, cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let start = Instant::now();
    let sampled = sample_hypotheses(data, &cfg.classes, &cfg.sampler)?;
    let count = sampled.len();
    let hyps = if cfg.validate { validate_hypotheses(&sampled, data, cfg.epsilon, &cfg.sampler) } else { sampled };
    if hyps.is_empty() {
        return Err(PipelineError::EmptyHypothesisPool);
    }
    let prefs = build_preferences(data, &hyps, cfg.epsilon)?;
    Ok(Prepared { pool_hash: pool_hash(&hyps), hyps, prefs, sampled: count, seconds: start.elapsed().as_secs_f64() })
}

/// Clusters a prepared pool, returning the segmentation and the clustering time.
pub fn cluster(
    data: &PointSet,
    cfg: &PipelineConfig,
    prepared: &Prepared,
    algorithm: Algorithm,
) -> Result<(Segmentation, f64), PipelineError> {
    let gric = cfg.gric_config();
    gric.validate()?;
    let start = Instant::now();
    let seg = match algorithm {
        Algorithm::MultiLink => multilink(
            data,
            &cfg.classes,
            &prepared.prefs,
            &prepared.hyps,
            &gric,
            &MultiLinkOptions {
                min_structure_size: cfg.min_structure_size,
                debug_checks: cfg.debug_checks,
                record_log: cfg.record_log,
                refine_assignment: cfg.refine_assignment,
            },
        )?,
        Algorithm::TLinkage => tlinkage(
            data,
            &prepared.prefs,
            &prepared.hyps,
            &gric,
            &TLinkageOptions { min_structure_size: cfg.min_structure_size },
        )?,
    };
    Ok((seg, start.elapsed().as_secs_f64()))
}

pub fn run(data: &PointSet, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let prepared = prepare(data, cfg)?;
    let (segmentation, seconds) = cluster(data, cfg, &prepared, cfg.algorithm)?;
    Ok(PipelineOutput {
        segmentation,
        timings: Timings { hypotheses: prepared.seconds, clustering: seconds },
        prepared,
    })
}
