//! Hypothesis pool generation and Gestalt significance filtering.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{ClassRef, GeometryError, Model, PointSet};

/// Redraws allowed for a single hypothesis before the class is declared degenerate.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("class `{class}` needs {needed} points but the data has {available}")]
    InsufficientData { class: String, needed: usize, available: usize },
    #[error("class `{class}`: {attempts} consecutive minimal samples were degenerate")]
    DegenerateData { class: String, attempts: usize },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub class: ClassRef,
    pub model: Model,
    pub source_sample: Vec<usize>,
}

impl Hypothesis {
    pub fn residual(&self, point: &[f64]) -> f64 {
        self.class.residual(&self.model, point)
    }
}

impl PartialEq for Hypothesis {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.source_sample == other.source_sample
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Hypotheses drawn per class, in class order.
    pub per_class_counts: Vec<usize>,
    pub seed: u64,
    /// Draw the points after the first with a Gaussian bias toward it.
    pub localized: bool,
    pub locality_sigma: f64,
    /// Band multiplier of the significance test.
    pub validation_k: f64,
    /// Required concentration ratio of the significance test.
    pub validation_gamma: f64,
}

impl SamplerConfig {
    pub fn uniform(per_class_counts: Vec<usize>, seed: u64) -> Self {
        Self { per_class_counts, seed, localized: false, locality_sigma: 1.0, validation_k: 3.0, validation_gamma: 1.5 }
    }

    pub fn localized(mut self, sigma: f64) -> Self {
        self.localized = true;
        self.locality_sigma = sigma;
        self
    }

    pub fn total(&self) -> usize {
        self.per_class_counts.iter().sum()
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), SamplingError> {
        let bad = |msg: String| Err(SamplingError::InvalidConfig(msg));
        if self.per_class_counts.len() != num_classes {
            return bad(format!("{} hypothesis counts for {num_classes} classes", self.per_class_counts.len()));
        }
        if self.per_class_counts.iter().any(|&m| m == 0) {
            return bad("hypothesis counts must be positive".into());
        }
        if !(self.validation_k > 1.0) || !(self.validation_gamma > 1.0) {
            return bad("validation_k and validation_gamma must exceed 1".into());
        }
        if self.localized && !(self.locality_sigma > 0.0) {
            return bad("locality_sigma must be positive".into());
        }
        Ok(())
    }
}

/// Draws `per_class_counts[k]` hypotheses of every class from minimal samples.
///
/// Each class uses its own ChaCha stream derived from the seed, so the pool
/// is identical whether the classes are processed serially or in parallel.
pub fn sample_hypotheses(
    data: &PointSet,
    classes: &[ClassRef],
    config: &SamplerConfig,
) -> Result<Vec<Hypothesis>, SamplingError> {
    config.validate(classes.len())?;
    for class in classes {
        if data.len() < class.min_sample_size() {
            return Err(SamplingError::InsufficientData {
                class: class.id().to_string(),
                needed: class.min_sample_size(),
                available: data.len(),
            });
        }
    }
    let per_class: Vec<Vec<Hypothesis>> = classes
        .par_iter()
        .enumerate()
        .map(|(k, class)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            sample_class(data, class, config.per_class_counts[k], config, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_class.into_iter().flatten().collect())
}

fn sample_class(
    data: &PointSet,
    class: &ClassRef,
    count: usize,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Hypothesis>, SamplingError> {
    let size = class.min_sample_size();
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut repeat = None;
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let sample = draw_sample(data, size, config, rng);
            let mut key = sample.clone();
            key.sort_unstable();
            let duplicate = seen.contains(&key);
            if duplicate && repeat.is_some() {
                continue;
            }
            match class.fit_minimal(data, &sample) {
                Ok(model) if !duplicate => {
                    seen.insert(key);
                    accepted = Some((model, sample));
                    break;
                }
                Ok(model) => repeat = Some((model, sample)),
                Err(GeometryError::DegenerateSample { .. }) => {}
                Err(_) => unreachable!("minimal sample has the class's size"),
            }
        }
        // Small data sets may have fewer distinct minimal samples than
        // requested; a repeated valid sample is better than failing.
        match accepted.or(repeat) {
            Some((model, source_sample)) => out.push(Hypothesis { class: class.clone(), model, source_sample }),
            None => return Err(SamplingError::DegenerateData { class: class.id().to_string(), attempts: MAX_REDRAWS }),
        }
    }
    Ok(out)
}

fn draw_sample(data: &PointSet, size: usize, config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    if !config.localized {
        return rand::seq::index::sample(rng, n, size).into_vec();
    }
    let first = rng.random_range(0..n);
    let anchor = data.point(first);
    let inv = 1.0 / (config.locality_sigma * config.locality_sigma);
    let mut weights: Vec<f64> = data
        .iter()
        .map(|p| {
            let d2: f64 = p.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 * inv).exp()
        })
        .collect();
    weights[first] = 0.0;
    let mut sample = vec![first];
    while sample.len() < size {
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // every remaining weight underflowed: fall back to uniform
            Err(_) => loop {
                let j = rng.random_range(0..n);
                if !sample.contains(&j) {
                    break j;
                }
            },
        };
        weights[next] = 0.0;
        sample.push(next);
    }
    sample
}

/// Number of points within `threshold` of the hypothesis.
pub fn count_inliers(hyp: &Hypothesis, data: &PointSet, threshold: f64) -> usize {
    data.iter().filter(|p| hyp.residual(p) <= threshold).count()
}

/// Keeps the hypotheses whose support concentrates inside the `epsilon` band.
///
/// A hypothesis survives when `k · n(ε) ≥ γ · n(kε)` and `n(ε) > 0`: uniform
/// clutter grows roughly linearly with the band width and fails the test.
pub fn validate_hypotheses(
    hyps: &[Hypothesis],
    data: &PointSet,
    epsilon: f64,
    config: &SamplerConfig,
) -> Vec<Hypothesis> {
    let k = config.validation_k;
    let gamma = config.validation_gamma;
    let keep: Vec<bool> = hyps
        .par_iter()
        .map(|h| {
            let (mut near, mut wide) = (0usize, 0usize);
            for p in data.iter() {
                let r = h.residual(p);
                if r <= epsilon {
                    near += 1;
                }
                if r <= k * epsilon {
                    wide += 1;
                }
            }
            is_significant(near, wide, k, gamma)
        })
        .collect();
    hyps.iter().zip(keep).filter_map(|(h, keep)| keep.then(|| h.clone())).collect()
}

pub fn is_significant(inliers: usize, inliers_wide: usize, k: f64, gamma: f64) -> bool {
    inliers > 0 && k * inliers as f64 >= gamma * inliers_wide as f64
}

/// Stable fingerprint of a pool, used to check that two runs shared hypotheses.
pub fn pool_hash(hyps: &[Hypothesis]) -> u64 {
    let mut hasher = DefaultHasher::new();
    for h in hyps {
        h.model.class.hash(&mut hasher);
        for p in &h.model.params {
            p.to_bits().hash(&mut hasher);
        }
        h.source_sample.hash(&mut hasher);
    }
    hasher.finish()
}
