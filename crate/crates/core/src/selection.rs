//! GRIC scoring and the merge test between two clusters.
//!
//! The cost of explaining cluster `U` with a model of class `k` is
//!
//! ```text
//! g_k(U) = Σ_{x ∈ U} ρ(err(x, θ_k(U)) / σ)² + λ1·d·|U| + λ2·κ,   ρ(x) = min(x, r − d)
//! ```
//!
//! Two clusters merge when some class explains their union at a cost no
//! greater than the cheapest pair of separate fits of any class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Cluster;
use crate::geometry::{ClassRef, Model, ModelClass, PointSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("no model class could be fitted on both clusters and their union")]
    NoFittableClass,
    #[error("invalid GRIC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GricConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Residual standard deviation, in data units.
    pub sigma: f64,
}

pub const DEFAULT_LAMBDA1: f64 = 1.0;
pub const DEFAULT_LAMBDA2: f64 = 2.0;

impl GricConfig {
    pub fn new(lambda1: f64, lambda2: f64, sigma: f64) -> Result<Self, SelectionError> {
        let cfg = Self { lambda1, lambda2, sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default weights with `σ = ε / 2`.
    pub fn for_epsilon(epsilon: f64) -> Self {
        Self { lambda1: DEFAULT_LAMBDA1, lambda2: DEFAULT_LAMBDA2, sigma: epsilon / 2.0 }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.lambda1) && positive(self.lambda2) && positive(self.sigma)) {
            return Err(SelectionError::InvalidConfig(format!(
                "lambda1, lambda2 and sigma must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { sigma: self.sigma * factor, ..*self }
    }
}

/// `ρ(residual / σ)²` with the cap `r − d`.
pub fn robust_term(residual: f64, sigma: f64, class: &dyn ModelClass) -> f64 {
    let cap = (class.ambient_dim() - class.manifold_dim()) as f64;
    let x = (residual / sigma).min(cap);
    x * x
}

pub fn gric_score(
    data: &PointSet,
    members: &[usize],
    class: &dyn ModelClass,
    model: &Model,
    config: &GricConfig,
) -> f64 {
    let fidelity: f64 =
        members.iter().map(|&i| robust_term(class.residual(model, data.point(i)), config.sigma, class)).sum();
    fidelity + complexity(members.len(), class, config)
}

fn complexity(size: usize, class: &dyn ModelClass, config: &GricConfig) -> f64 {
    config.lambda1 * (class.manifold_dim() * size) as f64 + config.lambda2 * class.num_params() as f64
}

/// An on-the-fly fit of one class to a cluster together with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFit {
    pub model: Model,
    pub gric: f64,
}

/// Fits `class` to `members` and scores it; `None` if the cluster is too small
/// or degenerate for the class.
pub fn fit_and_score(
    data: &PointSet,
    members: &[usize],
    class: &dyn ModelClass,
    config: &GricConfig,
) -> Option<ClassFit> {
    if members.len() < class.min_sample_size() {
        return None;
    }
    let model = class.fit_cluster(data, members).ok()?;
    let gric = gric_score(data, members, class, &model, config);
    gric.is_finite().then_some(ClassFit { model, gric })
}

/// Per-class costs compared by one merge test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub left: f64,
    pub right: f64,
    pub union: f64,
}

impl ClassScores {
    pub fn separate(&self) -> f64 {
        self.left + self.right
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeVerdict {
    pub accept: bool,
    /// Index into the class list, present iff `accept`.
    pub winning_class: Option<usize>,
    pub union_model: Option<Model>,
    /// One entry per class fittable on both clusters and their union.
    pub scores: Vec<ClassScores>,
    /// Union fit for every class in the class list (`None` if not fittable).
    pub union_fits: Vec<Option<ClassFit>>,
}

impl MergeVerdict {
    /// Re-checks the accept condition from the recorded scores alone.
    pub fn audit(scores: &[ClassScores], winner: &str) -> bool {
        let best_separate = scores.iter().map(ClassScores::separate).fold(f64::INFINITY, f64::min);
        scores.iter().find(|s| s.class == winner).is_some_and(|s| s.union <= best_separate)
    }
}

/// Sorted union of two sorted, disjoint index lists.
pub fn union_members(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Decides whether `u` and `v` should be merged.
///
/// Only classes fittable on `u`, `v` and their union take part. The merge is
/// accepted when some class `k̂` has `g_k̂(U∪V) ≤ g_k(U) + g_k(V)` for every
/// participating `k`; equality counts as a merge. Among satisfying classes the
/// cheapest union wins, then the smaller `κ`, then the earlier class.
pub fn evaluate_merge(
    data: &PointSet,
    u: &Cluster,
    v: &Cluster,
    classes: &[ClassRef],
    config: &GricConfig,
) -> Result<MergeVerdict, SelectionError> {
    let union = union_members(u.members(), v.members());
    let mut scores = Vec::new();
    let mut union_fits = Vec::with_capacity(classes.len());
    let mut participants = Vec::new();
    for (k, class) in classes.iter().enumerate() {
        let union_fit = fit_and_score(data, &union, class.as_ref(), config);
        if let (Some(fu), Some(fv), Some(fw)) =
            (u.fit(k, data, class.as_ref(), config), v.fit(k, data, class.as_ref(), config), union_fit.as_ref())
        {
            participants.push(k);
            scores.push(ClassScores { class: class.id().to_string(), left: fu.gric, right: fv.gric, union: fw.gric });
        }
        union_fits.push(union_fit);
    }
    if scores.is_empty() {
        return Err(SelectionError::NoFittableClass);
    }
    let best_separate = scores.iter().map(ClassScores::separate).fold(f64::INFINITY, f64::min);
    let winner = participants
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.union <= best_separate)
        .min_by(|(ka, sa), (kb, sb)| {
            sa.union
                .total_cmp(&sb.union)
                .then(classes[**ka].num_params().cmp(&classes[**kb].num_params()))
                .then(ka.cmp(kb))
        })
        .map(|(k, _)| *k);
    Ok(MergeVerdict {
        accept: winner.is_some(),
        winning_class: winner,
        union_model: winner.and_then(|k| union_fits[k].as_ref().map(|f| f.model.clone())),
        scores,
        union_fits,
    })
}
