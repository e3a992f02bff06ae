//! Single-linkage agglomeration gated by GRIC, and the T-linkage baseline.
//!
//! The MultiLink loop pops the closest pair of live clusters. Pairs where
//! one side is too small for every class fall back to the T-linkage rule
//! (some sampled hypothesis covers all the points of both clusters); every
//! other pair is decided by [`evaluate_merge`]. Accepted pairs merge and their
//! distances follow the single-linkage rule, rejected pairs are set to +∞.
//! The loop stops once no finite pair remains.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ClassRef, Model, ModelClass, PointSet};
use crate::preference::{sparse_tanimoto, Entry, PreferenceMatrix};
use crate::sampling::Hypothesis;
use crate::selection::{evaluate_merge, fit_and_score, gric_score, union_members, ClassFit, ClassScores, GricConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusteringError {
    #[error("the hypothesis pool is empty")]
    EmptyHypothesisPool,
    #[error("inconsistent inputs: {0}")]
    ConfigError(String),
    #[error("invariant violated at step {step}: {what}")]
    InvariantViolation { step: usize, what: String },
}

/// A set of point indices with lazily computed per-class fits.
#[derive(Debug)]
pub struct Cluster {
    members: Vec<usize>,
    fits: Vec<OnceLock<Option<ClassFit>>>,
    creation_step: usize,
}

impl Cluster {
    /// `members` must be sorted and free of duplicates; `num_classes` sizes
    /// the fit cache.
    pub fn new(members: Vec<usize>, creation_step: usize, num_classes: usize) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        Self { members, fits: (0..num_classes).map(|_| OnceLock::new()).collect(), creation_step }
    }

    fn with_fits(members: Vec<usize>, creation_step: usize, fits: Vec<Option<ClassFit>>) -> Self {
        Self { members, fits: fits.into_iter().map(OnceLock::from).collect(), creation_step }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn creation_step(&self) -> usize {
        self.creation_step
    }

    /// Fit of class `k`, computed on first use.
    ///
    /// The cache assumes a single class list and GRIC configuration per cluster.
    pub fn fit(&self, k: usize, data: &PointSet, class: &dyn ModelClass, config: &GricConfig) -> Option<&ClassFit> {
        if self.members.len() < class.min_sample_size() {
            return None;
        }
        match self.fits.get(k) {
            Some(cell) => cell.get_or_init(|| fit_and_score(data, &self.members, class, config)).as_ref(),
            None => None,
        }
    }

    /// Fits already present in the cache.
    pub fn cached_fit(&self, k: usize) -> Option<&Option<ClassFit>> {
        self.fits.get(k).and_then(OnceLock::get)
    }
}

#[derive(Debug, Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// T-linkage heap entry; ties on distance resolve by (creation step, slot)
/// of the older cluster, then of the younger one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    dist: Key,
    lo: (usize, usize),
    hi: (usize, usize),
    versions: (u32, u32),
}

/// Single-linkage distances between live clusters, addressed by slot.
///
/// A merged cluster takes over the slot of its first parent. Raw distances
/// are kept for forbidden pairs too, so the stored value between any two
/// live clusters always equals the minimum point-level distance across
/// them. A forbidden pair is never proposed again; a merged cluster only
/// inherits the prohibition toward `Z` when both parents were forbidden
/// toward `Z`.
///
/// Every live slot caches its best partner, so the closest pair is found by
/// a scan over slots. Equal distances resolve by (creation step, slot) of
/// the older cluster, then of the younger one.
#[derive(Debug, Clone)]
pub struct LinkageState {
    n: usize,
    dist: Vec<f64>,
    forbidden: Vec<bool>,
    live: Vec<bool>,
    created: Vec<usize>,
    sizes: Vec<usize>,
    nearest: Vec<Option<usize>>,
    /// Pairs can't be merged when one side is smaller than this and the
    /// distance is 1; such pairs are forbidden without being proposed.
    fallback_below: usize,
}

type PairKey = (Key, (usize, usize), (usize, usize));

impl LinkageState {
    /// Singleton state from a symmetric point distance.
    pub fn new(n: usize, fallback_below: usize, point_distance: impl Fn(usize, usize) -> f64) -> Self {
        let mut state = Self {
            n,
            dist: vec![f64::INFINITY; n * n],
            forbidden: vec![false; n * n],
            live: vec![true; n],
            created: vec![0; n],
            sizes: vec![1; n],
            nearest: vec![None; n],
            fallback_below,
        };
        for i in 0..n {
            for j in i + 1..n {
                let d = point_distance(i, j);
                state.dist[i * n + j] = d;
                state.dist[j * n + i] = d;
                if state.hopeless(i, j) {
                    state.set_forbidden(i, j, true);
                }
            }
        }
        for i in 0..n {
            state.refresh(i);
        }
        state
    }

    fn hopeless(&self, a: usize, b: usize) -> bool {
        self.sizes[a].min(self.sizes[b]) < self.fallback_below && self.dist[a * self.n + b] >= 1.0
    }

    fn key(&self, a: usize, b: usize) -> PairKey {
        let (ka, kb) = ((self.created[a], a), (self.created[b], b));
        let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
        (Key(self.dist[a * self.n + b]), lo, hi)
    }

    fn eligible(&self, a: usize, b: usize) -> bool {
        a != b && self.live[a] && self.live[b] && !self.forbidden[a * self.n + b]
    }

    /// Recomputes the best partner of `a`.
    fn refresh(&mut self, a: usize) {
        let mut best: Option<(PairKey, usize)> = None;
        for z in 0..self.n {
            if self.eligible(a, z) {
                let k = self.key(a, z);
                if best.as_ref().is_none_or(|(bk, _)| k < *bk) {
                    best = Some((k, z));
                }
            }
        }
        self.nearest[a] = best.map(|(_, z)| z);
    }

    fn set_forbidden(&mut self, a: usize, b: usize, value: bool) {
        self.forbidden[a * self.n + b] = value;
        self.forbidden[b * self.n + a] = value;
    }

    pub fn is_live(&self, slot: usize) -> bool {
        self.live[slot]
    }

    pub fn live_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&s| self.live[s])
    }

    pub fn raw_distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.n + b]
    }

    pub fn is_forbidden(&self, a: usize, b: usize) -> bool {
        self.forbidden[a * self.n + b]
    }

    /// Current distance: +∞ for forbidden pairs.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        if self.is_forbidden(a, b) {
            f64::INFINITY
        } else {
            self.raw_distance(a, b)
        }
    }

    /// Marks a pair as rejected.
    pub fn forbid(&mut self, a: usize, b: usize) {
        self.set_forbidden(a, b, true);
        if self.nearest[a] == Some(b) {
            self.refresh(a);
        }
        if self.nearest[b] == Some(a) {
            self.refresh(b);
        }
    }

    /// Closest live, non-forbidden pair `(older, younger, distance)`. The
    /// pair stays proposed until it is merged or forbidden.
    pub fn closest(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<PairKey> = None;
        for a in 0..self.n {
            if let (true, Some(z)) = (self.live[a], self.nearest[a]) {
                let k = self.key(a, z);
                if best.as_ref().is_none_or(|bk| k < *bk) {
                    best = Some(k);
                }
            }
        }
        best.map(|(d, lo, hi)| (lo.1, hi.1, d.0))
    }

    /// Merges slot `b` into slot `a` and applies the single-linkage update.
    pub fn merge(&mut self, a: usize, b: usize, step: usize) {
        assert!(a != b && self.live[a] && self.live[b], "merge of dead or identical slots");
        let n = self.n;
        self.live[b] = false;
        self.nearest[b] = None;
        self.created[a] = step;
        self.sizes[a] += self.sizes[b];
        for z in 0..n {
            if !self.live[z] || z == a {
                continue;
            }
            let d = self.dist[a * n + z].min(self.dist[b * n + z]);
            self.dist[a * n + z] = d;
            self.dist[z * n + a] = d;
            let forb = self.forbidden[a * n + z] && self.forbidden[b * n + z];
            self.set_forbidden(a, z, forb || self.hopeless(a, z));
        }
        self.refresh(a);
        for z in 0..n {
            if !self.live[z] || z == a {
                continue;
            }
            match self.nearest[z] {
                Some(w) if w == a || w == b => self.refresh(z),
                Some(w) => {
                    if self.eligible(z, a) && self.key(z, a) < self.key(z, w) {
                        self.nearest[z] = Some(a);
                    }
                }
                None => {
                    if self.eligible(z, a) {
                        self.nearest[z] = Some(a);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLinkOptions {
    /// Clusters smaller than this end up as outliers; `None` uses
    /// `max(min_sample_size) + 2` over the classes.
    pub min_structure_size: Option<usize>,
    /// Verify partition, cache and (for N ≤ 50) linkage invariants after every step.
    pub debug_checks: bool,
    /// Keep one record per proposed pair.
    pub record_log: bool,
    /// After clustering, split the large clusters into the structures their
    /// robust fits explain, unite those under the GRIC test, and hand every
    /// point to the closest structure model within ε. When off, the clusters
    /// of the agglomeration are reported as they are.
    pub refine_assignment: bool,
}

impl Default for MultiLinkOptions {
    fn default() -> Self {
        Self { min_structure_size: None, debug_checks: false, record_log: true, refine_assignment: true }
    }
}

pub fn default_min_structure_size(classes: &[ClassRef]) -> usize {
    classes.iter().map(|c| c.min_sample_size()).max().unwrap_or(0) + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergePath {
    /// Some sampled hypothesis covers every point of the union.
    Fallback,
    Gric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub step: usize,
    pub left_size: usize,
    pub right_size: usize,
    pub distance: f64,
    pub path: MergePath,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winning_class: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub scores: Vec<ClassScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub members: Vec<usize>,
    pub class: String,
    pub model: Model,
    pub gric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub structures: Vec<Structure>,
    pub outliers: Vec<usize>,
    #[serde(default)]
    pub merge_log: Vec<MergeRecord>,
    pub iterations: usize,
}

impl Segmentation {
    /// Per-point labels: 0 for outliers, `s + 1` for structure `s`.
    pub fn labels(&self, n: usize) -> Vec<u32> {
        let mut labels = vec![0u32; n];
        for (s, st) in self.structures.iter().enumerate() {
            for &i in &st.members {
                labels[i] = s as u32 + 1;
            }
        }
        labels
    }

    pub fn num_points(&self) -> usize {
        self.outliers.len() + self.structures.iter().map(|s| s.members.len()).sum::<usize>()
    }
}

fn check_inputs(data: &PointSet, prefs: &PreferenceMatrix, hyps: &[Hypothesis]) -> Result<(), ClusteringError> {
    if hyps.is_empty() || prefs.num_hyps() == 0 {
        return Err(ClusteringError::EmptyHypothesisPool);
    }
    if prefs.num_hyps() != hyps.len() {
        return Err(ClusteringError::ConfigError(format!(
            "preference matrix has {} columns for {} hypotheses",
            prefs.num_hyps(),
            hyps.len()
        )));
    }
    if prefs.num_points() != data.len() {
        return Err(ClusteringError::ConfigError(format!(
            "preference matrix has {} rows for {} points",
            prefs.num_points(),
            data.len()
        )));
    }
    Ok(())
}

fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Working cluster of the MultiLink loop.
struct Node {
    cluster: Cluster,
    /// Hypotheses with residual ≤ ε on every member.
    consensus: Vec<u32>,
    /// Members grouped by the large subclusters this node was merged from.
    parts: Vec<Vec<usize>>,
}

/// Parts of the union of `a` and `b`: both part lists when both clusters
/// reach `min_size`, otherwise the smaller cluster joins the largest part of
/// the larger one.
fn merged_parts(a: &Node, b: &Node, min_size: usize) -> Vec<Vec<usize>> {
    let (big, small) = if a.cluster.len() >= b.cluster.len() { (a, b) } else { (b, a) };
    if small.cluster.len() >= min_size {
        return a.parts.iter().chain(&b.parts).cloned().collect();
    }
    let mut parts = big.parts.clone();
    let largest = (0..parts.len()).fold(0, |m, t| if parts[t].len() > parts[m].len() { t } else { m });
    parts[largest] = union_members(&parts[largest], small.cluster.members());
    parts
}

/// Runs MultiLink over a preference matrix built on `hyps`.
pub fn multilink(
    data: &PointSet,
    classes: &[ClassRef],
    prefs: &PreferenceMatrix,
    hyps: &[Hypothesis],
    gric: &GricConfig,
    opts: &MultiLinkOptions,
) -> Result<Segmentation, ClusteringError> {
    check_inputs(data, prefs, hyps)?;
    if classes.is_empty() {
        return Err(ClusteringError::ConfigError("no model classes".into()));
    }
    gric.validate().map_err(|e| ClusteringError::ConfigError(e.to_string()))?;
    let n = data.len();
    let smallest_sample = classes.iter().map(|c| c.min_sample_size()).min().unwrap_or(0);
    let mut nodes: Vec<Option<Node>> = (0..n)
        .map(|i| {
            let cluster = Cluster::new(vec![i], 0, classes.len());
            Some(Node { cluster, consensus: prefs.row(i).iter().map(|e| e.0).collect(), parts: vec![vec![i]] })
        })
        .collect();
    let min_size = opts.min_structure_size.unwrap_or_else(|| default_min_structure_size(classes));
    let mut state = LinkageState::new(n, smallest_sample, |i, j| prefs.distance(i, j));
    let mut log = Vec::new();
    let mut step = 0usize;

    while let Some((a, b, d)) = state.closest() {
        step += 1;
        let (na, nb) = (nodes[a].as_ref().unwrap(), nodes[b].as_ref().unwrap());
        let fallback = na.cluster.len().min(nb.cluster.len()) < smallest_sample;
        let mut record = MergeRecord {
            step,
            left_size: na.cluster.len(),
            right_size: nb.cluster.len(),
            distance: d,
            path: if fallback { MergePath::Fallback } else { MergePath::Gric },
            accepted: false,
            winning_class: None,
            scores: Vec::new(),
        };
        let merged = if fallback {
            let consensus = intersect(&na.consensus, &nb.consensus);
            (!consensus.is_empty()).then(|| {
                let members = union_members(na.cluster.members(), nb.cluster.members());
                let cluster = Cluster::new(members, step, classes.len());
                Node { cluster, consensus, parts: merged_parts(na, nb, min_size) }
            })
        } else {
            match evaluate_merge(data, &na.cluster, &nb.cluster, classes, gric) {
                Ok(verdict) => {
                    record.scores = verdict.scores.clone();
                    verdict.winning_class.map(|k| {
                        record.winning_class = Some(classes[k].id().to_string());
                        let members = union_members(na.cluster.members(), nb.cluster.members());
                        Node {
                            cluster: Cluster::with_fits(members, step, verdict.union_fits),
                            consensus: intersect(&na.consensus, &nb.consensus),
                            parts: merged_parts(na, nb, min_size),
                        }
                    })
                }
                Err(_) => None,
            }
        };
        record.accepted = merged.is_some();
        if opts.record_log {
            log.push(record);
        }
        match merged {
            Some(node) => {
                nodes[b] = None;
                nodes[a] = Some(node);
                state.merge(a, b, step);
            }
            None => state.forbid(a, b),
        }
        if opts.debug_checks {
            verify_step(data, classes, prefs, gric, &nodes, &state, step)?;
        }
    }

    let mut outliers = Vec::new();
    let mut structures = Vec::new();
    if opts.refine_assignment {
        let mut candidates = Vec::new();
        for node in nodes.into_iter().flatten() {
            if node.cluster.len() >= min_size {
                candidates.extend(node.parts);
            } else {
                outliers.extend_from_slice(node.cluster.members());
            }
        }
        let (refined, dropped) = refine_assignment(data, classes, hyps, gric, candidates, prefs.epsilon(), min_size);
        structures = refined;
        outliers.extend(dropped);
    } else {
        for node in nodes.into_iter().flatten() {
            match finalize(data, classes, gric, &node, min_size) {
                Some(s) => structures.push(s),
                None => outliers.extend_from_slice(node.cluster.members()),
            }
        }
    }
    outliers.sort_unstable();
    structures.sort_by_key(|s| s.members[0]);
    Ok(Segmentation { structures, outliers, merge_log: log, iterations: step })
}

fn finalize(
    data: &PointSet,
    classes: &[ClassRef],
    gric: &GricConfig,
    node: &Node,
    min_size: usize,
) -> Option<Structure> {
    let cluster = &node.cluster;
    if cluster.len() < min_size {
        return None;
    }
    let (k, fit) = (0..classes.len())
        .filter_map(|k| cluster.fit(k, data, classes[k].as_ref(), gric).map(|f| (k, f)))
        .min_by(|(ka, fa), (kb, fb)| {
        fa.gric.total_cmp(&fb.gric).then(classes[*ka].num_params().cmp(&classes[*kb].num_params())).then(ka.cmp(kb))
    })?;
    Some(Structure {
        members: cluster.members().to_vec(),
        class: classes[k].id().to_string(),
        model: fit.model.clone(),
        gric: fit.gric,
    })
}

/// Cheapest model of `class` for `members`: the least-squares fit or the
/// best pool hypothesis, polished by refitting on the points within
/// `epsilon` while the cost keeps dropping.
fn robust_fit(
    data: &PointSet,
    members: &[usize],
    class: &dyn ModelClass,
    hyps: &[Hypothesis],
    gric: &GricConfig,
    epsilon: f64,
) -> Option<ClassFit> {
    let score = |model: Model| {
        let g = gric_score(data, members, class, &model, gric);
        g.is_finite().then_some(ClassFit { model, gric: g })
    };
    let mut best = fit_and_score(data, members, class, gric);
    for h in hyps.iter().filter(|h| h.class.id() == class.id()) {
        if let Some(fit) = score(h.model.clone()) {
            if best.as_ref().is_none_or(|b| fit.gric < b.gric) {
                best = Some(fit);
            }
        }
    }
    for _ in 0..MAX_POLISH_ROUNDS {
        let Some(current) = best.as_ref() else { break };
        let inliers: Vec<usize> =
            members.iter().copied().filter(|&i| class.residual(&current.model, data.point(i)) <= epsilon).collect();
        let Some(fit) = class.fit_cluster(data, &inliers).ok().and_then(score) else {
            break;
        };
        if fit.gric >= current.gric {
            break;
        }
        best = Some(fit);
    }
    best
}

const MAX_POLISH_ROUNDS: usize = 5;

/// Greedily unites extracted structures, taking first the pair with the
/// largest saving. A pair is united when some class fits the union, robustly,
/// for no more than the cheapest class fits the two structures separately.
fn merge_extracted(
    data: &PointSet,
    classes: &[ClassRef],
    hyps: &[Hypothesis],
    gric: &GricConfig,
    epsilon: f64,
    models: &mut Vec<(usize, Model, Vec<usize>)>,
) {
    let robust = |members: &[usize]| -> Vec<Option<ClassFit>> {
        classes.iter().map(|c| robust_fit(data, members, c.as_ref(), hyps, gric, epsilon)).collect()
    };
    for (_, _, m) in models.iter_mut() {
        m.sort_unstable();
    }
    let mut single: Vec<Vec<Option<ClassFit>>> = models.iter().map(|(_, _, m)| robust(m)).collect();
    loop {
        let mut best: Option<(f64, usize, usize, usize, ClassFit)> = None;
        for a in 0..models.len() {
            for b in a + 1..models.len() {
                let mut union = robust(&union_members(&models[a].2, &models[b].2));
                let separate = (0..classes.len())
                    .filter_map(|k| Some(single[a][k].as_ref()?.gric + single[b][k].as_ref()?.gric))
                    .fold(f64::INFINITY, f64::min);
                let winner = (0..classes.len()).filter_map(|k| union[k].as_ref().map(|f| (k, f.gric))).min_by(
                    |(ka, ga), (kb, gb)| {
                        ga.total_cmp(gb)
                            .then(classes[*ka].num_params().cmp(&classes[*kb].num_params()))
                            .then(ka.cmp(kb))
                    },
                );
                let Some((k, g)) = winner else { continue };
                if g <= separate && best.as_ref().is_none_or(|bst| separate - g > bst.0) {
                    best = Some((separate - g, a, b, k, union[k].take().unwrap()));
                }
            }
        }
        let Some((_, a, b, k, fit)) = best else { return };
        let members = union_members(&models[a].2, &models[b].2);
        single[a] = robust(&members);
        single.remove(b);
        models[a] = (k, fit.model, members);
        models.remove(b);
    }
}

/// Splits every candidate into structures by repeatedly taking the points
/// within `epsilon` of its cheapest robust model, as long as at least
/// `min_size` points are taken. The extracted structures are then united
/// under the GRIC merge test, and every candidate point goes to the
/// structure whose model explains it best within `epsilon` (ties keep the
/// current owner). Structures left below `min_size` are discarded and the
/// survivors refitted. Returns the structures and the dropped points.
fn refine_assignment(
    data: &PointSet,
    classes: &[ClassRef],
    hyps: &[Hypothesis],
    gric: &GricConfig,
    candidates: Vec<Vec<usize>>,
    epsilon: f64,
    min_size: usize,
) -> (Vec<Structure>, Vec<usize>) {
    let best_fit = |members: &[usize]| {
        classes
            .iter()
            .enumerate()
            .filter_map(|(k, c)| {
                robust_fit(data, members, c.as_ref(), hyps, gric, epsilon).map(|f| (k, f.model, f.gric))
            })
            .min_by(|(ka, _, ga), (kb, _, gb)| {
                ga.total_cmp(gb).then(classes[*ka].num_params().cmp(&classes[*kb].num_params())).then(ka.cmp(kb))
            })
    };
    let mut pool = Vec::new();
    let mut models: Vec<(usize, Model, Vec<usize>)> = Vec::new();
    let extract = |mut rest: Vec<usize>, models: &mut Vec<(usize, Model, Vec<usize>)>| {
        while rest.len() >= min_size {
            let Some((k, model, _)) = best_fit(&rest) else { break };
            let (inliers, others): (Vec<usize>, Vec<usize>) =
                rest.iter().partition(|&&i| classes[k].residual(&model, data.point(i)) <= epsilon);
            if inliers.len() < min_size {
                break;
            }
            models.push((k, model, inliers));
            rest = others;
        }
        rest
    };
    let mut leftover = Vec::new();
    for part in candidates {
        pool.extend_from_slice(&part);
        leftover.extend(extract(part, &mut models));
    }
    leftover.sort_unstable();
    extract(leftover, &mut models);
    merge_extracted(data, classes, hyps, gric, epsilon, &mut models);
    pool.sort_unstable();
    let mut dropped = Vec::new();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); models.len()];
    let owner: HashMap<usize, usize> =
        models.iter().enumerate().flat_map(|(t, (_, _, members))| members.iter().map(move |&i| (i, t))).collect();
    for i in pool {
        let p = data.point(i);
        let mut best: Option<(f64, usize)> =
            owner.get(&i).map(|&t| (classes[models[t].0].residual(&models[t].1, p), t));
        for (t, (kt, model, _)) in models.iter().enumerate() {
            let r = classes[*kt].residual(model, p);
            if best.is_none_or(|(b, _)| r < b) {
                best = Some((r, t));
            }
        }
        match best {
            Some((r, t)) if r <= epsilon => groups[t].push(i),
            _ => dropped.push(i),
        }
    }
    let mut structures = Vec::new();
    for mut members in groups {
        members.sort_unstable();
        if members.len() < min_size {
            dropped.extend(members);
            continue;
        }
        let best = (0..classes.len())
            .filter_map(|k| robust_fit(data, &members, classes[k].as_ref(), hyps, gric, epsilon).map(|f| (k, f)))
            .min_by(|(ka, fa), (kb, fb)| {
                fa.gric
                    .total_cmp(&fb.gric)
                    .then(classes[*ka].num_params().cmp(&classes[*kb].num_params()))
                    .then(ka.cmp(kb))
            });
        match best {
            Some((k, fit)) => structures.push(Structure {
                members,
                class: classes[k].id().to_string(),
                model: fit.model,
                gric: fit.gric,
            }),
            None => dropped.extend(members),
        }
    }
    (structures, dropped)
}

fn verify_step(
    data: &PointSet,
    classes: &[ClassRef],
    prefs: &PreferenceMatrix,
    gric: &GricConfig,
    nodes: &[Option<Node>],
    state: &LinkageState,
    step: usize,
) -> Result<(), ClusteringError> {
    let fail = |what: String| Err(ClusteringError::InvariantViolation { step, what });
    let n = data.len();
    let mut owner = vec![usize::MAX; n];
    for (slot, node) in nodes.iter().enumerate() {
        if node.is_some() != state.is_live(slot) {
            return fail(format!("slot {slot} liveness disagrees with linkage state"));
        }
        let Some(node) = node else { continue };
        let m = node.cluster.members();
        if m.is_empty() || !m.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!("slot {slot} members not sorted and unique"));
        }
        for &i in m {
            if owner[i] != usize::MAX {
                return fail(format!("point {i} in slots {} and {slot}", owner[i]));
            }
            owner[i] = slot;
        }
        for (k, class) in classes.iter().enumerate() {
            if let Some(cached) = node.cluster.cached_fit(k) {
                let fresh = fit_and_score(data, m, class.as_ref(), gric);
                if cached != &fresh {
                    return fail(format!("stale {} fit cached in slot {slot}", class.id()));
                }
            }
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return fail(format!("point {i} is not in any cluster"));
    }
    if n <= 50 {
        let live: Vec<usize> = state.live_slots().collect();
        for (x, &a) in live.iter().enumerate() {
            for &b in &live[x + 1..] {
                let ma = nodes[a].as_ref().unwrap().cluster.members();
                let mb = nodes[b].as_ref().unwrap().cluster.members();
                let brute = ma
                    .iter()
                    .flat_map(|&i| mb.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| prefs.distance(i, j))
                    .fold(f64::INFINITY, f64::min);
                if state.raw_distance(a, b) != brute {
                    return fail(format!(
                        "linkage distance {} between slots {a},{b} differs from brute force {brute}",
                        state.raw_distance(a, b)
                    ));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLinkageOptions {
    /// Clusters smaller than this end up as outliers; `None` uses
    /// `max(min_sample_size) + 2` over the pool's classes.
    pub min_structure_size: Option<usize>,
}

impl Default for TLinkageOptions {
    fn default() -> Self {
        Self { min_structure_size: None }
    }
}

/// T-linkage: a cluster's preference is the element-wise minimum of its
/// members'; the closest pair merges while its Tanimoto distance is below 1.
pub fn tlinkage(
    data: &PointSet,
    prefs: &PreferenceMatrix,
    hyps: &[Hypothesis],
    gric: &GricConfig,
    opts: &TLinkageOptions,
) -> Result<Segmentation, ClusteringError> {
    check_inputs(data, prefs, hyps)?;
    let n = data.len();
    let mut vectors: Vec<Option<Vec<Entry>>> = (0..n).map(|i| Some(prefs.row(i).to_vec())).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut versions = vec![0u32; n];
    let mut created = vec![0usize; n];
    let mut heap = BinaryHeap::new();
    let push =
        |heap: &mut BinaryHeap<Reverse<Candidate>>, d: f64, a: usize, b: usize, versions: &[u32], created: &[usize]| {
            if d < 1.0 {
                let (ka, kb) = ((created[a], a), (created[b], b));
                let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
                heap.push(Reverse(Candidate { dist: Key(d), lo, hi, versions: (versions[lo.1], versions[hi.1]) }));
            }
        };
    for i in 0..n {
        for j in i + 1..n {
            push(&mut heap, prefs.distance(i, j), i, j, &versions, &created);
        }
    }
    let mut step = 0;
    while let Some(Reverse(c)) = heap.pop() {
        let (a, b) = (c.lo.1, c.hi.1);
        if vectors[a].is_none() || vectors[b].is_none() || (versions[a], versions[b]) != c.versions {
            continue;
        }
        step += 1;
        let merged = min_aggregate(vectors[a].as_ref().unwrap(), vectors[b].as_ref().unwrap());
        vectors[b] = None;
        vectors[a] = Some(merged);
        let moved = std::mem::take(&mut members[b]);
        members[a] = union_members(&members[a], &moved);
        versions[a] += 1;
        created[a] = step;
        let va = vectors[a].as_ref().unwrap();
        for z in 0..n {
            if z == a {
                continue;
            }
            if let Some(vz) = &vectors[z] {
                let d = sparse_tanimoto(va, vz).unwrap_or(1.0);
                push(&mut heap, d, a, z, &versions, &created);
            }
        }
    }

    let classes: Vec<&ClassRef> = {
        let mut seen: Vec<&ClassRef> = Vec::new();
        for h in hyps {
            if !seen.iter().any(|c| c.id() == h.class.id()) {
                seen.push(&h.class);
            }
        }
        seen
    };
    let min_size =
        opts.min_structure_size.unwrap_or_else(|| classes.iter().map(|c| c.min_sample_size()).max().unwrap_or(0) + 2);
    let mut structures = Vec::new();
    let mut outliers = Vec::new();
    for (slot, vector) in vectors.iter().enumerate() {
        let Some(vector) = vector else { continue };
        let m = &members[slot];
        let best = (m.len() >= min_size).then(|| best_supporting(prefs, m, vector)).flatten();
        match best {
            Some(j) => {
                let h = &hyps[j];
                structures.push(Structure {
                    members: m.clone(),
                    class: h.class.id().to_string(),
                    model: h.model.clone(),
                    gric: gric_score(data, m, h.class.as_ref(), &h.model, gric),
                });
            }
            None => outliers.extend_from_slice(m),
        }
    }
    outliers.sort_unstable();
    structures.sort_by_key(|s| s.members[0]);
    Ok(Segmentation { structures, outliers, merge_log: Vec::new(), iterations: step })
}

fn min_aggregate(a: &[Entry], b: &[Entry]) -> Vec<Entry> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push((a[i].0, a[i].1.min(b[j].1)));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Hypothesis in the cluster's common support with the largest total preference.
fn best_supporting(prefs: &PreferenceMatrix, members: &[usize], vector: &[Entry]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &(j, _) in vector {
        let total: f64 = members
            .iter()
            .map(|&i| {
                let row = prefs.row(i);
                row.binary_search_by_key(&j, |e| e.0).map(|p| row[p].1).unwrap_or(0.0)
            })
            .sum();
        if best.is_none_or(|(t, _)| total > t) {
            best = Some((total, j as usize));
        }
    }
    best.map(|(_, j)| j)
}
