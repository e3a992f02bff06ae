use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Segmentation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ground-truth labels are missing")]
    MissingGroundTruth,
    #[error("{predicted} predicted labels for {truth} ground-truth labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("empty labelling")]
    Empty,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no segmentation with at least two structures over the threshold grid")]
    NoValidSegmentation,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub truth: u32,
    /// Matched predicted label, if any.
    pub predicted: Option<u32>,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of misclassified points.
    pub me: f64,
    pub points: usize,
    pub misclassified: usize,
    /// `(predicted, truth)` label pairs of the optimal matching; outliers map to 0.
    pub matching: Vec<(u32, u32)>,
    pub structures: Vec<StructureScore>,
}

/// Misclassification error under the optimal one-to-one matching of
/// predicted to ground-truth structures. Label 0 is the outlier class on
/// both sides and is only ever matched with itself.
pub fn misclassification_error(predicted: &[u32], truth: &[u32]) -> Result<EvalReport, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let index = |labels: &[u32]| -> BTreeMap<u32, usize> {
        let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, l)| (l, k)).collect()
    };
    let (pred_ids, true_ids) = (index(predicted), index(truth));
    let (np, nt) = (pred_ids.len(), true_ids.len());
    let mut confusion = vec![vec![0i64; nt]; np];
    let mut outliers_agree = 0usize;
    let mut pred_sizes = vec![0usize; np];
    let mut true_sizes = vec![0usize; nt];
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (0, 0) => outliers_agree += 1,
            (0, _) => true_sizes[true_ids[&t]] += 1,
            (_, 0) => pred_sizes[pred_ids[&p]] += 1,
            _ => {
                confusion[pred_ids[&p]][true_ids[&t]] += 1;
                pred_sizes[pred_ids[&p]] += 1;
                true_sizes[true_ids[&t]] += 1;
            }
        }
    }

    let side = np.max(nt);
    let mut assignment = vec![None; np];
    let mut matched = 0i64;
    if side > 0 && np > 0 && nt > 0 {
        let weights = Matrix::from_fn(side, side, |(r, c)| if r < np && c < nt { confusion[r][c] } else { 0 });
        let (total, cols) = kuhn_munkres(&weights);
        matched = total;
        for (r, &c) in cols.iter().enumerate().take(np) {
            if c < nt && confusion[r][c] > 0 {
                assignment[r] = Some(c);
            }
        }
    }

    let n = truth.len();
    let correct = outliers_agree + matched as usize;
    let pred_labels: Vec<u32> = pred_ids.keys().copied().collect();
    let true_labels: Vec<u32> = true_ids.keys().copied().collect();
    let mut matching = vec![(0, 0)];
    let mut structures = Vec::with_capacity(nt);
    for (t, &tl) in true_labels.iter().enumerate() {
        let p = assignment.iter().position(|a| *a == Some(t));
        if let Some(p) = p {
            matching.push((pred_labels[p], tl));
        }
        let hits = p.map_or(0, |p| confusion[p][t]) as f64;
        structures.push(StructureScore {
            truth: tl,
            predicted: p.map(|p| pred_labels[p]),
            precision: p.map_or(0.0, |p| if pred_sizes[p] > 0 { hits / pred_sizes[p] as f64 } else { 0.0 }),
            recall: if true_sizes[t] > 0 { hits / true_sizes[t] as f64 } else { 0.0 },
        });
    }
    Ok(EvalReport { me: (n - correct) as f64 / n as f64, points: n, misclassified: n - correct, matching, structures })
}

pub fn segmentation_error(seg: &Segmentation, truth: Option<&[u32]>) -> Result<EvalReport, EvalError> {
    let truth = truth.ok_or(EvalError::MissingGroundTruth)?;
    misclassification_error(&seg.labels(truth.len()), truth)
}
