//! Inlier-threshold estimation by maximizing a silhouette index over a
//! logarithmic grid.

use serde::{Deserialize, Serialize};

use super::metrics::EvalError;
use crate::clustering::Segmentation;
use crate::geometry::PointSet;
use crate::pipeline::{run, PipelineConfig, PipelineError};
use crate::preference::PreferenceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub epsilon: f64,
    /// `None` when the run failed or produced fewer than two structures.
    pub score: Option<f64>,
    pub structures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub score: Option<f64>,
    /// Set when no grid value gave two structures; `epsilon` is then the
    /// value with the most structures.
    pub fallback: bool,
    pub grid: Vec<GridPoint>,
}

/// `count` log-spaced values from `lo` to `hi`, both included. A collapsed
/// interval gives the single value `lo`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| match k {
            0 => lo,
            _ if k == count - 1 => hi,
            _ => (a + (b - a) * k as f64 / (count - 1) as f64).exp(),
        })
        .collect()
}

/// Mean silhouette over structure members, with Tanimoto distances in the
/// given preference space. Members of singleton structures score 0.
/// Returns `None` with fewer than two structures.
pub fn silhouette(seg: &Segmentation, prefs: &PreferenceMatrix) -> Option<f64> {
    let structures: Vec<&[usize]> = seg.structures.iter().map(|s| s.members.as_slice()).collect();
    if structures.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, own) in structures.iter().enumerate() {
        for &i in own.iter() {
            count += 1;
            if own.len() < 2 {
                continue;
            }
            let a =
                own.iter().filter(|&&j| j != i).map(|&j| prefs.distance(i, j)).sum::<f64>() / (own.len() - 1) as f64;
            let b = structures
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != s)
                .map(|(_, other)| other.iter().map(|&j| prefs.distance(i, j)).sum::<f64>() / other.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Some(total / count as f64)
}

/// Runs the pipeline at `budget` log-spaced thresholds in `interval` and
/// keeps the one whose segmentation has the highest silhouette.
pub fn estimate_epsilon(
    data: &PointSet,
    cfg: &PipelineConfig,
    interval: [f64; 2],
    budget: usize,
) -> Result<EpsilonEstimate, EvalError> {
    let [lo, hi] = interval;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(EvalError::InvalidSweep(format!("bad threshold interval [{lo}, {hi}]")));
    }
    if budget < 2 && lo != hi {
        return Err(EvalError::InvalidSweep("threshold search needs at least 2 grid points".into()));
    }
    let grid: Vec<GridPoint> = log_grid(lo, hi, budget)
        .into_iter()
        .map(|eps| {
            let out: Result<_, PipelineError> = run(data, &cfg.with_epsilon(eps));
            match out {
                Ok(out) => GridPoint {
                    epsilon: eps,
                    score: silhouette(&out.segmentation, &out.prepared.prefs),
                    structures: out.segmentation.structures.len(),
                },
                Err(_) => GridPoint { epsilon: eps, score: None, structures: 0 },
            }
        })
        .collect();

    let best = grid.iter().filter_map(|g| g.score.map(|s| (s, g.epsilon))).fold(
        None,
        |acc: Option<(f64, f64)>, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        },
    );
    if let Some((score, epsilon)) = best {
        return Ok(EpsilonEstimate { epsilon, score: Some(score), fallback: false, grid });
    }
    if lo == hi {
        return Ok(EpsilonEstimate { epsilon: lo, score: None, fallback: grid.iter().all(|g| g.structures < 2), grid });
    }
    let most = grid.iter().fold(&grid[0], |acc, g| if g.structures > acc.structures { g } else { acc });
    Ok(EpsilonEstimate { epsilon: most.epsilon, score: None, fallback: true, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = log_grid(0.01, 0.3, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[4], 0.3);
        let r1 = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r1).abs() < 1e-12);
        }
        assert_eq!(log_grid(0.2, 0.2, 6), vec![0.2]);
        assert_eq!(log_grid(0.2, 0.5, 1), vec![0.2]);
    }
}
