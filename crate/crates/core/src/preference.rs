//! Preference embedding and Tanimoto distances.
//!
//! Point `i` prefers hypothesis `j` with `exp(-e²/σ²)` when its residual
//! `e ≤ ε` and not at all otherwise, with `σ² = -ε² / ln 0.05` so that the
//! preference drops to 0.05 at the band edge. Rows are stored sparse.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::PointSet;
use crate::sampling::Hypothesis;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreferenceError {
    #[error("inlier threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("empty hypothesis pool")]
    EmptyPool,
    #[error("preference vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("both preference vectors are zero")]
    BothZero,
}

/// Preference value at the edge of the inlier band.
pub const EDGE_PREFERENCE: f64 = 0.05;

/// Gaussian bandwidth `σ²` that maps a residual of `epsilon` to [`EDGE_PREFERENCE`].
pub fn phi_sigma_sq(epsilon: f64) -> f64 {
    -epsilon * epsilon / EDGE_PREFERENCE.ln()
}

pub fn preference_value(residual: f64, epsilon: f64) -> f64 {
    if residual <= epsilon {
        (-residual * residual / phi_sigma_sq(epsilon)).exp()
    } else {
        0.0
    }
}

/// Sparse entry: hypothesis column and preference value.
pub type Entry = (u32, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    rows: Vec<Vec<Entry>>,
    sq_norms: Vec<f64>,
    num_hyps: usize,
    epsilon: f64,
    phi_sigma_sq: f64,
}

pub fn build_preferences(
    data: &PointSet,
    hyps: &[Hypothesis],
    epsilon: f64,
) -> Result<PreferenceMatrix, PreferenceError> {
    build_preferences_with(data, hyps, epsilon, |_| epsilon)
}

/// Like [`build_preferences`] with a threshold chosen per hypothesis (for
/// example per class); `epsilon` is recorded as the nominal threshold.
pub fn build_preferences_with(
    data: &PointSet,
    hyps: &[Hypothesis],
    epsilon: f64,
    threshold_for: impl Fn(&Hypothesis) -> f64 + Sync,
) -> Result<PreferenceMatrix, PreferenceError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(PreferenceError::InvalidThreshold(epsilon));
    }
    if hyps.is_empty() {
        return Err(PreferenceError::EmptyPool);
    }
    let thresholds: Vec<f64> = hyps.iter().map(&threshold_for).collect();
    if let Some(&bad) = thresholds.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(PreferenceError::InvalidThreshold(bad));
    }
    let rows: Vec<Vec<Entry>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let p = data.point(i);
            hyps.iter()
                .zip(&thresholds)
                .enumerate()
                .filter_map(|(j, (h, &eps))| {
                    let e = h.residual(p);
                    (e <= eps).then(|| (j as u32, preference_value(e, eps)))
                })
                .collect()
        })
        .collect();
    Ok(PreferenceMatrix::from_rows(rows, hyps.len(), epsilon))
}

impl PreferenceMatrix {
    /// Assembles a matrix from sparse rows with strictly increasing columns.
    pub fn from_rows(rows: Vec<Vec<Entry>>, num_hyps: usize, epsilon: f64) -> Self {
        debug_assert!(rows
            .iter()
            .all(|r| r.windows(2).all(|w| w[0].0 < w[1].0) && r.iter().all(|e| (e.0 as usize) < num_hyps)));
        let sq_norms = rows.iter().map(|r| r.iter().map(|e| e.1 * e.1).sum()).collect();
        Self { rows, sq_norms, num_hyps, epsilon, phi_sigma_sq: phi_sigma_sq(epsilon) }
    }

    pub fn num_points(&self) -> usize {
        self.rows.len()
    }

    pub fn num_hyps(&self) -> usize {
        self.num_hyps
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn phi_sigma_sq(&self) -> f64 {
        self.phi_sigma_sq
    }

    pub fn row(&self, i: usize) -> &[Entry] {
        &self.rows[i]
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_hyps];
        for &(j, v) in &self.rows[i] {
            out[j as usize] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Tanimoto distance between two points; all-zero pairs are at distance 1.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let dot = sparse_dot(&self.rows[i], &self.rows[j]);
        let denom = self.sq_norms[i] + self.sq_norms[j] - dot;
        if denom <= 0.0 {
            1.0
        } else {
            (1.0 - dot / denom).clamp(0.0, 1.0)
        }
    }

    /// Writes `row,col,value` triplets with a header line.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,value")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                writeln!(out, "{i},{j},{v}")?;
            }
        }
        Ok(())
    }
}

pub fn sparse_dot(a: &[Entry], b: &[Entry]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Tanimoto distance between sparse vectors, `None` when both are zero.
pub fn sparse_tanimoto(a: &[Entry], b: &[Entry]) -> Option<f64> {
    let dot = sparse_dot(a, b);
    let na: f64 = a.iter().map(|e| e.1 * e.1).sum();
    let nb: f64 = b.iter().map(|e| e.1 * e.1).sum();
    let denom = na + nb - dot;
    (denom > 0.0).then(|| (1.0 - dot / denom).clamp(0.0, 1.0))
}

/// `1 − ⟨a,b⟩ / (‖a‖² + ‖b‖² − ⟨a,b⟩)` on dense vectors.
pub fn tanimoto_distance(a: &[f64], b: &[f64]) -> Result<f64, PreferenceError> {
    if a.len() != b.len() {
        return Err(PreferenceError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na + nb - dot;
    if denom <= 0.0 {
        return Err(PreferenceError::BothZero);
    }
    Ok(1.0 - dot / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Line, Model};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn tanimoto_examples() {
        assert_eq!(tanimoto_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tanimoto_distance(&[1.0, 0.0], &[0.0, 0.4]).unwrap(), 1.0);
        assert!((tanimoto_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(tanimoto_distance(&[0.0, 0.0], &[0.0, 0.0]), Err(PreferenceError::BothZero));
        assert!(matches!(tanimoto_distance(&[0.0], &[0.0, 1.0]), Err(PreferenceError::LengthMismatch(1, 2))));
    }

    #[test]
    fn preference_boundary() {
        let eps = 0.18;
        assert_eq!(preference_value(0.0, eps), 1.0);
        assert!((preference_value(eps, eps) - 0.05).abs() < 1e-12);
        assert_eq!(preference_value(1.01 * eps, eps), 0.0);
    }

    fn line_pool() -> Vec<Hypothesis> {
        [(0.0, 1.0, 0.0), (1.0, 0.0, 0.5), (0.6, 0.8, 0.3)]
            .iter()
            .map(|&(nx, ny, c)| Hypothesis {
                class: Arc::new(Line),
                model: Line::canonical(nx, ny, c),
                source_sample: vec![0, 1],
            })
            .collect()
    }

    #[test]
    fn matrix_matches_dense_formula() {
        let data = PointSet::from_xy(&[[0.0, 0.0], [0.5, 0.05], [0.52, 2.0], [3.0, 3.0], [0.1, 0.2]]);
        let hyps = line_pool();
        let eps = 0.1;
        let m = build_preferences(&data, &hyps, eps).unwrap();
        for i in 0..data.len() {
            let dense = m.dense_row(i);
            let mut nonzero = 0;
            for (j, h) in hyps.iter().enumerate() {
                let e = h.residual(data.point(i));
                let expected = if e <= eps { (-e * e / phi_sigma_sq(eps)).exp() } else { 0.0 };
                assert_eq!(dense[j], expected);
                nonzero += (e <= eps) as usize;
            }
            assert_eq!(m.row(i).len(), nonzero);
        }
        for i in 0..data.len() {
            for j in 0..data.len() {
                let dense = tanimoto_distance(&m.dense_row(i), &m.dense_row(j)).unwrap_or(1.0);
                assert!((m.distance(i, j) - dense).abs() < 1e-12);
            }
        }
        // the far point prefers nothing and sits at distance 1 from all
        assert!(m.row(3).is_empty());
        assert_eq!(m.distance(3, 3), 1.0);
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + m.nnz());
    }

    #[test]
    fn zero_residual_is_full_preference() {
        let data = PointSet::from_xy(&[[0.0, 0.0]]);
        let hyps = vec![Hypothesis {
            class: Arc::new(Line),
            model: Model::new("line", vec![0.0, 1.0, 0.0]),
            source_sample: vec![0, 0],
        }];
        let m = build_preferences(&data, &hyps, 0.5).unwrap();
        assert_eq!(m.row(0), &[(0, 1.0)]);
    }

    #[test]
    fn bad_inputs() {
        let data = PointSet::from_xy(&[[0.0, 0.0]]);
        assert_eq!(build_preferences(&data, &line_pool(), 0.0), Err(PreferenceError::InvalidThreshold(0.0)));
        assert_eq!(build_preferences(&data, &[], 0.1), Err(PreferenceError::EmptyPool));
    }

    fn pref_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..=1.0], 8)
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in pref_vec(), b in pref_vec()) {
            match (tanimoto_distance(&a, &b), tanimoto_distance(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x, y);
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric error"),
            }
        }

        #[test]
        fn exclusive_support_never_helps(a in pref_vec(), b in pref_vec(), k in 0usize..8) {
            // zeroing a coordinate where only one vector is nonzero
            let mut a2 = a.clone();
            if (a[k] > 0.0) != (b[k] > 0.0) && a[k] > 0.0 {
                a2[k] = 0.0;
                if let (Ok(before), Ok(after)) = (tanimoto_distance(&a, &b), tanimoto_distance(&a2, &b)) {
                    prop_assert!(after <= before + 1e-12);
                }
            }
        }
    }
}
