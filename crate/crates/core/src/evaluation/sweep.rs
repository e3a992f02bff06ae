//! Parameter sweeps over synthetic scenes, aggregated per setting.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{segmentation_error, EvalError};
use super::scenes::{generate_scene, SceneSpec};
use crate::geometry::parse_class_list;
use crate::pipeline::{cluster, prepare, Algorithm, PipelineConfig};
use crate::sampling::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Inlier threshold, in coordinate units.
    Epsilon,
    /// Share of outliers in the scene, in `[0, 1)`.
    OutlierRate,
    /// Hypotheses sampled per class.
    Hypotheses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scene: SceneSpec,
    pub classes: Vec<String>,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub hypotheses_per_class: usize,
    #[serde(default)]
    pub locality_sigma: Option<f64>,
    /// Smallest structure kept; `None` uses the pipeline default.
    #[serde(default)]
    pub min_structure_size: Option<usize>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_true")]
    pub validate: bool,
    #[serde(default)]
    pub parallel: bool,
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::MultiLink, Algorithm::TLinkage]
}

fn default_true() -> bool {
    true
}

/// Outcome of one (setting, seed, algorithm) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub value: f64,
    pub seed: u64,
    pub me: Option<f64>,
    pub structures: Option<usize>,
    /// Hash of the hypothesis pool shared by every algorithm on this seed.
    pub pool_hash: Option<u64>,
    pub hypothesis_seconds: f64,
    pub clustering_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub value: f64,
    pub runs: usize,
    pub failures: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean_hypothesis_seconds: f64,
    pub mean_clustering_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunRecord>,
}

impl SweepTable {
    pub fn row(&self, algorithm: Algorithm, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.value == value)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for run in &self.runs {
            w.serialize(run)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Aggregates the runs of one (algorithm, value) cell.
pub fn summarize(algorithm: Algorithm, value: f64, runs: &[&RunRecord]) -> SweepRow {
    let mut mes: Vec<f64> = runs.iter().filter_map(|r| r.me).collect();
    mes.sort_by(f64::total_cmp);
    let stat = |q: f64| (!mes.is_empty()).then(|| quantile(&mes, q));
    let mean = |f: fn(&RunRecord) -> f64| {
        if runs.is_empty() {
            0.0
        } else {
            runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64
        }
    };
    let (q1, q3) = (stat(0.25), stat(0.75));
    SweepRow {
        algorithm,
        value,
        runs: runs.len(),
        failures: runs.len() - mes.len(),
        median: stat(0.5),
        q1,
        q3,
        iqr: q1.zip(q3).map(|(a, b)| b - a),
        min: mes.first().copied(),
        max: mes.last().copied(),
        mean_hypothesis_seconds: mean(|r| r.hypothesis_seconds),
        mean_clustering_seconds: mean(|r| r.clustering_seconds),
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSweep(m.into()));
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        if self.values.is_empty() {
            return bad("sweep grid is empty");
        }
        if self.algorithms.is_empty() {
            return bad("no algorithm selected");
        }
        let ok = self.values.iter().all(|&v| match self.axis {
            SweepAxis::Epsilon => v > 0.0 && v.is_finite(),
            SweepAxis::OutlierRate => (0.0..1.0).contains(&v),
            SweepAxis::Hypotheses => v >= 1.0 && v.fract() == 0.0,
        });
        if !ok {
            return bad("grid value outside the axis domain");
        }
        if parse_class_list(&self.classes.join(",")).is_err() {
            return bad("unknown model class");
        }
        self.scene.validate()
    }

    fn run_cell(&self, value: f64, seed: u64) -> Vec<RunRecord> {
        let failed = |algorithm, msg: String, hyp_secs| RunRecord {
            algorithm,
            value,
            seed,
            me: None,
            structures: None,
            pool_hash: None,
            hypothesis_seconds: hyp_secs,
            clustering_seconds: 0.0,
            error: Some(msg),
        };
        let fail_all = |msg: String| self.algorithms.iter().map(|&a| failed(a, msg.clone(), 0.0)).collect();

        let mut scene = self.scene.with_seed(seed);
        let mut epsilon = self.epsilon;
        let mut per_class = self.hypotheses_per_class;
        match self.axis {
            SweepAxis::Epsilon => epsilon = value,
            SweepAxis::OutlierRate => scene = scene.with_outlier_rate(value),
            SweepAxis::Hypotheses => per_class = value as usize,
        }
        let data = match generate_scene(&scene) {
            Ok(d) => d,
            Err(e) => return fail_all(e.to_string()),
        };
        let classes = match parse_class_list(&self.classes.join(",")) {
            Ok(c) => c,
            Err(e) => return fail_all(e.to_string()),
        };
        let mut sampler = SamplerConfig::uniform(vec![per_class; classes.len()], seed);
        if let Some(s) = self.locality_sigma {
            sampler = sampler.localized(s);
        }
        let mut cfg = PipelineConfig::new(classes, epsilon, sampler);
        cfg.validate = self.validate;
        cfg.min_structure_size = self.min_structure_size;
        let prepared = match prepare(&data, &cfg) {
            Ok(p) => p,
            Err(e) => return fail_all(e.to_string()),
        };
        self.algorithms
            .iter()
            .map(|&algorithm| match cluster(&data, &cfg, &prepared, algorithm) {
                Ok((seg, secs)) => match segmentation_error(&seg, data.labels()) {
                    Ok(report) => RunRecord {
                        algorithm,
                        value,
                        seed,
                        me: Some(report.me),
                        structures: Some(seg.structures.len()),
                        pool_hash: Some(prepared.pool_hash),
                        hypothesis_seconds: prepared.seconds,
                        clustering_seconds: secs,
                        error: None,
                    },
                    Err(e) => failed(algorithm, e.to_string(), prepared.seconds),
                },
                Err(e) => failed(algorithm, e.to_string(), prepared.seconds),
            })
            .collect()
    }
}

/// Runs every (value, seed) cell on a shared hypothesis pool per seed and
/// aggregates the misclassification error per (algorithm, value). Failed
/// runs are kept as records with an error and no ME.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepTable, EvalError> {
    cfg.validate()?;
    let cells: Vec<(f64, u64)> = cfg.values.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let runs: Vec<RunRecord> = if cfg.parallel {
        cells.par_iter().flat_map_iter(|&(v, s)| cfg.run_cell(v, s)).collect()
    } else {
        cells.iter().flat_map(|&(v, s)| cfg.run_cell(v, s)).collect()
    };
    let mut rows = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &value in &cfg.values {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.algorithm == algorithm && r.value == value).collect();
            rows.push(summarize(algorithm, value, &cell));
        }
    }
    Ok(SweepTable { axis: cfg.axis, rows, runs })
}
