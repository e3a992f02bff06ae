//! Command-line surface: fitting, evaluation, synthesis, plotting and sweeps.
//!
//! Every command computes its outputs completely before writing them, and
//! each file is written to a temporary sibling and renamed into place, so a
//! failed run never leaves a partial output behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{MergeRecord, Segmentation};
use crate::evaluation::{
    estimate_epsilon, generate_scene, misclassification_error, preset, sweep, EpsilonEstimate, EvalError, EvalReport,
    SceneSpec, SweepConfig, PRESETS,
};
use crate::geometry::{class_by_name, parse_class_list, GeometryError, Model, PointSet};
use crate::pipeline::{run, Algorithm, PipelineConfig, PipelineError};
use crate::sampling::SamplerConfig;
use crate::selection::{GricConfig, SelectionError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Parser)]
#[command(name = "multilink", version, about = "Multi-class robust model fitting")]
pub struct Cli {
    /// Worker threads for sampling, embedding and sweeps.
    #[arg(long, global = true, env = "MULTILINK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit structures to a point file.
    Fit(FitArgs),
    /// Score a segmentation against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic scene.
    Synth(SynthArgs),
    /// Render a scene and its segmentation as SVG.
    Plot(PlotArgs),
    /// Run a parameter sweep.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Point CSV with header `x,y[,label]`.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated model classes.
    #[arg(long, default_value = "line")]
    pub classes: String,
    /// Inlier threshold, or `auto:LO:HI` to pick it by silhouette.
    #[arg(long)]
    pub epsilon: String,
    /// Grid size of the automatic threshold search.
    #[arg(long, default_value_t = 10)]
    pub epsilon_budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hypotheses per class, one value for all or one per class.
    #[arg(long, default_value = "1000")]
    pub hypotheses: String,
    /// Bias minimal samples toward their first point with this spread.
    #[arg(long)]
    pub locality: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda2: f64,
    /// Residual scale of the GRIC; defaults to half the threshold.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Smallest structure kept; smaller clusters become outliers.
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long, default_value = "multilink")]
    pub algorithm: Algorithm,
    /// Keep every sampled hypothesis instead of the significant ones.
    #[arg(long)]
    pub no_validate: bool,
    /// Report the clusters of the agglomeration without reassignment.
    #[arg(long)]
    pub no_refine: bool,
    /// Include the merge log in the output.
    #[arg(long)]
    pub merge_log: bool,
    /// Segmentation JSON to write.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Segmentation JSON written by `fit`, or a point CSV with labels.
    #[arg(long)]
    pub pred: PathBuf,
    /// Point CSV with ground-truth labels.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Preset name.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// Scene spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed; overrides the one in a spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resize the outlier set to this share of all points.
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    /// Point CSV to write.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Point CSV.
    #[arg(long)]
    pub scene: PathBuf,
    /// Segmentation JSON written by `fit`; omitted means every point is gray.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Width and height in pixels.
    #[arg(long, default_value_t = 600)]
    pub size: u32,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Sweep config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Summary table CSV.
    #[arg(long)]
    pub csv: PathBuf,
    /// Full table JSON with every run.
    #[arg(long)]
    pub json: PathBuf,
}

/// One structure of a written segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureOut {
    /// Label used in `labels`.
    pub label: u32,
    pub class: String,
    pub params: Vec<f64>,
    pub gric: f64,
    pub members: Vec<usize>,
}

/// Segmentation file written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub classes: Vec<String>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_search: Option<EpsilonEstimate>,
    pub seed: u64,
    pub hypotheses_sampled: usize,
    pub hypotheses_kept: usize,
    pub pool_hash: u64,
    pub points: usize,
    pub structures: Vec<StructureOut>,
    pub outliers: Vec<usize>,
    /// Per point: 0 for outliers, otherwise the structure label.
    pub labels: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_log: Option<Vec<MergeRecord>>,
}

impl FitOutput {
    fn from_segmentation(seg: &Segmentation, n: usize) -> (Vec<StructureOut>, Vec<u32>) {
        let structures = seg
            .structures
            .iter()
            .enumerate()
            .map(|(s, st)| StructureOut {
                label: s as u32 + 1,
                class: st.class.clone(),
                params: st.model.params.clone(),
                gric: st.gric,
                members: st.members.clone(),
            })
            .collect();
        (structures, seg.labels(n))
    }
}

enum EpsilonArg {
    Fixed(f64),
    Auto(f64, f64),
}

fn parse_epsilon(s: &str) -> Result<EpsilonArg, CliError> {
    let bad = || CliError::Config(format!("epsilon must be a positive number or auto:LO:HI, got `{s}`"));
    if let Some(rest) = s.strip_prefix("auto:") {
        let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(bad());
        }
        return Ok(EpsilonArg::Auto(lo, hi));
    }
    let v: f64 = s.parse().map_err(|_| bad())?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad());
    }
    Ok(EpsilonArg::Fixed(v))
}

fn parse_counts(s: &str, classes: usize) -> Result<Vec<usize>, CliError> {
    let values: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("bad hypothesis counts `{s}`")))?;
    match values.len() {
        1 => Ok(vec![values[0]; classes]),
        k if k == classes => Ok(values),
        k => Err(CliError::Config(format!("{k} hypothesis counts for {classes} classes"))),
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Parses a point CSV with header `x,y` and an optional `label` column.
pub fn parse_points_csv(text: &str, path: &Path) -> Result<PointSet, CliError> {
    let err = |message: String| CliError::Parse { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_owned).collect();
    let with_labels = match header.as_slice() {
        [x, y] if x == "x" && y == "y" => false,
        [x, y, l] if x == "x" && y == "y" && l == "label" => true,
        _ => return Err(err(format!("expected header x,y[,label], got {}", header.join(",")))),
    };
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let line = row + 2;
        let coord = |k: usize| -> Result<f64, CliError> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("line {line}: bad coordinate `{}`", &record[k])))
        };
        coords.push(coord(0)?);
        coords.push(coord(1)?);
        if with_labels {
            labels.push(record[2].parse::<u32>().map_err(|_| err(format!("line {line}: bad label `{}`", &record[2])))?);
        }
    }
    if coords.is_empty() {
        return Err(err("no points".into()));
    }
    PointSet::new(2, coords, with_labels.then_some(labels)).map_err(|e| err(e.to_string()))
}

pub fn read_points(path: &Path) -> Result<PointSet, CliError> {
    parse_points_csv(&read_file(path)?, path)
}

/// Point CSV text; coordinates use the shortest representation that parses
/// back to the same value.
pub fn points_csv(points: &PointSet) -> Result<String, CliError> {
    if points.dim() != 2 {
        return Err(CliError::Config(format!("point files are planar, got dimension {}", points.dim())));
    }
    let mut out = String::new();
    match points.labels() {
        Some(labels) => {
            out.push_str("x,y,label\n");
            for (p, l) in points.iter().zip(labels) {
                let _ = writeln!(out, "{:?},{:?},{l}", p[0], p[1]);
            }
        }
        None => {
            out.push_str("x,y\n");
            for p in points.iter() {
                let _ = writeln!(out, "{:?},{:?}", p[0], p[1]);
            }
        }
    }
    Ok(out)
}

/// Configuration of a fit at a fixed threshold.
fn pipeline_config(args: &FitArgs, epsilon: f64) -> Result<PipelineConfig, CliError> {
    let classes = parse_class_list(&args.classes)?;
    let counts = parse_counts(&args.hypotheses, classes.len())?;
    let mut sampler = SamplerConfig::uniform(counts, args.seed);
    if let Some(sigma) = args.locality {
        sampler = sampler.localized(sigma);
    }
    let mut cfg = PipelineConfig::new(classes, epsilon, sampler);
    cfg.validate = !args.no_validate;
    cfg.gric = Some(GricConfig::new(args.lambda1, args.lambda2, args.sigma.unwrap_or(epsilon / 2.0))?);
    cfg.min_structure_size = args.min_size;
    cfg.algorithm = args.algorithm;
    cfg.record_log = args.merge_log;
    cfg.refine_assignment = !args.no_refine;
    Ok(cfg)
}

/// Runs a fit and returns the output file contents and a one-line summary.
pub fn fit(args: &FitArgs) -> Result<(FitOutput, String), CliError> {
    let data = read_points(&args.input)?;
    let (epsilon, search) = match parse_epsilon(&args.epsilon)? {
        EpsilonArg::Fixed(e) => (e, None),
        EpsilonArg::Auto(lo, hi) => {
            if args.sigma.is_none() && (args.lambda1, args.lambda2) != (1.0, 2.0) {
                return Err(CliError::Config("automatic threshold with custom lambdas needs --sigma".into()));
            }
            let mut probe = pipeline_config(args, lo)?;
            probe.record_log = false;
            probe.gric = args.sigma.map(|s| GricConfig::new(args.lambda1, args.lambda2, s)).transpose()?;
            let est = estimate_epsilon(&data, &probe, [lo, hi], args.epsilon_budget)?;
            (est.epsilon, Some(est))
        }
    };
    let cfg = pipeline_config(args, epsilon)?;
    let start = Instant::now();
    let out = run(&data, &cfg)?;
    let total = start.elapsed().as_secs_f64();
    let (structures, labels) = FitOutput::from_segmentation(&out.segmentation, data.len());
    let output = FitOutput {
        schema_version: SCHEMA_VERSION,
        algorithm: args.algorithm,
        classes: cfg.classes.iter().map(|c| c.id().to_string()).collect(),
        epsilon,
        epsilon_search: search,
        seed: args.seed,
        hypotheses_sampled: out.prepared.sampled,
        hypotheses_kept: out.prepared.hyps.len(),
        pool_hash: out.prepared.pool_hash,
        points: data.len(),
        structures,
        outliers: out.segmentation.outliers.clone(),
        labels,
        merge_log: args.merge_log.then(|| out.segmentation.merge_log.clone()),
    };
    let mut summary = String::new();
    for class in &output.classes {
        let count = output.structures.iter().filter(|s| &s.class == class).count();
        let _ = write!(summary, "{class}: {count}, ");
    }
    let _ = write!(
        summary,
        "outliers: {}, epsilon {}, hypotheses {:.3}s, clustering {:.3}s, total {:.3}s",
        output.outliers.len(),
        epsilon,
        out.timings.hypotheses,
        out.timings.clustering,
        total
    );
    Ok((output, summary))
}

pub fn cmd_fit(args: &FitArgs) -> Result<String, CliError> {
    let (output, summary) = fit(args)?;
    write_atomic(&args.output, &to_json(&output))?;
    Ok(summary)
}

/// Predicted labels from a segmentation JSON or a labelled point CSV.
fn read_predicted(path: &Path) -> Result<Vec<u32>, CliError> {
    let text = read_file(path)?;
    if text.trim_start().starts_with('{') {
        let out: FitOutput = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        return Ok(out.labels);
    }
    let points = parse_points_csv(&text, path)?;
    points
        .labels()
        .map(<[u32]>::to_vec)
        .ok_or_else(|| CliError::Parse { path: path.to_path_buf(), message: "no label column".into() })
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let predicted = read_predicted(&args.pred)?;
    let truth = read_points(&args.truth)?;
    let labels = truth.labels().ok_or(EvalError::MissingGroundTruth)?;
    Ok(misclassification_error(&predicted, labels)?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let report = eval(args)?;
    if let Some(path) = &args.output {
        write_atomic(path, &to_json(&report))?;
    }
    Ok(format!("ME {:.2}%", report.me * 100.0))
}

pub fn synth(args: &SynthArgs) -> Result<(SceneSpec, PointSet), CliError> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), _) => preset(name, args.seed.unwrap_or(0)).ok_or_else(|| {
            CliError::Config(format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", ")))
        })?,
        (None, Some(path)) => {
            let mut spec: SceneSpec = from_json(path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        (None, None) => return Err(CliError::Config("either --preset or --spec is required".into())),
    };
    if let Some(rate) = args.outlier_rate {
        if !(0.0..1.0).contains(&rate) {
            return Err(CliError::Config(format!("outlier rate must lie in [0, 1), got {rate}")));
        }
        spec = spec.with_outlier_rate(rate);
    }
    let points = generate_scene(&spec)?;
    Ok((spec, points))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String, CliError> {
    let (spec, points) = synth(args)?;
    write_atomic(&args.output, points_csv(&points)?.as_bytes())?;
    let counts: Vec<String> = spec.structures.iter().map(|s| format!("{} {}", s.class, s.count)).collect();
    Ok(format!(
        "{} points: {}{}outliers {}",
        points.len(),
        counts.join(", "),
        if counts.is_empty() { "" } else { ", " },
        spec.outlier_count
    ))
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

/// Deterministic SVG of `points` coloured by `labels`, with the structure
/// models drawn over them.
pub fn render_svg(points: &PointSet, labels: &[u32], models: &[(u32, Model)], size: u32) -> Result<String, CliError> {
    if labels.len() != points.len() {
        return Err(CliError::Config(format!("segmentation has {} labels for {} points", labels.len(), points.len())));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points.iter() {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let pad = 0.05 * span;
    let (x0, y0, span) = (x0 - pad, y0 - pad, span + 2.0 * pad);
    let s = size as f64;
    let px = |x: f64| (x - x0) / span * s;
    let py = |y: f64| s - (y - y0) / span * s;
    let color = |l: u32| {
        if l == 0 {
            "#b0b0b0"
        } else {
            PALETTE[(l as usize - 1) % PALETTE.len()]
        }
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    for (p, &l) in points.iter().zip(labels) {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, px(p[0]), py(p[1]), color(l));
    }
    let (xa, xb, ya, yb) = (x0, x0 + span, y0, y0 + span);
    for (label, model) in models {
        let stroke = color(*label);
        let p = &model.params;
        let path: Vec<(f64, f64)> = match model.class.as_str() {
            "line" if p.len() == 3 => {
                let (nx, ny, c) = (p[0], p[1], p[2]);
                let mut ends = Vec::new();
                if ny.abs() > 1e-12 {
                    for x in [xa, xb] {
                        let y = (c - nx * x) / ny;
                        if (ya..=yb).contains(&y) {
                            ends.push((x, y));
                        }
                    }
                }
                if nx.abs() > 1e-12 {
                    for y in [ya, yb] {
                        let x = (c - ny * y) / nx;
                        if (xa..=xb).contains(&x) {
                            ends.push((x, y));
                        }
                    }
                }
                ends.truncate(2);
                ends
            }
            "circle" if p.len() == 3 => (0..=128)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 128.0;
                    (p[0] + p[2] * t.cos(), p[1] + p[2] * t.sin())
                })
                .collect(),
            "parabola" if p.len() == 3 => (0..=256)
                .map(|k| xa + span * k as f64 / 256.0)
                .map(|x| (x, (p[0] * x + p[1]) * x + p[2]))
                .filter(|&(_, y)| (ya..=yb).contains(&y))
                .collect(),
            _ => Vec::new(),
        };
        if path.len() < 2 {
            continue;
        }
        let coords: Vec<String> = path.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn plot(args: &PlotArgs) -> Result<String, CliError> {
    let points = read_points(&args.scene)?;
    let (labels, models) = match &args.segmentation {
        Some(path) => {
            let seg: FitOutput = from_json(path)?;
            for s in &seg.structures {
                class_by_name(&s.class)?;
            }
            let models =
                seg.structures.iter().map(|s| (s.label, Model::new(s.class.clone(), s.params.clone()))).collect();
            (seg.labels, models)
        }
        None => (vec![0; points.len()], Vec::new()),
    };
    render_svg(&points, &labels, &models, args.size)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<String, CliError> {
    let svg = plot(args)?;
    write_atomic(&args.output, svg.as_bytes())?;
    Ok(format!("wrote {}", args.output.display()))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let cfg: SweepConfig = from_json(&args.config)?;
    let table = sweep(&cfg)?;
    let mut csv_out = Vec::new();
    table.write_csv(&mut csv_out).map_err(|e| CliError::Config(e.to_string()))?;
    let json = to_json(&table);
    write_atomic(&args.csv, &csv_out)?;
    write_atomic(&args.json, &json)?;
    Ok(format!("{} rows, {} runs", table.rows.len(), table.runs.len()))
}

/// Runs one parsed command and returns the line to print.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}
