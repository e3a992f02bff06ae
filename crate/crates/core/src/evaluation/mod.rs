//! Ground-truth scoring, synthetic scenes, threshold estimation and sweeps.

mod epsilon;
mod metrics;
mod scenes;
mod sweep;

pub use epsilon::{estimate_epsilon, log_grid, silhouette, EpsilonEstimate, GridPoint};
pub use metrics::{misclassification_error, segmentation_error, EvalError, EvalReport, StructureScore};
pub use scenes::{generate_scene, preset, segment, SceneSpec, StructureSpec, PRESETS};
pub use sweep::{quantile, summarize, sweep, RunRecord, SweepAxis, SweepConfig, SweepRow, SweepTable};
