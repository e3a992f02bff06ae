//! Synthetic 2D scenes with ground truth.
//!
//! Presets (all deterministic given a seed):
//!
//! * `star5`: five segments through the origin, directions `πk/5`, half
//!   length 1, 50 points each with σ = 0.0075, plus 250 uniform outliers
//!   in `[-1, 1]²` (50% outliers).
//! * `circles4`: four disjoint circles in `[-3, 3]²`, 50 points each with
//!   σ = 0.06, plus 86 outliers (30%).
//! * `mixed_conics`: two segments, one circle and one parabola in
//!   `[-3, 3]²`, 50 points each with σ = 0.06, plus 86 outliers (30%).
//!   The segments cut two corners of the box and end on its edges, and the
//!   parabola arms reach the bottom edge, so the inlier bands of the full
//!   models hold few points beyond the sampled extents. The two corner cuts
//!   have different slopes, which keeps the segments off any common circle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::metrics::EvalError;
use crate::geometry::{Line, PointSet};

/// One generating structure.
///
/// `extent` is the sampled parameter range: signed arclength from the foot
/// of the origin for lines, angle in radians for circles, abscissa for
/// parabolas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub class: String,
    pub params: Vec<f64>,
    pub extent: [f64; 2],
    pub count: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub structures: Vec<StructureSpec>,
    pub outlier_count: usize,
    /// `[x_min, y_min, x_max, y_max]`.
    pub bbox: [f64; 4],
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["star5", "circles4", "mixed_conics"];

impl SceneSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidScene(m));
        let [x0, y0, x1, y1] = self.bbox;
        if !(x0 < x1 && y0 < y1) {
            return bad(format!("empty bounding box {:?}", self.bbox));
        }
        if self.structures.iter().map(|s| s.count).sum::<usize>() + self.outlier_count == 0 {
            return bad("scene has no points".into());
        }
        for s in &self.structures {
            let arity = match s.class.as_str() {
                "line" | "circle" | "parabola" => 3,
                other => return bad(format!("unsupported class `{other}`")),
            };
            if s.params.len() != arity || s.params.iter().any(|p| !p.is_finite()) {
                return bad(format!("bad parameters for {}: {:?}", s.class, s.params));
            }
            if !(s.noise >= 0.0) || !(s.extent[0] <= s.extent[1]) {
                return bad(format!("bad noise or extent for {}", s.class));
            }
            if s.class == "line" && s.params[0].hypot(s.params[1]) == 0.0 {
                return bad("line normal is zero".into());
            }
            if s.class == "circle" && !(s.params[2] > 0.0) {
                return bad("circle radius must be positive".into());
            }
        }
        Ok(())
    }

    /// Ground-truth share of outliers.
    pub fn outlier_rate(&self) -> f64 {
        let inliers: usize = self.structures.iter().map(|s| s.count).sum();
        self.outlier_count as f64 / (inliers + self.outlier_count) as f64
    }

    /// Same scene with the outlier count set to reach `rate`.
    pub fn with_outlier_rate(&self, rate: f64) -> Self {
        let inliers: usize = self.structures.iter().map(|s| s.count).sum();
        let count = (rate / (1.0 - rate) * inliers as f64).round() as usize;
        Self { outlier_count: count, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Segment from `p` to `q` as a line structure.
pub fn segment(p: [f64; 2], q: [f64; 2], count: usize, noise: f64) -> StructureSpec {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let model = Line::canonical(-dy, dx, -dy * p[0] + dx * p[1]);
    let (nx, ny) = (model.params[0], model.params[1]);
    let along = |r: [f64; 2]| -ny * r[0] + nx * r[1];
    let (a, b) = (along(p), along(q));
    StructureSpec { class: "line".into(), params: model.params, extent: [a.min(b), a.max(b)], count, noise }
}

pub fn preset(name: &str, seed: u64) -> Option<SceneSpec> {
    let spec = match name {
        "star5" => {
            let structures = (0..5)
                .map(|k| {
                    let theta = std::f64::consts::PI * k as f64 / 5.0;
                    let (c, s) = (theta.cos(), theta.sin());
                    segment([-c, -s], [c, s], 50, 0.0075)
                })
                .collect();
            SceneSpec { structures, outlier_count: 250, bbox: [-1.0, -1.0, 1.0, 1.0], seed }
        }
        "circles4" => {
            let circle = |cx: f64, cy: f64, r: f64| StructureSpec {
                class: "circle".into(),
                params: vec![cx, cy, r],
                extent: [0.0, std::f64::consts::TAU],
                count: 50,
                noise: 0.06,
            };
            SceneSpec {
                structures: vec![
                    circle(-1.5, -1.5, 1.0),
                    circle(1.5, -1.5, 1.2),
                    circle(-1.2, 1.5, 0.9),
                    circle(1.4, 1.4, 1.1),
                ],
                outlier_count: 86,
                bbox: [-3.0, -3.0, 3.0, 3.0],
                seed,
            }
        }
        "mixed_conics" => SceneSpec {
            structures: vec![
                segment([-3.0, -0.8], [-2.2, -3.0], 50, 0.06),
                segment([1.5, 3.0], [3.0, 1.5], 50, 0.06),
                StructureSpec {
                    class: "circle".into(),
                    params: vec![-1.5, 1.5, 0.7],
                    extent: [0.0, std::f64::consts::TAU],
                    count: 50,
                    noise: 0.06,
                },
                // y = -2 (x - 1.6)² - 1.6, down to the bottom edge
                StructureSpec {
                    class: "parabola".into(),
                    params: vec![-2.0, 6.4, -6.72],
                    extent: [1.6 - 0.7f64.sqrt(), 1.6 + 0.7f64.sqrt()],
                    count: 50,
                    noise: 0.06,
                },
            ],
            outlier_count: 86,
            bbox: [-3.0, -3.0, 3.0, 3.0],
            seed,
        },
        _ => return None,
    };
    Some(spec)
}

/// Samples every structure uniformly over its extent, perturbs each point
/// along the curve normal and appends uniform outliers. Structure `s` gets
/// label `s + 1`, outliers label 0.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointSet, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (s, st) in spec.structures.iter().enumerate() {
        let noise = Normal::new(0.0, st.noise).map_err(|e| EvalError::InvalidScene(e.to_string()))?;
        let p = &st.params;
        for _ in 0..st.count {
            let t =
                if st.extent[0] < st.extent[1] { rng.random_range(st.extent[0]..st.extent[1]) } else { st.extent[0] };
            let e = noise.sample(&mut rng);
            let (x, y) = match st.class.as_str() {
                "line" => {
                    let norm = p[0].hypot(p[1]);
                    let (nx, ny, c) = (p[0] / norm, p[1] / norm, p[2] / norm);
                    (c * nx - t * ny + e * nx, c * ny + t * nx + e * ny)
                }
                "circle" => {
                    let r = p[2] + e;
                    (p[0] + r * t.cos(), p[1] + r * t.sin())
                }
                _ => {
                    let y = (p[0] * t + p[1]) * t + p[2];
                    let slope = 2.0 * p[0] * t + p[1];
                    let norm = slope.hypot(1.0);
                    (t - e * slope / norm, y + e / norm)
                }
            };
            coords.extend([x, y]);
            labels.push(s as u32 + 1);
        }
    }
    let [x0, y0, x1, y1] = spec.bbox;
    for _ in 0..spec.outlier_count {
        coords.extend([rng.random_range(x0..x1), rng.random_range(y0..y1)]);
        labels.push(0);
    }
    PointSet::new(2, coords, Some(labels)).map_err(|e| EvalError::InvalidScene(e.to_string()))
}
