//! Model classes and the point container they operate on.
//!
//! A [`ModelClass`] knows how to instantiate a model from a minimal sample,
//! refit it to an arbitrary cluster and measure the geometric residual of a
//! point. The clustering engine only talks to this trait, so adding a class
//! (homographies, planes, ...) never touches the engine.
//!
//! Shipped classes live in the plane (`r = 2`) and are curves (`d = 1`):
//!
//! | class      | params                      | kappa | minimal sample |
//! |------------|-----------------------------|-------|----------------|
//! | `line`     | `[n_x, n_y, c]`, `n·x = c`  | 2     | 2              |
//! | `circle`   | `[c_x, c_y, radius]`        | 3     | 3              |
//! | `parabola` | `[a, b, c]`, `y = ax²+bx+c` | 3     | 3              |

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate sample for class `{class}`: {reason}")]
    DegenerateSample { class: String, reason: &'static str },
    #[error("degenerate cluster for class `{class}`: {reason}")]
    DegenerateCluster { class: String, reason: &'static str },
    #[error("class `{class}` needs {needed} points, got {got}")]
    WrongSampleSize { class: String, needed: usize, got: usize },
    #[error("invalid point set: {0}")]
    InvalidPointSet(String),
    #[error("unknown model class `{0}`")]
    UnknownClass(String),
}

/// Points of a common dimension stored row-major, with optional ground truth.
///
/// Ground-truth label `0` marks an outlier.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    labels: Option<Vec<u32>>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>, labels: Option<Vec<u32>>) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidPointSet("dimension must be positive".into()));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(GeometryError::InvalidPointSet(format!(
                "{} coordinates do not form a nonempty set of {dim}-d points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPointSet("non-finite coordinate".into()));
        }
        let n = coords.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GeometryError::InvalidPointSet(format!("{} labels for {n} points", l.len())));
            }
        }
        Ok(Self { dim, coords, labels })
    }

    /// Planar points without labels.
    ///
    /// # Panics
    /// If `points` is empty or holds a non-finite coordinate.
    pub fn from_xy(points: &[[f64; 2]]) -> Self {
        let coords = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(2, coords, None).expect("valid planar point list")
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self, GeometryError> {
        if labels.len() != self.len() {
            return Err(GeometryError::InvalidPointSet(format!("{} labels for {} points", labels.len(), self.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, coords: self.coords.iter().map(|c| c * factor).collect(), labels: self.labels.clone() }
    }

    /// Largest absolute coordinate, used to make degeneracy tolerances scale-free.
    fn extent(&self, idx: &[usize]) -> f64 {
        idx.iter().flat_map(|&i| self.point(i).iter()).fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// A fitted or sampled model instance in its class's canonical parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub class: String,
    pub params: Vec<f64>,
}

impl Model {
    pub fn new(class: impl Into<String>, params: Vec<f64>) -> Self {
        Self { class: class.into(), params }
    }
}

/// One family of parametric models.
pub trait ModelClass: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    /// Ambient dimension `r` of the data.
    fn ambient_dim(&self) -> usize;
    /// Dimension `d` of the zero set of a model instance.
    fn manifold_dim(&self) -> usize;
    /// Number of model parameters `kappa`.
    fn num_params(&self) -> usize;
    fn min_sample_size(&self) -> usize;

    /// The unique model through exactly `min_sample_size` points.
    fn fit_minimal(&self, data: &PointSet, sample: &[usize]) -> Result<Model, GeometryError>;

    /// Least-squares model on a cluster of at least `min_sample_size` points.
    fn fit_cluster(&self, data: &PointSet, members: &[usize]) -> Result<Model, GeometryError>;

    /// Geometric distance from `point` to the zero set of `model`.
    fn residual(&self, model: &Model, point: &[f64]) -> f64;
}

pub type ClassRef = Arc<dyn ModelClass>;

/// Resolves a shipped class by name.
pub fn class_by_name(name: &str) -> Result<ClassRef, GeometryError> {
    match name.trim() {
        "line" => Ok(Arc::new(Line)),
        "circle" => Ok(Arc::new(Circle)),
        "parabola" => Ok(Arc::new(Parabola)),
        other => Err(GeometryError::UnknownClass(other.to_string())),
    }
}

/// Parses a comma separated class list such as `line,circle`.
pub fn parse_class_list(list: &str) -> Result<Vec<ClassRef>, GeometryError> {
    let classes = list.split(',').filter(|s| !s.trim().is_empty()).map(class_by_name).collect::<Result<Vec<_>, _>>()?;
    if classes.is_empty() {
        return Err(GeometryError::UnknownClass(list.to_string()));
    }
    Ok(classes)
}

fn check_sample(class: &dyn ModelClass, sample: &[usize]) -> Result<(), GeometryError> {
    if sample.len() != class.min_sample_size() {
        return Err(GeometryError::WrongSampleSize {
            class: class.id().to_string(),
            needed: class.min_sample_size(),
            got: sample.len(),
        });
    }
    Ok(())
}

fn check_cluster(class: &dyn ModelClass, members: &[usize]) -> Result<(), GeometryError> {
    if members.len() < class.min_sample_size() {
        return Err(GeometryError::WrongSampleSize {
            class: class.id().to_string(),
            needed: class.min_sample_size(),
            got: members.len(),
        });
    }
    Ok(())
}

fn xy(data: &PointSet, i: usize) -> (f64, f64) {
    let p = data.point(i);
    (p[0], p[1])
}

const REL_TOL: f64 = 1e-12;

/// Straight line `n·x = c` with unit normal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Line;

impl Line {
    /// Unit normal with `n_y > 0`, or `n_y = 0` and `n_x > 0`.
    pub fn canonical(nx: f64, ny: f64, c: f64) -> Model {
        let norm = nx.hypot(ny);
        let (mut nx, mut ny, mut c) = (nx / norm, ny / norm, c / norm);
        if ny < 0.0 || (ny == 0.0 && nx < 0.0) {
            nx = -nx;
            ny = -ny;
            c = -c;
        }
        // avoid -0.0 so serialized models are canonical too
        Model::new("line", vec![nx + 0.0, ny + 0.0, c + 0.0])
    }
}

impl ModelClass for Line {
    fn id(&self) -> &str {
        "line"
    }
    fn ambient_dim(&self) -> usize {
        2
    }
    fn manifold_dim(&self) -> usize {
        1
    }
    fn num_params(&self) -> usize {
        2
    }
    fn min_sample_size(&self) -> usize {
        2
    }

    fn fit_minimal(&self, data: &PointSet, sample: &[usize]) -> Result<Model, GeometryError> {
        check_sample(self, sample)?;
        let (x0, y0) = xy(data, sample[0]);
        let (x1, y1) = xy(data, sample[1]);
        let (dx, dy) = (x1 - x0, y1 - y0);
        if dx.hypot(dy) <= REL_TOL * (1.0 + data.extent(sample)) {
            return Err(GeometryError::DegenerateSample { class: "line".into(), reason: "coincident points" });
        }
        let (nx, ny) = (-dy, dx);
        Ok(Line::canonical(nx, ny, nx * x0 + ny * y0))
    }

    /// Orthogonal regression: the normal is the minor axis of the scatter matrix.
    fn fit_cluster(&self, data: &PointSet, members: &[usize]) -> Result<Model, GeometryError> {
        check_cluster(self, members)?;
        let n = members.len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        for &i in members {
            let (x, y) = xy(data, i);
            mx += x;
            my += y;
        }
        mx /= n;
        my /= n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &i in members {
            let (x, y) = xy(data, i);
            let (u, v) = (x - mx, y - my);
            sxx += u * u;
            sxy += u * v;
            syy += v * v;
        }
        let scale = data.extent(members);
        if sxx + syy <= (REL_TOL * (1.0 + scale)).powi(2) * n {
            return Err(GeometryError::DegenerateCluster { class: "line".into(), reason: "all points coincide" });
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (nx, ny) = (-theta.sin(), theta.cos());
        Ok(Line::canonical(nx, ny, nx * mx + ny * my))
    }

    fn residual(&self, model: &Model, point: &[f64]) -> f64 {
        let p = &model.params;
        (p[0] * point[0] + p[1] * point[1] - p[2]).abs()
    }
}

/// Circle with strictly positive radius.
#[derive(Debug, Clone, Copy, Default)]
pub struct Circle;

impl ModelClass for Circle {
    fn id(&self) -> &str {
        "circle"
    }
    fn ambient_dim(&self) -> usize {
        2
    }
    fn manifold_dim(&self) -> usize {
        1
    }
    fn num_params(&self) -> usize {
        3
    }
    fn min_sample_size(&self) -> usize {
        3
    }

    fn fit_minimal(&self, data: &PointSet, sample: &[usize]) -> Result<Model, GeometryError> {
        check_sample(self, sample)?;
        let (x0, y0) = xy(data, sample[0]);
        let (ax, ay) = {
            let (x, y) = xy(data, sample[1]);
            (x - x0, y - y0)
        };
        let (bx, by) = {
            let (x, y) = xy(data, sample[2]);
            (x - x0, y - y0)
        };
        let det = 2.0 * (ax * by - ay * bx);
        let spread = ax.hypot(ay).max(bx.hypot(by));
        if det.abs() <= REL_TOL * (1.0 + data.extent(sample)).powi(2) || spread == 0.0 {
            return Err(GeometryError::DegenerateSample { class: "circle".into(), reason: "collinear points" });
        }
        let a2 = ax * ax + ay * ay;
        let b2 = bx * bx + by * by;
        let ux = (by * a2 - ay * b2) / det;
        let uy = (ax * b2 - bx * a2) / det;
        let radius = ux.hypot(uy);
        if !radius.is_finite() || radius <= 0.0 {
            return Err(GeometryError::DegenerateSample { class: "circle".into(), reason: "collinear points" });
        }
        Ok(Model::new("circle", vec![ux + x0, uy + y0, radius]))
    }

    /// Taubin's algebraic fit, solved by Newton iteration on its
    /// characteristic polynomial (the formulation popularized by Chernov).
    fn fit_cluster(&self, data: &PointSet, members: &[usize]) -> Result<Model, GeometryError> {
        check_cluster(self, members)?;
        let degenerate = |reason| GeometryError::DegenerateCluster { class: "circle".into(), reason };
        let n = members.len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        for &i in members {
            let (x, y) = xy(data, i);
            mx += x;
            my += y;
        }
        mx /= n;
        my /= n;

        let (mut m_xx, mut m_yy, mut m_xy) = (0.0, 0.0, 0.0);
        let (mut m_xz, mut m_yz, mut m_zz) = (0.0, 0.0, 0.0);
        for &i in members {
            let (x, y) = xy(data, i);
            let (u, v) = (x - mx, y - my);
            let z = u * u + v * v;
            m_xx += u * u;
            m_yy += v * v;
            m_xy += u * v;
            m_xz += u * z;
            m_yz += v * z;
            m_zz += z * z;
        }
        m_xx /= n;
        m_yy /= n;
        m_xy /= n;
        m_xz /= n;
        m_yz /= n;
        m_zz /= n;

        let m_z = m_xx + m_yy;
        if m_z <= (REL_TOL * (1.0 + data.extent(members))).powi(2) {
            return Err(degenerate("all points coincide"));
        }
        let cov_xy = m_xx * m_yy - m_xy * m_xy;
        if cov_xy <= REL_TOL * m_z * m_z {
            return Err(degenerate("collinear points"));
        }
        let var_z = m_zz - m_z * m_z;
        let a3 = 4.0 * m_z;
        let a2 = -3.0 * m_z * m_z - m_zz;
        let a1 = var_z * m_z + 4.0 * cov_xy * m_z - m_xz * m_xz - m_yz * m_yz;
        let a0 = m_xz * (m_xz * m_yy - m_yz * m_xy) + m_yz * (m_yz * m_xx - m_xz * m_xy) - var_z * cov_xy;
        let (a22, a33) = (a2 + a2, a3 + a3 + a3);

        let (mut x, mut y) = (0.0f64, a0);
        for _ in 0..100 {
            let dy = a1 + x * (a22 + a33 * x);
            let x_new = x - y / dy;
            if x_new == x || !x_new.is_finite() {
                break;
            }
            let y_new = a0 + x_new * (a1 + x_new * (a2 + x_new * a3));
            if y_new.abs() >= y.abs() {
                break;
            }
            x = x_new;
            y = y_new;
        }

        let det = x * x - x * m_z + cov_xy;
        let cx = (m_xz * (m_yy - x) - m_yz * m_xy) / det / 2.0;
        let cy = (m_yz * (m_xx - x) - m_xz * m_xy) / det / 2.0;
        let radius = (cx * cx + cy * cy + m_z).sqrt();
        if !(cx.is_finite() && cy.is_finite() && radius.is_finite()) || radius <= 0.0 {
            return Err(degenerate("no finite circle"));
        }
        Ok(Model::new("circle", vec![cx + mx, cy + my, radius]))
    }

    fn residual(&self, model: &Model, point: &[f64]) -> f64 {
        let p = &model.params;
        ((point[0] - p[0]).hypot(point[1] - p[1]) - p[2]).abs()
    }
}

/// Axis-aligned parabola `y = a x² + b x + c`, `a ≠ 0`.
///
/// Cluster fits minimize vertical residuals (closed form); the reported
/// residual is always the orthogonal distance to the curve.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parabola;

impl Parabola {
    fn checked(
        a: f64,
        b: f64,
        c: f64,
        x_span: f64,
        y_scale: f64,
        err: impl Fn(&'static str) -> GeometryError,
    ) -> Result<Model, GeometryError> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(err("non-finite coefficients"));
        }
        if a.abs() * x_span * x_span <= REL_TOL * (1.0 + y_scale + x_span) {
            return Err(err("points are collinear"));
        }
        Ok(Model::new("parabola", vec![a, b, c]))
    }
}

impl ModelClass for Parabola {
    fn id(&self) -> &str {
        "parabola"
    }
    fn ambient_dim(&self) -> usize {
        2
    }
    fn manifold_dim(&self) -> usize {
        1
    }
    fn num_params(&self) -> usize {
        3
    }
    fn min_sample_size(&self) -> usize {
        3
    }

    fn fit_minimal(&self, data: &PointSet, sample: &[usize]) -> Result<Model, GeometryError> {
        check_sample(self, sample)?;
        let err = |reason| GeometryError::DegenerateSample { class: "parabola".into(), reason };
        let (x0, y0) = xy(data, sample[0]);
        let (x1, y1) = xy(data, sample[1]);
        let (x2, y2) = xy(data, sample[2]);
        let scale = data.extent(sample);
        let tol = REL_TOL * (1.0 + scale);
        if (x1 - x0).abs() <= tol || (x2 - x0).abs() <= tol || (x2 - x1).abs() <= tol {
            return Err(err("repeated abscissa"));
        }
        let s01 = (y1 - y0) / (x1 - x0);
        let s02 = (y2 - y0) / (x2 - x0);
        let a = (s02 - s01) / (x2 - x1);
        let b = s01 - a * (x0 + x1);
        let c = y0 - a * x0 * x0 - b * x0;
        let span = x0.max(x1).max(x2) - x0.min(x1).min(x2);
        Parabola::checked(a, b, c, span, scale, err)
    }

    fn fit_cluster(&self, data: &PointSet, members: &[usize]) -> Result<Model, GeometryError> {
        check_cluster(self, members)?;
        let err = |reason| GeometryError::DegenerateCluster { class: "parabola".into(), reason };
        let n = members.len();
        let mean = members.iter().map(|&i| data.point(i)[0]).sum::<f64>() / n as f64;
        let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let x = data.point(i)[0];
            (lo.min(x), hi.max(x))
        });
        let span = hi - lo;
        let scale = data.extent(members);
        if span <= REL_TOL * (1.0 + scale) {
            return Err(err("repeated abscissa"));
        }
        // normalized abscissa keeps the Vandermonde system well conditioned
        let half = span / 2.0;
        let mut design = DMatrix::zeros(n, 3);
        let mut rhs = DVector::zeros(n);
        for (row, &i) in members.iter().enumerate() {
            let (x, y) = xy(data, i);
            let t = (x - mean) / half;
            design[(row, 0)] = t * t;
            design[(row, 1)] = t;
            design[(row, 2)] = 1.0;
            rhs[row] = y;
        }
        let svd = design.svd(true, true);
        let sv = &svd.singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-10 * smax) {
            return Err(err("fewer than three distinct abscissae"));
        }
        let coef = svd.solve(&rhs, 0.0).map_err(|_| err("least-squares solve failed"))?;
        let (p, q, r) = (coef[0], coef[1], coef[2]);
        // y = p t² + q t + r with t = (x - mean) / half
        let h2 = half * half;
        let a = p / h2;
        let b = q / half - 2.0 * p * mean / h2;
        let c = p * mean * mean / h2 - q * mean / half + r;
        Parabola::checked(a, b, c, span, scale, err)
    }

    fn residual(&self, model: &Model, point: &[f64]) -> f64 {
        let p = &model.params;
        parabola_distance(p[0], p[1], p[2], point[0], point[1])
    }
}

/// Orthogonal distance from `(px, py)` to `y = a x² + b x + c`.
///
/// The foot point abscissa `t` is a real root of
/// `2a² t³ + 3ab t² + (b² + 2a(c − py) + 1) t + b(c − py) − px = 0`;
/// every real root is polished by Newton steps and the closest one wins.
pub fn parabola_distance(a: f64, b: f64, c: f64, px: f64, py: f64) -> f64 {
    let k = c - py;
    let coeffs = [2.0 * a * a, 3.0 * a * b, b * b + 2.0 * a * k + 1.0, b * k - px];
    let g = |t: f64| ((coeffs[0] * t + coeffs[1]) * t + coeffs[2]) * t + coeffs[3];
    let dg = |t: f64| (3.0 * coeffs[0] * t + 2.0 * coeffs[1]) * t + coeffs[2];
    let dist2 = |t: f64| {
        let dy = (a * t + b) * t + c - py;
        (t - px) * (t - px) + dy * dy
    };
    let mut best = dist2(px);
    for mut t in real_cubic_roots(coeffs) {
        for _ in 0..4 {
            let d = dg(t);
            if d == 0.0 {
                break;
            }
            let step = g(t) / d;
            if !step.is_finite() {
                break;
            }
            t -= step;
        }
        best = best.min(dist2(t));
    }
    best.sqrt()
}

/// Real roots of `c0 t³ + c1 t² + c2 t + c3`, degrading gracefully when the
/// leading coefficients vanish.
fn real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let size = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if size == 0.0 {
        return vec![];
    }
    if c[0].abs() <= 1e-14 * size {
        return real_quadratic_roots(c[1], c[2], c[3]);
    }
    let (a, b, cc) = (c[1] / c[0], c[2] / c[0], c[3] / c[0]);
    // depressed cubic s³ + p s + q with t = s − a/3
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + cc;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3).map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift).collect()
    }
}

fn real_quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let size = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * size {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    }
}
