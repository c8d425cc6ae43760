//! Classification rules, test metrics and 2D slice grids.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{LabeledDataset, ManifoldDescriptor};
use crate::linalg::{self, Matrix};
use crate::nn::{self, Head, ModelParams, NnError};

/// Rows per forward pass when evaluating large sets.
pub const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("slice plane directions are linearly dependent")]
    DegeneratePlane,
    #[error("invalid slice spec: {0}")]
    InvalidSlice(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Class(usize),
    OutOfDomain,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Class(c) => write!(f, "{c}"),
            Decision::OutOfDomain => f.write_str("ood"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationOutcome {
    pub decision: Decision,
    pub min_distance: f64,
    pub argmin_class: usize,
}

/// Nearest predicted manifold, ties to the lowest index. With `tol`, a
/// minimum distance above it is out of domain.
pub fn classify_distances(d: &[f64], tol: Option<f64>) -> ClassificationOutcome {
    let mut argmin = 0;
    for (i, &v) in d.iter().enumerate() {
        if v < d[argmin] {
            argmin = i;
        }
    }
    let min_distance = d.get(argmin).copied().unwrap_or(f64::INFINITY);
    let decision = match tol {
        Some(t) if !(min_distance <= t) => Decision::OutOfDomain,
        _ => Decision::Class(argmin),
    };
    ClassificationOutcome {
        decision,
        min_distance,
        argmin_class: argmin,
    }
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// How a row of model outputs becomes a decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// Distance outputs: nearest manifold, optionally thresholded.
    MinDistance { tol: Option<f64> },
    /// Probability outputs: most likely class.
    Argmax,
}

impl Rule {
    /// Min-distance for sigmoid heads, argmax for softmax heads.
    pub fn for_head(head: Head, tol: Option<f64>) -> Self {
        match head {
            Head::SigmoidPerBranch => Rule::MinDistance { tol },
            Head::SoftmaxOverBranches => Rule::Argmax,
        }
    }

    pub fn decide(self, row: &[f64]) -> Decision {
        match self {
            Rule::MinDistance { tol } => classify_distances(row, tol).decision,
            Rule::Argmax => Decision::Class(argmax(row)),
        }
    }
}

pub fn decisions(outputs: &Matrix, rule: Rule) -> Vec<Decision> {
    outputs.row_iter().map(|r| rule.decide(r)).collect()
}

/// Mean squared error between predicted and target distances over all `N·C` entries.
pub fn distance_test_loss(model: &ModelParams, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let pred = nn::predict(model, inputs, EVAL_CHUNK)?;
    mse(&pred, targets)
}

pub fn mse(pred: &Matrix, targets: &Matrix) -> Result<f64> {
    if pred.rows() != targets.rows() || pred.cols() != targets.cols() {
        return Err(EvalError::Shape(format!(
            "predictions {}x{} vs targets {}x{}",
            pred.rows(),
            pred.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if pred.data().is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.data().len() as f64)
}

/// Misclassified fraction; out-of-domain on a labeled point is an error.
pub fn classification_error(
    model: &ModelParams,
    points: &Matrix,
    labels: &[usize],
    rule: Rule,
) -> Result<f64> {
    if points.rows() != labels.len() {
        return Err(EvalError::Shape("label count differs from point count".into()));
    }
    let pred = nn::predict(model, points, EVAL_CHUNK)?;
    Ok(error_fraction(&decisions(&pred, rule), labels))
}

pub fn error_fraction(decisions: &[Decision], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = decisions
        .iter()
        .zip(labels)
        .filter(|(d, &y)| **d != Decision::Class(y))
        .count();
    wrong as f64 / labels.len() as f64
}

/// A plane through `origin` spanned by two directions, with extents and resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: Vec<f64>,
    pub dir_u: Vec<f64>,
    pub dir_v: Vec<f64>,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub resolution: [usize; 2],
}

impl PlaneSpec {
    /// Plane through the centre of `class`'s manifold spanned by canonical
    /// axes 0 and 1 mapped into the dataset. Extents are in dataset units.
    pub fn through_center(
        dataset: &LabeledDataset,
        class: usize,
        half_extent: f64,
        resolution: [usize; 2],
    ) -> Self {
        let center = match &dataset.descriptors[class] {
            ManifoldDescriptor::Sphere { center, .. } => center.clone(),
            ManifoldDescriptor::SwissRoll { .. } => vec![0.0; dataset.m + 1],
        };
        let n = dataset.n;
        let axis = |k: usize| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            dataset.embedding.map_direction(&e)
        };
        PlaneSpec {
            origin: dataset.embedding.embed(&center),
            dir_u: axis(0),
            dir_v: axis(1),
            u_range: [-half_extent, half_extent],
            v_range: [-half_extent, half_extent],
            resolution,
        }
    }
}

/// Lattice of embedded points on a plane, with optional per-node model values.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGrid {
    pub origin: Vec<f64>,
    pub axis_u: Vec<f64>,
    pub axis_v: Vec<f64>,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub resolution: [usize; 2],
    /// Plane coordinates per node, `u` fastest.
    pub coords: Vec<[f64; 2]>,
    /// `R_u·R_v × n` embedded node positions.
    pub nodes: Matrix,
    /// `R_u·R_v × C` model outputs once evaluated.
    pub values: Option<Matrix>,
    pub decisions: Option<Vec<Decision>>,
}

fn lattice(range: [f64; 2], count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (range[0] + range[1])];
    }
    let step = (range[1] - range[0]) / (count - 1) as f64;
    (0..count).map(|i| range[0] + step * i as f64).collect()
}

/// Orthonormalizes the plane directions and lays out the node lattice.
pub fn build_slice_grid(spec: &PlaneSpec) -> Result<SliceGrid> {
    let n = spec.origin.len();
    if spec.dir_u.len() != n || spec.dir_v.len() != n {
        return Err(EvalError::InvalidSlice("direction length differs from origin".into()));
    }
    if spec.resolution[0] == 0 || spec.resolution[1] == 0 {
        return Err(EvalError::InvalidSlice("resolution must be positive".into()));
    }
    if !(spec.u_range[1] >= spec.u_range[0]) || !(spec.v_range[1] >= spec.v_range[0]) {
        return Err(EvalError::InvalidSlice("extent bounds are reversed".into()));
    }
    let nu = linalg::norm(&spec.dir_u);
    if !(nu > 1e-12) {
        return Err(EvalError::DegeneratePlane);
    }
    let axis_u: Vec<f64> = spec.dir_u.iter().map(|v| v / nu).collect();
    let mut axis_v = spec.dir_v.clone();
    // Two Gram–Schmidt passes keep the axes orthogonal to rounding.
    for _ in 0..2 {
        let p = linalg::dot(&axis_v, &axis_u);
        linalg::axpy(-p, &axis_u, &mut axis_v);
    }
    let nv = linalg::norm(&axis_v);
    if !(nv > 1e-9 * linalg::norm(&spec.dir_v).max(1e-300)) || !(nv > 1e-12) {
        return Err(EvalError::DegeneratePlane);
    }
    axis_v.iter_mut().for_each(|v| *v /= nv);

    let us = lattice(spec.u_range, spec.resolution[0]);
    let vs = lattice(spec.v_range, spec.resolution[1]);
    let mut coords = Vec::with_capacity(us.len() * vs.len());
    let mut nodes = Matrix::zeros(us.len() * vs.len(), n);
    for (j, &v) in vs.iter().enumerate() {
        for (i, &u) in us.iter().enumerate() {
            let r = j * us.len() + i;
            coords.push([u, v]);
            let row = nodes.row_mut(r);
            for k in 0..n {
                row[k] = spec.origin[k] + u * axis_u[k] + v * axis_v[k];
            }
        }
    }
    Ok(SliceGrid {
        origin: spec.origin.clone(),
        axis_u,
        axis_v,
        u_range: spec.u_range,
        v_range: spec.v_range,
        resolution: spec.resolution,
        coords,
        nodes,
        values: None,
        decisions: None,
    })
}

/// Fills per-node model outputs and decisions. Distance learners use the
/// min-distance rule with `tol`; classifiers use argmax.
pub fn evaluate_grid(model: &ModelParams, grid: &mut SliceGrid, tol: Option<f64>) -> Result<()> {
    let values = nn::predict(model, &grid.nodes, EVAL_CHUNK)?;
    grid.decisions = Some(decisions(&values, Rule::for_head(model.head(), tol)));
    grid.values = Some(values);
    Ok(())
}

/// Options for [`write_grid_csv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GridCsvOptions {
    pub include_coords: bool,
    /// Values above this are written as `nan`.
    pub clip_above: Option<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

/// CSV with a `#`-prefixed plane header, then `u,v,[x_0..,]val_0..,decision`.
pub fn write_grid_csv<W: Write>(grid: &SliceGrid, opts: GridCsvOptions, mut w: W) -> Result<()> {
    let values = grid
        .values
        .as_ref()
        .ok_or_else(|| EvalError::InvalidSlice("grid has not been evaluated".into()))?;
    let decisions = grid.decisions.as_ref().expect("set with values");
    writeln!(
        w,
        "# origin={} axis_u={} axis_v={} u_range={} {} v_range={} {} resolution={}x{}",
        join(&grid.origin),
        join(&grid.axis_u),
        join(&grid.axis_v),
        grid.u_range[0],
        grid.u_range[1],
        grid.v_range[0],
        grid.v_range[1],
        grid.resolution[0],
        grid.resolution[1]
    )?;
    let mut header = String::from("u,v");
    if opts.include_coords {
        for k in 0..grid.nodes.cols() {
            write!(header, ",x_{k}").unwrap();
        }
    }
    for c in 0..values.cols() {
        write!(header, ",val_{c}").unwrap();
    }
    header.push_str(",decision");
    writeln!(w, "{header}")?;
    for (r, uv) in grid.coords.iter().enumerate() {
        let mut line = format!("{},{}", uv[0], uv[1]);
        if opts.include_coords {
            for x in grid.nodes.row(r) {
                write!(line, ",{x}").unwrap();
            }
        }
        for &v in values.row(r) {
            match opts.clip_above {
                Some(t) if v > t => line.push_str(",nan"),
                _ => write!(line, ",{v}").unwrap(),
            }
        }
        write!(line, ",{}", decisions[r]).unwrap();
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Binary PPM of `val_0`, blue (0) to red (1), `v` increasing upward.
pub fn write_grid_ppm<W: Write>(grid: &SliceGrid, mut w: W) -> Result<()> {
    let values = grid
        .values
        .as_ref()
        .ok_or_else(|| EvalError::InvalidSlice("grid has not been evaluated".into()))?;
    let [ru, rv] = grid.resolution;
    write!(w, "P6\n{ru} {rv}\n255\n")?;
    let mut buf = Vec::with_capacity(ru * rv * 3);
    for j in (0..rv).rev() {
        for i in 0..ru {
            let t = values.get(j * ru + i, 0);
            let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
            let r = (255.0 * t).round() as u8;
            let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
            let b = (255.0 * (1.0 - t)).round() as u8;
            buf.extend_from_slice(&[r, g, b]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// One metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub m: usize,
    pub n: usize,
    pub model: String,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_count: usize,
    pub clf_error: f64,
}

pub const METRICS_HEADER: &str = "dataset,m,n,model,train_mse,test_mse,test_count,clf_error";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.m,
            r.n,
            r.model,
            opt(r.train_mse),
            opt(r.test_mse),
            r.test_count,
            r.clf_error
        )?;
    }
    Ok(())
}
