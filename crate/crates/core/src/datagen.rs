//! Synthetic class manifolds: separated spheres, concentric spheres and
//! intertwined swiss rolls.
//!
//! Every dataset is built in three stages. Points are sampled on an
//! `m`-manifold in `R^(m+1)`, zero-padded into `R^n`, moved by a random
//! rotation and translation, and finally scaled isotropically into the unit
//! hypercube. The stage parameters are kept in an [`EmbeddingRecord`] so the
//! generating geometry can be recovered exactly from the stored points.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::rng::{rng_for, stream};

/// Centre distance for the separated-spheres dataset.
pub const SEPARATED_CENTER_DISTANCE: f64 = 2.5;
pub const CONCENTRIC_RADII: [f64; 2] = [1.0, 1.3];
pub const SWISS_PHI_RANGE: [f64; 2] = [1.5, 4.5];
pub const SWISS_PSI_RANGE: [f64; 2] = [0.0, 21.0];
pub const SWISS_MU: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("dataset would be empty")]
    EmptyDataset,
    #[error("all points coincide; cannot normalize to the unit cube")]
    DegenerateData,
    #[error("invalid manifold descriptor: {0}")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SeparatedSpheres,
    ConcentricSpheres,
    SwissRolls,
}

impl DatasetKind {
    /// Every generator produces two class manifolds.
    pub fn num_classes(self) -> usize {
        2
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::SeparatedSpheres => "separated_spheres",
            DatasetKind::ConcentricSpheres => "concentric_spheres",
            DatasetKind::SwissRolls => "swiss_rolls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "separated_spheres" => Some(DatasetKind::SeparatedSpheres),
            "concentric_spheres" => Some(DatasetKind::ConcentricSpheres),
            "swiss_rolls" => Some(DatasetKind::SwissRolls),
            _ => None,
        }
    }
}

/// Geometry of one class manifold in its canonical `R^(m+1)` embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldDescriptor {
    Sphere {
        center: Vec<f64>,
        radius: f64,
    },
    /// `mu_offset = 0` is the outer roll `(φ sin φ, φ cos φ, ψ…)`; a positive
    /// offset gives the inner roll `((φ−μ) cos φ, (φ−μ) sin φ, ψ…)`.
    SwissRoll {
        mu_offset: f64,
        phi_range: [f64; 2],
        psi_ranges: Vec<[f64; 2]>,
    },
}

impl ManifoldDescriptor {
    pub fn validate(&self) -> Result<()> {
        match self {
            ManifoldDescriptor::Sphere { radius, center } => {
                if !(*radius > 0.0) || center.is_empty() {
                    return Err(DatagenError::InvalidDescriptor(format!(
                        "sphere radius must be positive, got {radius}"
                    )));
                }
            }
            ManifoldDescriptor::SwissRoll { phi_range, .. } => {
                if !(phi_range[1] > phi_range[0]) {
                    return Err(DatagenError::InvalidDescriptor(
                        "swiss roll phi range is degenerate".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Width of the per-point parameter vector kept in `canonical_params`.
    pub fn param_width(&self, m: usize) -> usize {
        match self {
            ManifoldDescriptor::Sphere { .. } => m + 1,
            ManifoldDescriptor::SwissRoll { .. } => m,
        }
    }

    /// Canonical `R^(m+1)` point for stored parameters.
    pub fn canonical_point(&self, params: &[f64]) -> Vec<f64> {
        match self {
            ManifoldDescriptor::Sphere { .. } => params.to_vec(),
            ManifoldDescriptor::SwissRoll { mu_offset, .. } => {
                let phi = params[0];
                let mut p = roll_curve(*mu_offset, phi).to_vec();
                p.extend_from_slice(&params[1..]);
                p
            }
        }
    }

    /// Euclidean distance from a canonical `R^(m+1)` point to the manifold.
    pub fn canonical_distance(&self, y: &[f64]) -> f64 {
        match self {
            ManifoldDescriptor::Sphere { center, radius } => {
                (linalg::distance(y, center) - radius).abs()
            }
            ManifoldDescriptor::SwissRoll {
                mu_offset,
                phi_range,
                psi_ranges,
            } => {
                let d_curve = roll_curve_distance(*mu_offset, *phi_range, [y[0], y[1]]);
                let d_psi: f64 = y[2..]
                    .iter()
                    .zip(psi_ranges)
                    .map(|(&v, r)| {
                        let c = v.clamp(r[0], r[1]);
                        (v - c) * (v - c)
                    })
                    .sum();
                (d_curve * d_curve + d_psi).sqrt()
            }
        }
    }
}

/// Planar part of a swiss roll at angle `phi`.
pub fn roll_curve(mu_offset: f64, phi: f64) -> [f64; 2] {
    if mu_offset == 0.0 {
        [phi * phi.sin(), phi * phi.cos()]
    } else {
        let r = phi - mu_offset;
        [r * phi.cos(), r * phi.sin()]
    }
}

/// `d/dφ` of [`roll_curve`].
pub fn roll_curve_derivative(mu_offset: f64, phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    if mu_offset == 0.0 {
        [s + phi * c, c - phi * s]
    } else {
        let r = phi - mu_offset;
        [c - r * s, s + r * c]
    }
}

fn roll_curve_distance(mu_offset: f64, range: [f64; 2], p: [f64; 2]) -> f64 {
    let d2 = |phi: f64| {
        let q = roll_curve(mu_offset, phi);
        (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
    };
    const GRID: usize = 4096;
    let h = (range[1] - range[0]) / GRID as f64;
    let (mut best_phi, mut best) = (range[0], f64::INFINITY);
    for i in 0..=GRID {
        let phi = range[0] + h * i as f64;
        let v = d2(phi);
        if v < best {
            best = v;
            best_phi = phi;
        }
    }
    // Golden-section refinement inside the bracketing grid cells.
    let (mut a, mut b) = ((best_phi - h).max(range[0]), (best_phi + h).min(range[1]));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if d2(c) < d2(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.min(d2(0.5 * (a + b))).sqrt()
}

/// Isometry and cube normalization that took canonical points into the dataset.
///
/// A canonical point `x ∈ R^(m+1)` is padded to `R^n` and mapped to
/// `s · (Q·x + T − offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub rotation: Matrix,
    pub translation: Vec<f64>,
    pub cube_scale: f64,
    pub cube_offset: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn ambient_dim(&self) -> usize {
        self.translation.len()
    }

    /// Maps a canonical point (any length ≤ n, zero-padded) into dataset coordinates.
    pub fn embed(&self, canonical: &[f64]) -> Vec<f64> {
        let padded = embed_row(canonical, self.ambient_dim());
        let rotated = self.rotation.mul_vec(&padded);
        rotated
            .iter()
            .zip(&self.translation)
            .zip(&self.cube_offset)
            .map(|((r, t), o)| self.cube_scale * (r + t - o))
            .collect()
    }

    /// Inverse of [`embed`](Self::embed); returns the full padded `R^n` vector.
    pub fn unembed(&self, point: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = point
            .iter()
            .zip(&self.translation)
            .zip(&self.cube_offset)
            .map(|((p, t), o)| p / self.cube_scale + o - t)
            .collect();
        self.rotation.tr_mul_vec(&shifted)
    }

    /// Canonical direction to dataset direction. Scaling does not rotate.
    pub fn map_direction(&self, v: &[f64]) -> Vec<f64> {
        self.rotation.mul_vec(&embed_row(v, self.ambient_dim()))
    }

    pub fn unmap_direction(&self, v: &[f64]) -> Vec<f64> {
        self.rotation.tr_mul_vec(v)
    }
}

fn embed_row(row: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    out[..row.len()].copy_from_slice(row);
    out
}

/// Points on manifolds in `[0,1]^n` with class labels and the full generating record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub kind: DatasetKind,
    /// `N×n`, rows in normalized coordinates.
    pub points: Matrix,
    pub labels: Vec<usize>,
    /// Intrinsic dimension.
    pub m: usize,
    /// Ambient dimension.
    pub n: usize,
    pub num_classes: usize,
    pub descriptors: Vec<ManifoldDescriptor>,
    pub embedding: EmbeddingRecord,
    pub seed: u64,
    /// Per-point parameters: canonical coordinates for spheres, `(φ, ψ…)` for rolls.
    pub canonical_params: Option<Matrix>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of all points in class `c`, ascending.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// Converts a length in the generating (pre-normalization) geometry to dataset units.
    pub fn to_dataset_units(&self, length: f64) -> f64 {
        length * self.embedding.cube_scale
    }

    /// Canonical `R^(m+1)` coordinates of point `i` recomputed from its stored parameters.
    pub fn canonical_point(&self, i: usize) -> Option<Vec<f64>> {
        let params = self.canonical_params.as_ref()?;
        Some(self.descriptors[self.labels[i]].canonical_point(params.row(i)))
    }

    /// Exact distance, in dataset units, from `point` to the manifold of `class`.
    pub fn true_distance(&self, point: &[f64], class: usize) -> f64 {
        let y = self.embedding.unembed(point);
        let k = self.m + 1;
        let pad: f64 = y[k..].iter().map(|v| v * v).sum();
        let d = self.descriptors[class].canonical_distance(&y[..k]);
        (d * d + pad).sqrt() * self.embedding.cube_scale
    }

    /// Smallest distance between two different class manifolds, in dataset units.
    pub fn manifold_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                gap = gap.min(canonical_gap(&self.descriptors[a], &self.descriptors[b]));
            }
        }
        gap * self.embedding.cube_scale
    }

    /// Splits each class into its first `train_per_class` points and the rest.
    /// Both halves keep the same embedding record.
    pub fn split_per_class(&self, train_per_class: usize) -> (LabeledDataset, LabeledDataset) {
        let mut seen = vec![0usize; self.num_classes];
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            let c = self.labels[i];
            if seen[c] < train_per_class {
                first.push(i);
            } else {
                second.push(i);
            }
            seen[c] += 1;
        }
        (self.subset(&first), self.subset(&second))
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let pick = |m: &Matrix| {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| m.row(i)).collect();
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for r in rows {
                data.extend_from_slice(r);
            }
            Matrix::from_vec(idx.len(), m.cols(), data).expect("subset keeps width")
        };
        LabeledDataset {
            kind: self.kind,
            points: pick(&self.points),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            m: self.m,
            n: self.n,
            num_classes: self.num_classes,
            descriptors: self.descriptors.clone(),
            embedding: self.embedding.clone(),
            seed: self.seed,
            canonical_params: self.canonical_params.as_ref().map(pick),
        }
    }
}

fn canonical_gap(a: &ManifoldDescriptor, b: &ManifoldDescriptor) -> f64 {
    use ManifoldDescriptor::*;
    match (a, b) {
        (
            Sphere {
                center: ca,
                radius: ra,
            },
            Sphere {
                center: cb,
                radius: rb,
            },
        ) => {
            let d = linalg::distance(ca, cb);
            if d >= ra + rb {
                d - ra - rb
            } else {
                // Nested (or overlapping) spheres.
                ((ra - rb).abs() - d).max(0.0)
            }
        }
        (
            SwissRoll {
                mu_offset: ma,
                phi_range: pa,
                ..
            },
            SwissRoll { mu_offset: mb, .. },
        ) => {
            // ψ axes coincide, so the gap is the planar curve gap.
            const SAMPLES: usize = 4000;
            (0..=SAMPLES)
                .map(|i| {
                    let phi = pa[0] + (pa[1] - pa[0]) * i as f64 / SAMPLES as f64;
                    let q = roll_curve(*ma, phi);
                    roll_curve_distance(*mb, *pa, q)
                })
                .fold(f64::INFINITY, f64::min)
        }
        _ => f64::NAN,
    }
}

/// `count` points uniform on the `m`-sphere of `radius` around `center` in `R^(m+1)`.
pub fn sample_sphere_points(
    m: usize,
    radius: f64,
    center: &[f64],
    count: usize,
    seed: u64,
) -> Result<Matrix> {
    if count == 0 {
        return Err(DatagenError::EmptyDataset);
    }
    if center.len() != m + 1 {
        return Err(DatagenError::Dimension(format!(
            "sphere centre needs {} coordinates, got {}",
            m + 1,
            center.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(DatagenError::InvalidDescriptor(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::POINTS, i as u64);
            sphere_point(&mut rng, radius, center)
        })
        .collect();
    Ok(Matrix::from_rows(&rows)?)
}

fn sphere_point<R: Rng>(rng: &mut R, radius: f64, center: &[f64]) -> Vec<f64> {
    loop {
        let z: Vec<f64> = center.iter().map(|_| StandardNormal.sample(rng)).collect();
        let nz = linalg::norm(&z);
        if nz > 0.0 {
            return z.iter().zip(center).map(|(v, c)| radius * v / nz + c).collect();
        }
    }
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    sphere_point(rng, 1.0, &vec![0.0; dim])
}

/// Zero-pads each row to width `n`.
pub fn embed_trivial(points: &Matrix, n: usize) -> Result<Matrix> {
    if n < points.cols() {
        return Err(DatagenError::Dimension(format!(
            "cannot embed R^{} points into R^{n}",
            points.cols()
        )));
    }
    let mut out = Matrix::zeros(points.rows(), n);
    for (i, row) in points.row_iter().enumerate() {
        out.row_mut(i)[..row.len()].copy_from_slice(row);
    }
    Ok(out)
}

/// Row-wise `x ↦ Q·x + T`.
pub fn apply_isometry(points: &Matrix, q: &Matrix, t: &[f64]) -> Result<Matrix> {
    let n = points.cols();
    if q.rows() != n || q.cols() != n || t.len() != n {
        return Err(DatagenError::Dimension(format!(
            "isometry of size {}x{} (+{}) does not act on R^{n}",
            q.rows(),
            q.cols(),
            t.len()
        )));
    }
    // Rows times Qᵀ gives (Q·x)ᵀ for every row at once.
    let mut out = points.matmul(&q.transpose())?;
    for i in 0..out.rows() {
        for (v, ti) in out.row_mut(i).iter_mut().zip(t) {
            *v += ti;
        }
    }
    Ok(out)
}

/// Isotropic scale and shift into `[0,1]^n`. Returns `(points, scale, offset)`
/// with `normalized = scale · (x − offset)`.
pub fn normalize_to_unit_cube(points: &Matrix) -> Result<(Matrix, f64, Vec<f64>)> {
    if points.rows() == 0 {
        return Err(DatagenError::EmptyDataset);
    }
    let n = points.cols();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for row in points.row_iter() {
        for j in 0..n {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let extent = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(DatagenError::DegenerateData);
    }
    let scale = 1.0 / extent;
    let mut out = points.clone();
    for i in 0..out.rows() {
        for (v, l) in out.row_mut(i).iter_mut().zip(&lo) {
            // Clamp away the last-ulp overshoot of (hi − lo)·(1/extent).
            *v = (scale * (*v - l)).clamp(0.0, 1.0);
        }
    }
    Ok((out, scale, lo))
}

fn check_dims(m: usize, n: usize, count_per_class: usize) -> Result<()> {
    if m < 1 || n <= m {
        return Err(DatagenError::Dimension(format!(
            "need n > m >= 1, got m={m}, n={n}"
        )));
    }
    if count_per_class == 0 {
        return Err(DatagenError::EmptyDataset);
    }
    Ok(())
}

/// Runs the trivial embedding, isometry and normalization stages.
fn assemble(
    kind: DatasetKind,
    m: usize,
    n: usize,
    seed: u64,
    descriptors: Vec<ManifoldDescriptor>,
    canonical: Matrix,
    params: Matrix,
    labels: Vec<usize>,
) -> Result<LabeledDataset> {
    for d in &descriptors {
        d.validate()?;
    }
    let rotation = linalg::random_orthogonal(n, crate::rng::derive_seed(seed, stream::ROTATION, 0))?;
    let mut trng = rng_for(seed, stream::TRANSLATION, 0);
    let translation: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut trng)).collect();
    let moved = apply_isometry(&embed_trivial(&canonical, n)?, &rotation, &translation)?;
    let (points, cube_scale, cube_offset) = normalize_to_unit_cube(&moved)?;
    Ok(LabeledDataset {
        kind,
        points,
        labels,
        m,
        n,
        num_classes: descriptors.len(),
        descriptors,
        embedding: EmbeddingRecord {
            rotation,
            translation,
            cube_scale,
            cube_offset,
        },
        seed,
        canonical_params: Some(params),
    })
}

fn sphere_classes(
    kind: DatasetKind,
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
    spheres: Vec<(Vec<f64>, f64)>,
) -> Result<LabeledDataset> {
    let mut rows = Vec::with_capacity(spheres.len() * count_per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    for (c, (center, radius)) in spheres.iter().enumerate() {
        let class_seed = crate::rng::derive_seed(seed, stream::POINTS, c as u64);
        let pts = sample_sphere_points(m, *radius, center, count_per_class, class_seed)?;
        rows.extend(pts.row_iter().map(|r| r.to_vec()));
        labels.extend(std::iter::repeat(c).take(count_per_class));
    }
    let canonical = Matrix::from_rows(&rows)?;
    let descriptors = spheres
        .into_iter()
        .map(|(center, radius)| ManifoldDescriptor::Sphere { center, radius })
        .collect();
    assemble(kind, m, n, seed, descriptors, canonical.clone(), canonical, labels)
}

/// Two unit `m`-spheres whose centres are 2.5 apart along a random direction.
pub fn make_separated_spheres(
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    check_dims(m, n, count_per_class)?;
    let mut g = rng_for(seed, stream::GEOMETRY, 0);
    let c0: Vec<f64> = (0..=m).map(|_| StandardNormal.sample(&mut g)).collect();
    let dir = unit_vector(&mut g, m + 1);
    let c1: Vec<f64> = c0
        .iter()
        .zip(&dir)
        .map(|(c, d)| c + SEPARATED_CENTER_DISTANCE * d)
        .collect();
    sphere_classes(
        DatasetKind::SeparatedSpheres,
        m,
        n,
        count_per_class,
        seed,
        vec![(c0, 1.0), (c1, 1.0)],
    )
}

/// Spheres of radius 1.0 (class 0) and 1.3 (class 1) around one random centre.
pub fn make_concentric_spheres(
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    check_dims(m, n, count_per_class)?;
    let mut g = rng_for(seed, stream::GEOMETRY, 0);
    let c: Vec<f64> = (0..=m).map(|_| StandardNormal.sample(&mut g)).collect();
    sphere_classes(
        DatasetKind::ConcentricSpheres,
        m,
        n,
        count_per_class,
        seed,
        vec![(c.clone(), CONCENTRIC_RADII[0]), (c, CONCENTRIC_RADII[1])],
    )
}

/// Outer roll (class 0) and inner roll offset by μ (class 1).
pub fn make_swiss_rolls(
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    check_dims(m, n, count_per_class)?;
    let psi_ranges = vec![SWISS_PSI_RANGE; m - 1];
    let descriptors = vec![
        ManifoldDescriptor::SwissRoll {
            mu_offset: 0.0,
            phi_range: SWISS_PHI_RANGE,
            psi_ranges: psi_ranges.clone(),
        },
        ManifoldDescriptor::SwissRoll {
            mu_offset: SWISS_MU,
            phi_range: SWISS_PHI_RANGE,
            psi_ranges,
        },
    ];
    let mut params = Vec::with_capacity(2 * count_per_class);
    let mut rows = Vec::with_capacity(2 * count_per_class);
    let mut labels = Vec::with_capacity(2 * count_per_class);
    for (c, desc) in descriptors.iter().enumerate() {
        let class_seed = crate::rng::derive_seed(seed, stream::POINTS, c as u64);
        let p: Vec<Vec<f64>> = (0..count_per_class)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(class_seed, stream::POINTS, i as u64);
                let mut v = Vec::with_capacity(m);
                v.push(rng.gen_range(SWISS_PHI_RANGE[0]..=SWISS_PHI_RANGE[1]));
                for _ in 1..m {
                    v.push(rng.gen_range(SWISS_PSI_RANGE[0]..=SWISS_PSI_RANGE[1]));
                }
                v
            })
            .collect();
        for v in p {
            rows.push(desc.canonical_point(&v));
            params.push(v);
            labels.push(c);
        }
    }
    assemble(
        DatasetKind::SwissRolls,
        m,
        n,
        seed,
        descriptors,
        Matrix::from_rows(&rows)?,
        Matrix::from_rows(&params)?,
        labels,
    )
}

pub fn generate(
    kind: DatasetKind,
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    match kind {
        DatasetKind::SeparatedSpheres => make_separated_spheres(m, n, count_per_class, seed),
        DatasetKind::ConcentricSpheres => make_concentric_spheres(m, n, count_per_class, seed),
        DatasetKind::SwissRolls => make_swiss_rolls(m, n, count_per_class, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise(points: &Matrix) -> Vec<f64> {
        let mut d = Vec::new();
        for i in 0..points.rows() {
            for j in i + 1..points.rows() {
                d.push(linalg::distance(points.row(i), points.row(j)));
            }
        }
        d
    }

    #[test]
    fn sphere_samples_lie_on_sphere() {
        let pts = sample_sphere_points(1, 1.0, &[0.0, 0.0], 1000, 3).unwrap();
        for r in pts.row_iter() {
            assert!((linalg::norm(r) - 1.0).abs() < 1e-12);
        }
        let c = [0.5, -2.0, 1.0];
        let pts = sample_sphere_points(2, 1.3, &c, 500, 4).unwrap();
        for r in pts.row_iter() {
            assert!((linalg::distance(r, &c) - 1.3).abs() < 1e-9);
        }
        assert!(matches!(
            sample_sphere_points(1, 1.0, &[0.0, 0.0], 0, 1),
            Err(DatagenError::EmptyDataset)
        ));
    }

    #[test]
    fn circle_sample_mean_is_near_zero() {
        let pts = sample_sphere_points(1, 1.0, &[0.0, 0.0], 100_000, 5).unwrap();
        for j in 0..2 {
            let mean = pts.column(j).iter().sum::<f64>() / 1e5;
            assert!(mean.abs() < 0.02, "mean {mean}");
        }
    }

    #[test]
    fn separated_sphere_geometry() {
        let ds = make_separated_spheres(2, 5, 200, 9).unwrap();
        let (c0, c1) = match (&ds.descriptors[0], &ds.descriptors[1]) {
            (
                ManifoldDescriptor::Sphere { center: a, radius: ra },
                ManifoldDescriptor::Sphere { center: b, radius: rb },
            ) => {
                assert_eq!((*ra, *rb), (1.0, 1.0));
                (a.clone(), b.clone())
            }
            _ => unreachable!(),
        };
        assert!((linalg::distance(&c0, &c1) - 2.5).abs() < 1e-12);
        let params = ds.canonical_params.as_ref().unwrap();
        let (a, b) = (ds.class_indices(0), ds.class_indices(1));
        let mut min = f64::INFINITY;
        for &i in &a {
            for &j in &b {
                min = min.min(linalg::distance(params.row(i), params.row(j)));
            }
        }
        assert!(min >= 0.5 - 1e-12);
        assert!(make_separated_spheres(2, 2, 10, 1).is_err());
    }

    #[test]
    fn concentric_geometry() {
        let ds = make_concentric_spheres(1, 3, 300, 2).unwrap();
        let params = ds.canonical_params.as_ref().unwrap();
        for i in 0..ds.len() {
            let (c, r) = match &ds.descriptors[ds.labels[i]] {
                ManifoldDescriptor::Sphere { center, radius } => (center, *radius),
                _ => unreachable!(),
            };
            assert!((linalg::distance(params.row(i), c) - r).abs() < 1e-9);
        }
        let gap = ds.manifold_gap() / ds.embedding.cube_scale;
        assert!((gap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn swiss_roll_parameterization() {
        let outer = ManifoldDescriptor::SwissRoll {
            mu_offset: 0.0,
            phi_range: SWISS_PHI_RANGE,
            psi_ranges: vec![],
        };
        let p = outer.canonical_point(&[std::f64::consts::PI]);
        assert!(p[0].abs() < 1e-12 && (p[1] + std::f64::consts::PI).abs() < 1e-12);

        let ds = make_swiss_rolls(2, 4, 200, 8).unwrap();
        let params = ds.canonical_params.as_ref().unwrap();
        for i in ds.class_indices(0) {
            let phi = params.row(i)[0];
            assert!((SWISS_PHI_RANGE[0]..=SWISS_PHI_RANGE[1]).contains(&phi));
            assert!((SWISS_PSI_RANGE[0]..=SWISS_PSI_RANGE[1]).contains(&params.row(i)[1]));
            let c = ds.canonical_point(i).unwrap();
            assert!((linalg::norm(&c[..2]) - phi).abs() < 1e-9);
        }
    }

    #[test]
    fn roll_derivative_matches_finite_difference() {
        for mu in [0.0, 1.0] {
            for phi in [1.7, 3.0, 4.2] {
                let h = 1e-6;
                let a = roll_curve(mu, phi + h);
                let b = roll_curve(mu, phi - h);
                let d = roll_curve_derivative(mu, phi);
                assert!(((a[0] - b[0]) / (2.0 * h) - d[0]).abs() < 1e-6);
                assert!(((a[1] - b[1]) / (2.0 * h) - d[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trivial_embedding() {
        let p = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let e = embed_trivial(&p, 4).unwrap();
        assert_eq!(e.row(0), &[1.5, -2.0, 0.0, 0.0]);
        assert_eq!(embed_trivial(&p, 2).unwrap(), p);
        assert!(embed_trivial(&p, 1).is_err());
    }

    #[test]
    fn isometry_cases() {
        let p = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0], [0.0, 0.0, 4.0]]).unwrap();
        let same = apply_isometry(&p, &Matrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(same, p);
        let shifted = apply_isometry(&p, &Matrix::identity(3), &[1.0; 3]).unwrap();
        for (a, b) in shifted.data().iter().zip(p.data()) {
            assert_eq!(*a, b + 1.0);
        }
        let q = linalg::random_orthogonal(3, 42).unwrap();
        let moved = apply_isometry(&p, &q, &[0.3, -4.0, 2.0]).unwrap();
        for (a, b) in pairwise(&p).iter().zip(pairwise(&moved)) {
            assert!(((a - b) / a).abs() < 1e-9);
        }
        assert!(apply_isometry(&p, &Matrix::identity(2), &[0.0; 2]).is_err());
    }

    #[test]
    fn cube_normalization() {
        let p = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let (out, s, _) = normalize_to_unit_cube(&p).unwrap();
        assert_eq!(s, 0.5);
        assert!((linalg::distance(out.row(0), out.row(1)) - 1.0).abs() < 1e-15);

        let p = Matrix::from_rows(&[[0.2, 0.1], [1.2, 0.6]]).unwrap();
        let (out, s, _) = normalize_to_unit_cube(&p).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-12);

        let flat = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            normalize_to_unit_cube(&flat),
            Err(DatagenError::DegenerateData)
        ));
    }

    #[test]
    fn normalization_is_isotropic() {
        let ds = make_separated_spheres(2, 6, 40, 13).unwrap();
        let params = ds.canonical_params.as_ref().unwrap();
        let before = pairwise(params);
        let after = pairwise(&ds.points);
        let (r0, r1) = (before[0] / before[1], after[0] / after[1]);
        assert!(((r0 - r1) / r0).abs() < 1e-9);
        for (b, a) in before.iter().zip(&after) {
            assert!((b * ds.embedding.cube_scale - a).abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_geometry_is_recoverable() {
        for kind in [
            DatasetKind::SeparatedSpheres,
            DatasetKind::ConcentricSpheres,
            DatasetKind::SwissRolls,
        ] {
            let ds = generate(kind, 2, 7, 100, 77).unwrap();
            for v in ds.points.data() {
                assert!((-1e-12..=1.0 + 1e-12).contains(v));
            }
            for i in 0..ds.len() {
                let y = ds.embedding.unembed(ds.point(i));
                let c = ds.canonical_point(i).unwrap();
                for (a, b) in y.iter().zip(c.iter().chain(std::iter::repeat(&0.0))) {
                    assert!((a - b).abs() < 1e-8, "{kind:?}");
                }
                assert!(ds.true_distance(ds.point(i), ds.labels[i]) < 1e-8);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_swiss_rolls(1, 3, 50, 5).unwrap();
        let b = make_swiss_rolls(1, 3, 50, 5).unwrap();
        assert_eq!(a, b);
        let c = make_swiss_rolls(1, 3, 50, 6).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn split_keeps_embedding() {
        let ds = make_concentric_spheres(1, 2, 30, 1).unwrap();
        let (tr, te) = ds.split_per_class(20);
        assert_eq!(tr.class_counts(), vec![20, 20]);
        assert_eq!(te.class_counts(), vec![10, 10]);
        assert_eq!(tr.embedding, te.embedding);
    }
}
