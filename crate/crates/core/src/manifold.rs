//! Local charts and off-manifold augmentation.
//!
//! A chart at a data point is an orthonormal tangent basis plus its
//! orthogonal complement. Augmented points are the base point moved by
//! `δ⊤` along a random tangent direction and `δ⊥` along a random normal
//! direction; for small offsets their distance to the manifold is `δ⊥`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{self, LabeledDataset, ManifoldDescriptor};
use crate::linalg::{self, LinalgError, Matrix, OrthonormalBasis};
use crate::rng::{rng_for, stream};

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("class {class} has {available} other points, cannot take {k} neighbours")]
    InsufficientNeighbors {
        class: usize,
        k: usize,
        available: usize,
    },
    #[error("degenerate chart at point {index}: {source}")]
    DegenerateChart { index: usize, source: LinalgError },
    #[error("analytic charts unsupported: {0}")]
    Unsupported(String),
    #[error("coefficient draw had zero norm twice")]
    ZeroNormDraw,
    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("requested {requested} on-manifold points for class {class}, dataset has {available}")]
    InsufficientSamples {
        class: usize,
        requested: usize,
        available: usize,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartSource {
    Inferred,
    Analytic,
}

#[derive(Debug, Clone)]
pub struct LocalChart {
    pub base_point: Vec<f64>,
    pub tangent: OrthonormalBasis,
    pub normal: OrthonormalBasis,
    pub source: ChartSource,
}

impl LocalChart {
    /// Largest |tᵢ·nⱼ| between tangent and normal rows.
    pub fn max_cross_dot(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in self.tangent.vectors().row_iter() {
            for n in self.normal.vectors().row_iter() {
                worst = worst.max(linalg::dot(t, n).abs());
            }
        }
        worst
    }

    /// Tangent rows stacked over normal rows (`n×n`).
    pub fn stacked(&self) -> Matrix {
        self.tangent
            .vectors()
            .vstack(self.normal.vectors())
            .expect("chart bases share ambient dim")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub point: Vec<f64>,
    pub source_class: usize,
    pub delta_perp: f64,
    pub delta_tan: f64,
    pub targets: Vec<f64>,
}

/// Lengths are in dataset (normalized) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_tangent: f64,
    pub max_norm: f64,
    pub high_distance: f64,
    pub k_neighbors: usize,
    pub augment_per_point: usize,
    pub chart_source: ChartSource,
    /// Draw basis coefficients from `[-1,1]` instead of `[0,1]`.
    pub symmetric_coeffs: bool,
}

impl AugmentConfig {
    pub const DEFAULT_HIGH_DISTANCE: f64 = 1.0;

    pub fn default_k(m: usize) -> usize {
        50.max(2 * (m + 1))
    }

    /// Defaults for intrinsic dimension `m`: `max_tangent = max_norm`,
    /// `high_distance = 1`, inferred charts, `[0,1]` coefficients.
    pub fn new(m: usize, max_norm: f64) -> Self {
        Self {
            max_tangent: max_norm,
            max_norm,
            high_distance: Self::DEFAULT_HIGH_DISTANCE,
            k_neighbors: Self::default_k(m),
            augment_per_point: 1,
            chart_source: ChartSource::Inferred,
            symmetric_coeffs: false,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |s: String| Err(ManifoldError::InvalidConfig(s));
        if !(self.max_norm > 0.0) {
            return bad(format!("max_norm must be positive, got {}", self.max_norm));
        }
        if !(self.max_tangent >= 0.0) {
            return bad(format!("max_tangent must be non-negative, got {}", self.max_tangent));
        }
        if !(self.high_distance >= self.max_norm) {
            return bad(format!(
                "high_distance {} must be at least max_norm {}",
                self.high_distance, self.max_norm
            ));
        }
        if self.k_neighbors < m + 1 {
            return bad(format!("k_neighbors {} must be at least m+1 = {}", self.k_neighbors, m + 1));
        }
        Ok(())
    }
}

/// Exact k nearest same-class neighbours of point `index`, excluding itself.
/// Ties go to the lower index.
pub fn knn_same_class(dataset: &LabeledDataset, index: usize, k: usize) -> Result<Vec<usize>> {
    let class = dataset.labels[index];
    let candidates = dataset.class_indices(class);
    knn_among(&dataset.points, &candidates, index, k).ok_or(ManifoldError::InsufficientNeighbors {
        class,
        k,
        available: candidates.len().saturating_sub(1),
    })
}

fn knn_among(points: &Matrix, candidates: &[usize], index: usize, k: usize) -> Option<Vec<usize>> {
    let q = points.row(index);
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != index)
        .map(|&j| (linalg::squared_distance(q, points.row(j)), j))
        .collect();
    if k >= d.len() + 1 || k == 0 {
        // k must be strictly less than the class population.
        if k == 0 {
            return Some(Vec::new());
        }
        return None;
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    Some(d.into_iter().map(|(_, j)| j).collect())
}

fn chart_from_neighbors(
    points: &Matrix,
    index: usize,
    neighbors: &[usize],
    m: usize,
) -> Result<LocalChart> {
    let x = points.row(index);
    let n = points.cols();
    let mut deltas = Matrix::zeros(neighbors.len(), n);
    for (r, &j) in neighbors.iter().enumerate() {
        for (d, (a, b)) in deltas.row_mut(r).iter_mut().zip(points.row(j).iter().zip(x)) {
            *d = a - b;
        }
    }
    let tangent = linalg::pca_top_components(&deltas, m)
        .map_err(|source| ManifoldError::DegenerateChart { index, source })?;
    let normal = linalg::null_space_basis(&tangent)
        .map_err(|source| ManifoldError::DegenerateChart { index, source })?;
    Ok(LocalChart {
        base_point: x.to_vec(),
        tangent,
        normal,
        source: ChartSource::Inferred,
    })
}

/// Tangent space from PCA of the `k` nearest same-class neighbour offsets.
pub fn infer_chart(dataset: &LabeledDataset, index: usize, m: usize, k: usize) -> Result<LocalChart> {
    let neighbors = knn_same_class(dataset, index, k)?;
    chart_from_neighbors(&dataset.points, index, &neighbors, m)
}

/// Chart from the generating parameterization, mapped through the stored rotation.
pub fn analytic_chart(dataset: &LabeledDataset, index: usize) -> Result<LocalChart> {
    let params = dataset
        .canonical_params
        .as_ref()
        .ok_or_else(|| ManifoldError::Unsupported("dataset has no canonical parameters".into()))?;
    let (m, n) = (dataset.m, dataset.n);
    let k = m + 1;
    let p = params.row(index);
    let (tangent_c, normal_in_plane): (Vec<Vec<f64>>, Vec<f64>) =
        match &dataset.descriptors[dataset.labels[index]] {
            ManifoldDescriptor::Sphere { center, .. } => {
                let mut radial: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = linalg::norm(&radial);
                if r == 0.0 {
                    return Err(ManifoldError::Unsupported("point sits at sphere centre".into()));
                }
                radial.iter_mut().for_each(|v| *v /= r);
                let rb = OrthonormalBasis::new_unchecked(Matrix::from_vec(1, k, radial.clone())?);
                let tan = linalg::null_space_basis(&rb)?;
                (tan.vectors().row_iter().map(|r| r.to_vec()).collect(), radial)
            }
            ManifoldDescriptor::SwissRoll { mu_offset, .. } => {
                let d = datagen::roll_curve_derivative(*mu_offset, p[0]);
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let t = [d[0] / len, d[1] / len];
                let mut rows = Vec::with_capacity(m);
                let mut first = vec![0.0; k];
                first[0] = t[0];
                first[1] = t[1];
                rows.push(first);
                for a in 2..k {
                    let mut e = vec![0.0; k];
                    e[a] = 1.0;
                    rows.push(e);
                }
                let mut nrm = vec![0.0; k];
                nrm[0] = -t[1];
                nrm[1] = t[0];
                (rows, nrm)
            }
        };
    let emb = &dataset.embedding;
    let tangent_rows: Vec<Vec<f64>> = tangent_c.iter().map(|v| emb.map_direction(v)).collect();
    let mut normal_rows = Vec::with_capacity(n - m);
    normal_rows.push(emb.map_direction(&normal_in_plane));
    for a in k..n {
        // Column a of Q is the image of the padded axis e_a.
        normal_rows.push(emb.rotation.column(a));
    }
    Ok(LocalChart {
        base_point: dataset.point(index).to_vec(),
        tangent: OrthonormalBasis::new_unchecked(Matrix::from_rows(&tangent_rows)?),
        normal: OrthonormalBasis::new_unchecked(Matrix::from_rows(&normal_rows)?),
        source: ChartSource::Analytic,
    })
}

/// Moves the chart origin by `delta_tan` along `Σ tcoef·BT` and `delta_perp`
/// along `Σ ncoef·BN` (both directions normalized).
pub fn displace(
    chart: &LocalChart,
    tangent_coeffs: &[f64],
    normal_coeffs: &[f64],
    delta_tan: f64,
    delta_perp: f64,
) -> Result<Vec<f64>> {
    let t = chart.tangent.combine(tangent_coeffs);
    let nv = chart.normal.combine(normal_coeffs);
    let (tn, nn) = (linalg::norm(&t), linalg::norm(&nv));
    if (delta_tan != 0.0 && tn == 0.0) || (delta_perp != 0.0 && nn == 0.0) {
        return Err(ManifoldError::ZeroNormDraw);
    }
    let mut x = chart.base_point.clone();
    if delta_tan != 0.0 {
        linalg::axpy(delta_tan / tn, &t, &mut x);
    }
    if delta_perp != 0.0 {
        linalg::axpy(delta_perp / nn, &nv, &mut x);
    }
    Ok(x)
}

fn draw_coeffs<R: Rng>(rng: &mut R, count: usize, symmetric: bool) -> Result<Vec<f64>> {
    for _ in 0..2 {
        let c: Vec<f64> = (0..count)
            .map(|_| {
                if symmetric {
                    rng.gen_range(-1.0..=1.0)
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        if c.iter().any(|&v| v != 0.0) {
            return Ok(c);
        }
    }
    Err(ManifoldError::ZeroNormDraw)
}

/// Draws one off-manifold point around `chart` for class `source_class`.
pub fn sample_augmentation<R: Rng>(
    chart: &LocalChart,
    cfg: &AugmentConfig,
    source_class: usize,
    num_classes: usize,
    rng: &mut R,
) -> Result<AugmentedSample> {
    let tc = draw_coeffs(rng, chart.tangent.rank(), cfg.symmetric_coeffs)?;
    let nc = draw_coeffs(rng, chart.normal.rank(), cfg.symmetric_coeffs)?;
    let delta_tan = rng.gen_range(0.0..=cfg.max_tangent);
    let delta_perp = rng.gen_range(0.0..=cfg.max_norm);
    let point = displace(chart, &tc, &nc, delta_tan, delta_perp)?;
    let targets = build_distance_targets(source_class, delta_perp, num_classes, cfg.high_distance)?;
    Ok(AugmentedSample {
        point,
        source_class,
        delta_perp,
        delta_tan,
        targets,
    })
}

/// `targets[source_class] = delta_perp`, every other entry `high_distance`.
pub fn build_distance_targets(
    source_class: usize,
    delta_perp: f64,
    num_classes: usize,
    high_distance: f64,
) -> Result<Vec<f64>> {
    if source_class >= num_classes {
        return Err(ManifoldError::InvalidClass {
            class: source_class,
            num_classes,
        });
    }
    let mut t = vec![high_distance; num_classes];
    t[source_class] = delta_perp;
    Ok(t)
}

/// Points with per-class distance targets, ready for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub points: Matrix,
    /// `N×C`
    pub targets: Matrix,
    pub labels: Vec<usize>,
    /// Normal offset of each row; zero for on-manifold rows.
    pub delta_perp: Vec<f64>,
    pub augmented: Vec<bool>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.targets.cols()
    }

    /// Only the on-manifold rows.
    pub fn on_manifold(&self) -> TrainingSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| !self.augmented[i]).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Matrix::from_vec(idx.len(), m.cols(), data).expect("subset keeps width")
        };
        TrainingSet {
            points: pick(&self.points),
            targets: pick(&self.targets),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            delta_perp: idx.iter().map(|&i| self.delta_perp[i]).collect(),
            augmented: idx.iter().map(|&i| self.augmented[i]).collect(),
        }
    }
}

fn split_even(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

struct Row {
    point: Vec<f64>,
    targets: Vec<f64>,
    label: usize,
    delta_perp: f64,
    augmented: bool,
}

/// `n_on` on-manifold rows (δ⊥ = 0) and `n_off` augmented rows, balanced over
/// classes and shuffled by `seed`.
///
/// On-manifold rows are the first `n_on / C` points of each class; augmented
/// rows are spread evenly over those same base points. Neighbour search for
/// inferred charts runs over the whole class in `dataset`.
pub fn build_training_set(
    dataset: &LabeledDataset,
    cfg: &AugmentConfig,
    n_on: usize,
    n_off: usize,
    seed: u64,
) -> Result<TrainingSet> {
    cfg.validate(dataset.m)?;
    let c_count = dataset.num_classes;
    let on_per_class = split_even(n_on, c_count);
    let off_per_class = split_even(n_off, c_count);
    let mut rows: Vec<Row> = Vec::with_capacity(n_on + n_off);

    for c in 0..c_count {
        let members = dataset.class_indices(c);
        let n_base = if on_per_class[c] > 0 {
            on_per_class[c]
        } else {
            members.len()
        };
        if n_base > members.len() || (n_base == 0 && off_per_class[c] > 0) {
            return Err(ManifoldError::InsufficientSamples {
                class: c,
                requested: on_per_class[c],
                available: members.len(),
            });
        }
        let bases = &members[..n_base];
        for &i in &bases[..on_per_class[c]] {
            rows.push(Row {
                point: dataset.point(i).to_vec(),
                targets: build_distance_targets(c, 0.0, c_count, cfg.high_distance)?,
                label: c,
                delta_perp: 0.0,
                augmented: false,
            });
        }
        if off_per_class[c] == 0 {
            continue;
        }
        let counts = split_even(off_per_class[c], n_base);
        let per_base: Vec<Result<Vec<Row>>> = bases
            .par_iter()
            .zip(counts.par_iter())
            .map(|(&i, &count)| {
                if count == 0 {
                    return Ok(Vec::new());
                }
                let chart = match cfg.chart_source {
                    ChartSource::Inferred => {
                        let nb = knn_among(&dataset.points, &members, i, cfg.k_neighbors).ok_or(
                            ManifoldError::InsufficientNeighbors {
                                class: c,
                                k: cfg.k_neighbors,
                                available: members.len().saturating_sub(1),
                            },
                        )?;
                        chart_from_neighbors(&dataset.points, i, &nb, dataset.m)?
                    }
                    ChartSource::Analytic => analytic_chart(dataset, i)?,
                };
                let mut rng = rng_for(seed, stream::AUGMENT, i as u64);
                (0..count)
                    .map(|_| {
                        let s = sample_augmentation(&chart, cfg, c, c_count, &mut rng)?;
                        Ok(Row {
                            point: s.point,
                            targets: s.targets,
                            label: c,
                            delta_perp: s.delta_perp,
                            augmented: true,
                        })
                    })
                    .collect()
            })
            .collect();
        for r in per_base {
            rows.extend(r?);
        }
    }

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng_for(seed, stream::SHUFFLE, 0));
    let n = dataset.n;
    let mut points = Vec::with_capacity(rows.len() * n);
    let mut targets = Vec::with_capacity(rows.len() * c_count);
    let mut labels = Vec::with_capacity(rows.len());
    let mut delta_perp = Vec::with_capacity(rows.len());
    let mut augmented = Vec::with_capacity(rows.len());
    for &i in &order {
        let r = &rows[i];
        points.extend_from_slice(&r.point);
        targets.extend_from_slice(&r.targets);
        labels.push(r.label);
        delta_perp.push(r.delta_perp);
        augmented.push(r.augmented);
    }
    let len = labels.len();
    Ok(TrainingSet {
        points: Matrix::from_vec(len, n, points)?,
        targets: Matrix::from_vec(len, c_count, targets)?,
        labels,
        delta_perp,
        augmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_concentric_spheres, EmbeddingRecord, DatasetKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Unit circle data in raw (identity-embedded) coordinates.
    fn raw_circle(count: usize, seed: u64) -> LabeledDataset {
        let pts = datagen::sample_sphere_points(1, 1.0, &[0.0, 0.0], count, seed).unwrap();
        LabeledDataset {
            kind: DatasetKind::ConcentricSpheres,
            points: pts.clone(),
            labels: vec![0; count],
            m: 1,
            n: 2,
            num_classes: 1,
            descriptors: vec![ManifoldDescriptor::Sphere {
                center: vec![0.0, 0.0],
                radius: 1.0,
            }],
            embedding: EmbeddingRecord {
                rotation: Matrix::identity(2),
                translation: vec![0.0; 2],
                cube_scale: 1.0,
                cube_offset: vec![0.0; 2],
            },
            seed,
            canonical_params: Some(pts),
        }
    }

    fn line_dataset(xs: &[f64]) -> LabeledDataset {
        let mut ds = raw_circle(xs.len(), 0);
        ds.points = Matrix::from_rows(&xs.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>()).unwrap();
        ds
    }

    #[test]
    fn knn_orders_by_distance() {
        let ds = line_dataset(&[0.0, 1.0, 3.0]);
        assert_eq!(knn_same_class(&ds, 0, 2).unwrap(), vec![1, 2]);
        assert!(matches!(
            knn_same_class(&ds, 0, 3),
            Err(ManifoldError::InsufficientNeighbors { .. })
        ));
    }

    #[test]
    fn knn_ties_break_to_lower_index() {
        let ds = line_dataset(&[0.0, 1.0, -1.0, 2.0]);
        assert_eq!(knn_same_class(&ds, 0, 1).unwrap(), vec![1]);
        assert_eq!(knn_same_class(&ds, 0, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn knn_matches_brute_force_and_excludes_query() {
        let ds = make_concentric_spheres(2, 5, 300, 4).unwrap();
        for q in [0, 17, 299, 300, 451] {
            let got = knn_same_class(&ds, q, 12).unwrap();
            assert!(!got.contains(&q));
            let mut all: Vec<(f64, usize)> = (0..ds.len())
                .filter(|&j| j != q && ds.labels[j] == ds.labels[q])
                .map(|j| (linalg::distance(ds.point(q), ds.point(j)), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(12).map(|p| p.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn inferred_circle_chart() {
        let mut ds = raw_circle(10_000, 1);
        // Put a base point exactly at (1, 0).
        ds.points.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        let chart = infer_chart(&ds, 0, 1, 50).unwrap();
        assert_eq!((chart.tangent.rank(), chart.normal.rank()), (1, 1));
        let t = linalg::dot(chart.tangent.vectors().row(0), &[0.0, 1.0]).abs().min(1.0);
        let n = linalg::dot(chart.normal.vectors().row(0), &[1.0, 0.0]).abs().min(1.0);
        assert!(t.acos() < 0.05 && n.acos() < 0.05);
        assert!(chart.max_cross_dot() < 1e-8);
    }

    #[test]
    fn degenerate_neighbourhood_is_reported() {
        let ds = line_dataset(&[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            infer_chart(&ds, 0, 2, 3),
            Err(ManifoldError::DegenerateChart { .. })
        ));
    }

    #[test]
    fn analytic_sphere_normal_is_radial() {
        let ds = make_concentric_spheres(2, 5, 50, 3).unwrap();
        let i = 60;
        let chart = analytic_chart(&ds, i).unwrap();
        let c = match &ds.descriptors[1] {
            ManifoldDescriptor::Sphere { center, .. } => center.clone(),
            _ => unreachable!(),
        };
        let p = ds.canonical_params.as_ref().unwrap().row(i).to_vec();
        let radial: Vec<f64> = p.iter().zip(&c).map(|(a, b)| (a - b) / 1.3).collect();
        let want = ds.embedding.map_direction(&radial);
        assert!(linalg::distance(chart.normal.vectors().row(0), &want) < 1e-9);
        let g = chart.stacked().row_gram().sub(&Matrix::identity(5)).max_abs();
        assert!(g < 1e-8);
    }

    #[test]
    fn analytic_roll_tangent_at_pi() {
        let mut ds = datagen::make_swiss_rolls(1, 2, 10, 2).unwrap();
        let params = ds.canonical_params.as_mut().unwrap();
        params.row_mut(0)[0] = std::f64::consts::PI;
        let chart = analytic_chart(&ds, 0).unwrap();
        let pi = std::f64::consts::PI;
        let len = (pi * pi + 1.0).sqrt();
        let want = ds.embedding.map_direction(&[-pi / len, -1.0 / len]);
        let got = chart.tangent.vectors().row(0);
        assert!((linalg::dot(got, &want).abs() - 1.0).abs() < 1e-12);
        // Finite-difference cross-check of the curve direction.
        let h = 1e-6;
        let a = datagen::roll_curve(0.0, pi + h);
        let b = datagen::roll_curve(0.0, pi - h);
        let fd = [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)];
        assert!((fd[0] + pi).abs() < 1e-6 && (fd[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_requires_params() {
        let mut ds = make_concentric_spheres(1, 2, 10, 3).unwrap();
        ds.canonical_params = None;
        assert!(matches!(analytic_chart(&ds, 0), Err(ManifoldError::Unsupported(_))));
    }

    #[test]
    fn analytic_and_inferred_agree_on_dense_circle() {
        let ds = make_concentric_spheres(1, 2, 20_000, 5).unwrap();
        for i in [0, 1234, 9999] {
            let a = analytic_chart(&ds, i).unwrap();
            let b = infer_chart(&ds, i, 1, 50).unwrap();
            let c = linalg::dot(a.tangent.vectors().row(0), b.tangent.vectors().row(0))
                .abs()
                .min(1.0);
            assert!(c.acos() < 0.05);
        }
    }

    fn circle_chart() -> LocalChart {
        LocalChart {
            base_point: vec![1.0, 0.0],
            tangent: OrthonormalBasis::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).unwrap(),
            normal: OrthonormalBasis::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap(),
            source: ChartSource::Analytic,
        }
    }

    #[test]
    fn zero_offsets_return_base_point() {
        let chart = circle_chart();
        assert_eq!(displace(&chart, &[0.3], &[0.7], 0.0, 0.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn normal_offset_matches_brute_force_distance() {
        let chart = circle_chart();
        let x = displace(&chart, &[0.5], &[0.5], 0.0, 0.1).unwrap();
        assert!(linalg::distance(&x, &[1.1, 0.0]) < 1e-15);
        let dense = datagen::sample_sphere_points(1, 1.0, &[0.0, 0.0], 100_000, 9).unwrap();
        let d = dense
            .row_iter()
            .map(|r| linalg::distance(r, &x))
            .fold(f64::INFINITY, f64::min);
        assert!((d - 0.1).abs() < 2e-3);
    }

    #[test]
    fn sampled_offsets_decompose_exactly() {
        let ds = make_concentric_spheres(3, 8, 200, 1).unwrap();
        let cfg = AugmentConfig::new(3, 0.14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let chart = infer_chart(&ds, i, 3, 50).unwrap();
            let s = sample_augmentation(&chart, &cfg, 0, 2, &mut rng).unwrap();
            let diff: Vec<f64> = s.point.iter().zip(&chart.base_point).map(|(a, b)| a - b).collect();
            let pn = linalg::norm(&chart.normal.project(&diff));
            let pt = linalg::norm(&chart.tangent.project(&diff));
            assert!((pn - s.delta_perp).abs() < 1e-9);
            assert!((pt - s.delta_tan).abs() < 1e-9);
            assert!(s.delta_perp <= 0.14 && s.delta_tan <= 0.14);
            assert_eq!(s.targets, vec![s.delta_perp, 1.0]);
        }
    }

    #[test]
    fn targets() {
        assert_eq!(build_distance_targets(0, 0.0, 2, 1.0).unwrap(), vec![0.0, 1.0]);
        assert_eq!(build_distance_targets(1, 0.05, 2, 1.0).unwrap(), vec![1.0, 0.05]);
        assert!(build_distance_targets(2, 0.0, 2, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = AugmentConfig::new(1, 0.1);
        assert!(cfg.validate(1).is_ok());
        assert_eq!(cfg.k_neighbors, 50);
        assert_eq!(AugmentConfig::default_k(40), 82);
        cfg.high_distance = 0.05;
        assert!(cfg.validate(1).is_err());
        let mut cfg = AugmentConfig::new(1, 0.1);
        cfg.k_neighbors = 1;
        assert!(cfg.validate(1).is_err());
    }

    #[test]
    fn training_set_shape_and_balance() {
        let ds = make_concentric_spheres(1, 2, 500, 7).unwrap();
        let cfg = AugmentConfig::new(1, 0.05);
        let ts = build_training_set(&ds, &cfg, 400, 1000, 11).unwrap();
        assert_eq!(ts.len(), 1400);
        assert_eq!(ts.augmented.iter().filter(|&&a| a).count(), 1000);
        let per_class: Vec<usize> = (0..2).map(|c| ts.labels.iter().filter(|&&l| l == c).count()).collect();
        assert_eq!(per_class, vec![700, 700]);
        for i in 0..ts.len() {
            let own = ts.targets.get(i, ts.labels[i]);
            assert!(own <= 0.05 && own == ts.delta_perp[i]);
            assert_eq!(ts.targets.get(i, 1 - ts.labels[i]), 1.0);
        }
        assert_eq!(ts, build_training_set(&ds, &cfg, 400, 1000, 11).unwrap());
        assert!(build_training_set(&ds, &cfg, 2000, 10, 1).is_err());
    }

    #[test]
    fn delta_perp_is_uniform() {
        // Kolmogorov–Smirnov statistic of δ⊥ against U[0, max_norm].
        let ds = make_concentric_spheres(1, 2, 2000, 2).unwrap();
        let cfg = AugmentConfig {
            chart_source: ChartSource::Analytic,
            ..AugmentConfig::new(1, 0.1)
        };
        let ts = build_training_set(&ds, &cfg, 0, 100_000, 5).unwrap();
        let mut d: Vec<f64> = ts.delta_perp.clone();
        d.sort_by(f64::total_cmp);
        let n = d.len() as f64;
        let ks = d
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = v / 0.1;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }
}
