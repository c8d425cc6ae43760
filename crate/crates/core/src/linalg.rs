//! Dense row-major linear algebra used throughout the crate.
//!
//! Everything here is `f64` and allocation-owning. The decompositions are
//! plain textbook algorithms (Householder QR, one-sided Jacobi SVD) with
//! fixed sign conventions so results are reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("basis of rank {rank} spans all of R^{ambient}; complement is empty")]
    EmptyComplement { rank: usize, ambient: usize },
    #[error("insufficient rank: need {needed} independent directions, found {found}")]
    InsufficientRank { needed: usize, found: usize },
    #[error("non-finite entry in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so route empty-column matrices through a dummy width.
        self.data
            .chunks_exact(self.cols.max(1))
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            &self.data,
            Layout::Normal,
            &other.data,
            Layout::Normal,
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &w) in self.row_iter().zip(v) {
            axpy(w, r, &mut out);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self · selfᵀ`, the Gram matrix of the rows.
    pub fn row_gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        gemm(
            self.rows,
            self.cols,
            self.rows,
            1.0,
            &self.data,
            Layout::Normal,
            &self.data,
            Layout::Transposed,
            0.0,
            &mut out.data,
        );
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(LinalgError::Dimension("vstack column mismatch".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Normal,
    Transposed,
}

/// `C ← α·op(A)·op(B) + β·C` with all buffers row-major.
///
/// `op(A)` is `m×k`, `op(B)` is `k×n`. Accumulation order is fixed, so the
/// result is deterministic for identical inputs.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong size");
    assert_eq!(b.len(), k * n, "gemm: B has wrong size");
    assert_eq!(c.len(), m * n, "gemm: C has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the asserts above pin every buffer to exactly the extent the
    // strides address, and `c` is an exclusive borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y ← y + α·x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rows of a `k×n` matrix forming an orthonormal set in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalBasis {
    vectors: Matrix,
}

impl OrthonormalBasis {
    /// Tolerance used when validating user-supplied bases.
    pub const TOLERANCE: f64 = 1e-9;

    /// Wraps `vectors` after checking unit norms and pairwise orthogonality.
    pub fn new(vectors: Matrix) -> Result<Self> {
        if !vectors.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let gram = vectors.row_gram();
        for i in 0..gram.rows() {
            for j in 0..gram.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram.get(i, j) - want).abs() > Self::TOLERANCE {
                    return Err(LinalgError::Dimension(format!(
                        "rows are not orthonormal (gram[{i}][{j}] = {})",
                        gram.get(i, j)
                    )));
                }
            }
        }
        Ok(Self { vectors })
    }

    /// Trusts the caller that rows are orthonormal.
    pub(crate) fn new_unchecked(vectors: Matrix) -> Self {
        Self { vectors }
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn rank(&self) -> usize {
        self.vectors.rows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Coordinates of `v` in this basis.
    pub fn coordinates(&self, v: &[f64]) -> Vec<f64> {
        self.vectors.mul_vec(v)
    }

    /// Linear combination `Σ coeffs[i]·row_i`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        self.vectors.tr_mul_vec(coeffs)
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.combine(&self.coordinates(v))
    }
}

/// Householder reflector for `x`: returns `(v, beta)` with `(I − β v vᵀ) x = ∓‖x‖ e₁`.
fn householder(x: &[f64]) -> (Vec<f64>, f64) {
    let alpha = norm(x);
    let mut v = x.to_vec();
    if alpha == 0.0 {
        return (v, 0.0);
    }
    let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * alpha;
    let vnorm2 = dot(&v, &v);
    if vnorm2 == 0.0 {
        return (v, 0.0);
    }
    (v, 2.0 / vnorm2)
}

/// Householder QR of a square matrix, normalized so `R` has a non-negative diagonal.
pub fn qr_decompose(m: &Matrix) -> Result<(Matrix, Matrix)> {
    if !m.is_square() {
        return Err(LinalgError::Dimension(format!(
            "QR expects a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.rows();
    let mut r = m.clone();
    // Qᵀ accumulated row-major; Q = qt.transpose() at the end.
    let mut qt = Matrix::identity(n);
    for j in 0..n.saturating_sub(1) {
        let x: Vec<f64> = (j..n).map(|i| r.get(i, j)).collect();
        let (v, beta) = householder(&x);
        if beta == 0.0 {
            continue;
        }
        apply_reflector_left(&mut r, j, &v, beta);
        apply_reflector_left(&mut qt, j, &v, beta);
        for i in j + 1..n {
            r.set(i, j, 0.0);
        }
    }
    let mut q = qt.transpose();
    for i in 0..n {
        if r.get(i, i) < 0.0 {
            for c in 0..n {
                r.set(i, c, -r.get(i, c));
                q.set(c, i, -q.get(c, i));
            }
        }
    }
    Ok((q, r))
}

/// Applies `I − β v vᵀ` (acting on rows `offset..`) from the left.
fn apply_reflector_left(a: &mut Matrix, offset: usize, v: &[f64], beta: f64) {
    let cols = a.cols();
    let mut w = vec![0.0; cols];
    for (k, &vk) in v.iter().enumerate() {
        axpy(vk, a.row(offset + k), &mut w);
    }
    for (k, &vk) in v.iter().enumerate() {
        axpy(-beta * vk, &w, a.row_mut(offset + k));
    }
}

/// Orthogonal matrix from the QR factor of a seeded standard-Gaussian matrix.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(LinalgError::Dimension("random_orthogonal needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    Ok(qr_decompose(&g)?.0)
}

/// Thin singular value decomposition `M = U·diag(S)·Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k` with orthonormal columns.
    pub u: Matrix,
    /// `k` values, non-negative and descending.
    pub s: Vec<f64>,
    /// `k × cols` with orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for c in 0..k {
                let v = us.get(r, c) * self.s[c];
                us.set(r, c, v);
            }
        }
        us.matmul(&self.vt).expect("svd factor shapes agree")
    }
}

/// Thin SVD via one-sided Jacobi rotations. `k = min(rows, cols)`.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.rows() >= m.cols() {
        let (u, s, v) = jacobi_columns(m);
        Ok(Svd { u, s, vt: v.transpose() })
    } else {
        let (u, s, v) = jacobi_columns(&m.transpose());
        Ok(Svd {
            u: v,
            s,
            vt: u.transpose(),
        })
    }
}

/// One-sided Jacobi on a tall `r×c` matrix (r ≥ c). Returns `(U r×c, S, V c×c)`.
fn jacobi_columns(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (r, c) = (a.rows(), a.cols());
    // Column-major working copies: cols[j] is column j of A·V, vcols[j] of V.
    let mut cols: Vec<Vec<f64>> = (0..c).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            let mut e = vec![0.0; c];
            e[j] = 1.0;
            e
        })
        .collect();
    const MAX_SWEEPS: usize = 60;
    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut cols, p, q, cs, sn);
                rotate_pair(&mut vcols, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..c).collect();
    let sv: Vec<f64> = cols.iter().map(|col| norm(col)).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tiny = smax * (r.max(c) as f64) * eps;
    let mut u = Matrix::zeros(r, c);
    let mut v = Matrix::zeros(c, c);
    let mut s = Vec::with_capacity(c);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(c);
    for (k, &j) in order.iter().enumerate() {
        s.push(sv[j]);
        let ucol = if sv[j] > tiny {
            cols[j].iter().map(|x| x / sv[j]).collect()
        } else {
            complete_orthonormal(&u_cols, r, k)
        };
        for i in 0..c {
            v.set(i, k, vcols[j][i]);
        }
        u_cols.push(ucol);
    }
    for (k, col) in u_cols.iter().enumerate() {
        for i in 0..r {
            u.set(i, k, col[i]);
        }
    }
    (u, s, v)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, cs: f64, sn: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = cs * a - sn * b;
        *y = sn * a + cs * b;
    }
}

/// A unit vector orthogonal to every vector in `existing`, found by
/// Gram-Schmidt over the standard basis starting at `hint`.
fn complete_orthonormal(existing: &[Vec<f64>], dim: usize, hint: usize) -> Vec<f64> {
    for off in 0..dim {
        let mut e = vec![0.0; dim];
        e[(hint + off) % dim] = 1.0;
        for _ in 0..2 {
            for q in existing {
                let d = dot(q, &e);
                axpy(-d, q, &mut e);
            }
        }
        let nrm = norm(&e);
        if nrm > 1e-6 {
            e.iter_mut().for_each(|x| *x /= nrm);
            return e;
        }
    }
    vec![0.0; dim]
}

/// Orthonormal basis of the orthogonal complement of `basis` in `R^n`.
///
/// `basis` has orthonormal rows, so every singular value is one and the
/// right-singular null vectors are exactly an orthonormal completion. The
/// completion comes from a Householder QR of `Bᵀ`: its trailing `n − m`
/// columns of `Q` span the complement.
pub fn null_space_basis(basis: &OrthonormalBasis) -> Result<OrthonormalBasis> {
    let (m, n) = (basis.rank(), basis.ambient_dim());
    if m >= n {
        return Err(LinalgError::EmptyComplement { rank: m, ambient: n });
    }
    // Reflectors are built from the rows of B (= columns of Bᵀ).
    let mut work = basis.vectors().clone(); // m×n, row j is column j of Bᵀ
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);
    for j in 0..m {
        let x: Vec<f64> = work.row(j)[j..].to_vec();
        let (v, beta) = householder(&x);
        if beta != 0.0 {
            for r in j..m {
                let row = &mut work.row_mut(r)[j..];
                let d = dot(&v, row);
                axpy(-beta * d, &v, row);
            }
        }
        reflectors.push((v, beta));
    }
    // Trailing columns of Q = H_0 ⋯ H_{m-1} applied to e_m … e_{n-1}.
    let mut out = Matrix::zeros(n - m, n);
    for (row, e_idx) in (m..n).enumerate() {
        let mut x = vec![0.0; n];
        x[e_idx] = 1.0;
        for (j, (v, beta)) in reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let seg = &mut x[j..];
            let d = dot(v, seg);
            axpy(-beta * d, v, seg);
        }
        out.row_mut(row).copy_from_slice(&x);
    }
    Ok(OrthonormalBasis::new_unchecked(out))
}

/// Flips `v` so its first coordinate with magnitude above `1e-12` is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top-`m` principal directions of uncentered difference vectors.
///
/// The rows of `vectors` are used as-is (no mean subtraction): they are
/// neighbor offsets from the chart origin. Components are the leading right
/// singular vectors of the stacked matrix.
pub fn pca_top_components(vectors: &Matrix, m: usize) -> Result<OrthonormalBasis> {
    if m == 0 {
        return Err(LinalgError::Dimension("need at least one component".into()));
    }
    if vectors.rows() < m {
        return Err(LinalgError::InsufficientRank {
            needed: m,
            found: vectors.rows(),
        });
    }
    if m > vectors.cols() {
        return Err(LinalgError::Dimension(format!(
            "cannot extract {m} components in R^{}",
            vectors.cols()
        )));
    }
    let dec = svd(vectors)?;
    let found = dec.s.iter().filter(|&&s| s >= 1e-12).count();
    if dec.s[m - 1] < 1e-12 {
        return Err(LinalgError::InsufficientRank { needed: m, found });
    }
    let n = vectors.cols();
    let mut out = Matrix::zeros(m, n);
    for k in 0..m {
        let row = out.row_mut(k);
        row.copy_from_slice(dec.vt.row(k));
        canonical_sign(row);
    }
    Ok(OrthonormalBasis::new_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn orthogonality_defect(q: &Matrix) -> f64 {
        q.transpose()
            .matmul(q)
            .unwrap()
            .sub(&Matrix::identity(q.cols()))
            .max_abs()
    }

    /// Cyclic Jacobi eigen-solver for symmetric matrices. Independent of the
    /// SVD path; used as the PCA oracle.
    fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
        let n = a.rows();
        let mut a = a.clone();
        let mut v = Matrix::identity(n);
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a.get(p, q).powi(2);
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a.get(k, p), a.get(k, q));
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a.get(p, k), a.get(q, k));
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        ((0..n).map(|i| a.get(i, i)).collect(), v)
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr_decompose(&Matrix::identity(3)).unwrap();
        assert_eq!(q, Matrix::identity(3));
        assert_eq!(r, Matrix::identity(3));
    }

    #[test]
    fn qr_permutation() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let (q, r) = qr_decompose(&m).unwrap();
        assert!(orthogonality_defect(&q) < 1e-12);
        let det = q.get(0, 0) * q.get(1, 1) - q.get(0, 1) * q.get(1, 0);
        assert!((det.abs() - 1.0).abs() < 1e-12);
        assert!(q.matmul(&r).unwrap().sub(&m).max_abs() < 1e-12);
    }

    #[test]
    fn qr_random_reconstruction() {
        let m = gaussian(10, 10, 7);
        let (q, r) = qr_decompose(&m).unwrap();
        let rel = q.matmul(&r).unwrap().sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(rel < 1e-10, "relative error {rel}");
        assert!(orthogonality_defect(&q) < 1e-9);
        for i in 0..10 {
            assert!(r.get(i, i) >= 0.0);
            for j in 0..i {
                assert!(r.get(i, j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qr_rejects_non_square() {
        assert!(matches!(
            qr_decompose(&Matrix::zeros(2, 3)),
            Err(LinalgError::Dimension(_))
        ));
    }

    #[test]
    fn random_orthogonal_cases() {
        let q1 = random_orthogonal(1, 3).unwrap();
        assert_eq!(q1.get(0, 0).abs(), 1.0);
        assert!(random_orthogonal(0, 3).is_err());

        let q = random_orthogonal(50, 11).unwrap();
        assert_eq!(q, random_orthogonal(50, 11).unwrap());
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let before = distance(&a, &b);
        let after = distance(&q.mul_vec(&a), &q.mul_vec(&b));
        assert!(((after - before) / before).abs() < 1e-9);
    }

    #[test]
    fn svd_diagonal_and_rank_one() {
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let dec = svd(&d).unwrap();
        assert!((dec.s[0] - 3.0).abs() < 1e-14 && (dec.s[1] - 1.0).abs() < 1e-14);

        let u = [0.6, 0.8];
        let v = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let outer = Matrix::from_fn(2, 2, |i, j| u[i] * v[j]);
        let dec = svd(&outer).unwrap();
        assert!((dec.s[0] - 1.0).abs() < 1e-10);
        assert!(dec.s[1].abs() < 1e-10);
    }

    #[test]
    fn svd_random_wide_reconstruction() {
        let m = gaussian(5, 8, 21);
        let dec = svd(&m).unwrap();
        let rel = dec.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(rel < 1e-10, "{rel}");
        assert!(dec.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(orthogonality_defect(&dec.u) < 1e-9);
        assert!(orthogonality_defect(&dec.vt.transpose()) < 1e-9);
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_u() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let dec = svd(&m).unwrap();
        assert!(dec.s[1] < 1e-12);
        assert!(orthogonality_defect(&dec.u) < 1e-9);
        assert!(dec.reconstruct().sub(&m).max_abs() < 1e-12);
    }

    #[test]
    fn null_space_axis_aligned() {
        let b = OrthonormalBasis::new(Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap()).unwrap();
        let ns = null_space_basis(&b).unwrap();
        assert_eq!(ns.rank(), 2);
        // e2 and e3 both lie entirely in the returned plane.
        for e in [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let p = ns.project(&e);
            assert!(distance(&p, &e) < 1e-12);
        }
    }

    #[test]
    fn null_space_circle_tangent() {
        let b = OrthonormalBasis::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).unwrap();
        let ns = null_space_basis(&b).unwrap();
        assert!((dot(ns.vectors().row(0), &[1.0, 0.0]).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_full_rank_errors() {
        let b = OrthonormalBasis::new(Matrix::identity(3)).unwrap();
        assert!(matches!(
            null_space_basis(&b),
            Err(LinalgError::EmptyComplement { .. })
        ));
    }

    #[test]
    fn null_space_completes_random_basis() {
        for (m, n, seed) in [(1, 2, 1), (3, 7, 2), (25, 100, 3)] {
            let q = random_orthogonal(n, seed).unwrap();
            let rows: Vec<Vec<f64>> = (0..m).map(|i| q.row(i).to_vec()).collect();
            let b = OrthonormalBasis::new(Matrix::from_rows(&rows).unwrap()).unwrap();
            let ns = null_space_basis(&b).unwrap();
            assert_eq!(ns.rank(), n - m);
            let full = b.vectors().vstack(ns.vectors()).unwrap();
            assert!(full.row_gram().sub(&Matrix::identity(n)).max_abs() < 1e-8);
        }
    }

    #[test]
    fn pca_one_dimensional_spread() {
        let v = Matrix::from_rows(&[[2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        let b = pca_top_components(&v, 1).unwrap();
        assert!(distance(b.vectors().row(0), &[1.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn pca_circle_neighbors_give_tangent() {
        // 100 nearby points on the unit circle around (1,0).
        let rows: Vec<[f64; 2]> = (1..=100)
            .map(|i| {
                let t = (i as f64 - 50.5) * 1e-3;
                [t.cos() - 1.0, t.sin()]
            })
            .collect();
        let b = pca_top_components(&Matrix::from_rows(&rows).unwrap(), 1).unwrap();
        let c = dot(b.vectors().row(0), &[0.0, 1.0]).abs().min(1.0);
        assert!(c.acos() < 0.05);
    }

    #[test]
    fn pca_insufficient_rank() {
        let v = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        assert!(matches!(
            pca_top_components(&v, 2),
            Err(LinalgError::InsufficientRank { .. })
        ));
        assert!(matches!(
            pca_top_components(&v.transpose().transpose(), 3),
            Err(LinalgError::InsufficientRank { .. })
        ));
    }

    #[test]
    fn pca_matches_second_moment_eigenvectors() {
        for seed in 0..10u64 {
            let (k, n, m) = (30, 6, 2);
            // Anisotropic cloud so the spectrum has a clear gap.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scales = [5.0, 3.0, 0.5, 0.3, 0.2, 0.1];
            let raw = Matrix::from_fn(k, n, |_, j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scales[j] * z
            });
            let rot = random_orthogonal(n, seed + 100).unwrap();
            let vectors = raw.matmul(&rot).unwrap();
            let b = pca_top_components(&vectors, m).unwrap();

            let second_moment = vectors.transpose().matmul(&vectors).unwrap();
            let (vals, vecs) = symmetric_eigen(&second_moment);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            for (c, &i) in idx.iter().take(m).enumerate() {
                let oracle = vecs.column(i);
                let cos = dot(b.vectors().row(c), &oracle).abs().min(1.0);
                assert!(cos.acos() < 1e-6, "seed {seed} comp {c}: angle {}", cos.acos());
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn qr_invariants(seed in 0u64..1000, n in 1usize..12) {
            let m = gaussian(n, n, seed);
            let (q, r) = qr_decompose(&m).unwrap();
            proptest::prop_assert!(orthogonality_defect(&q) < 1e-9);
            for i in 0..n {
                for j in 0..i {
                    proptest::prop_assert!(r.get(i, j).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn orthogonal_maps_preserve_distances(seed in 0u64..1000, n in 2usize..20) {
            let q = random_orthogonal(n, seed).unwrap();
            let pts = gaussian(5, n, seed ^ 0xabc);
            for i in 0..5 {
                for j in i + 1..5 {
                    let d0 = distance(pts.row(i), pts.row(j));
                    let d1 = distance(&q.mul_vec(pts.row(i)), &q.mul_vec(pts.row(j)));
                    proptest::prop_assert!(((d1 - d0) / d0).abs() < 1e-9);
                }
            }
        }
    }
}
