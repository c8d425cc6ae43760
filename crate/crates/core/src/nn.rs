//! Branched MLP with hand-written backpropagation.
//!
//! Layout: two shared `FCB` blocks (affine → batch-norm → ReLU), then one
//! branch per class made of two more `FCB` blocks and a single affine output.
//! The distance learner squashes each branch output through a sigmoid; the
//! classifiers apply a softmax across the branch outputs.
//!
//! Weights are stored `in × out` row-major so a batch `X` (B×in) maps to
//! `X·W + b`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gemm, Layout, Matrix};
use crate::rng::{rng_for, stream};

pub const DEFAULT_WIDTH: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("train-mode batch norm needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("forward cache is stale: parameters changed since it was computed")]
    StaleCache,
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DistanceLearner,
    Standard,
    Robust,
}

impl ModelKind {
    pub fn head(self) -> Head {
        match self {
            ModelKind::DistanceLearner => Head::SigmoidPerBranch,
            ModelKind::Standard | ModelKind::Robust => Head::SoftmaxOverBranches,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            ModelKind::DistanceLearner => LossKind::Mse,
            ModelKind::Standard | ModelKind::Robust => LossKind::CrossEntropy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DistanceLearner => "distance_learner",
            ModelKind::Standard => "standard",
            ModelKind::Robust => "robust",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            ModelKind::DistanceLearner => 0,
            ModelKind::Standard => 1,
            ModelKind::Robust => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ModelKind::DistanceLearner),
            1 => Some(ModelKind::Standard),
            2 => Some(ModelKind::Robust),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    SigmoidPerBranch,
    SoftmaxOverBranches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Fcb,
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in_dim × out_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            z.extend_from_slice(&self.bias);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            1.0,
            x,
            Layout::Normal,
            &self.weight,
            Layout::Normal,
            1.0,
            &mut z,
        );
        z
    }

    /// Returns `(dW, db, dx)` for upstream `dz`.
    fn backward(
        &self,
        x: &[f64],
        dz: &[f64],
        batch: usize,
        need_params: bool,
        need_dx: bool,
    ) -> (Option<(Vec<f64>, Vec<f64>)>, Option<Vec<f64>>) {
        let params = need_params.then(|| {
            let mut dw = vec![0.0; self.in_dim * self.out_dim];
            gemm(
                self.in_dim,
                batch,
                self.out_dim,
                1.0,
                x,
                Layout::Transposed,
                dz,
                Layout::Normal,
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; self.out_dim];
            for row in dz.chunks_exact(self.out_dim) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            (dw, db)
        });
        let dx = need_dx.then(|| {
            let mut dx = vec![0.0; batch * self.in_dim];
            gemm(
                batch,
                self.out_dim,
                self.in_dim,
                1.0,
                dz,
                Layout::Normal,
                &self.weight,
                Layout::Transposed,
                0.0,
                &mut dx,
            );
            dx
        });
        (params, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            eps,
        }
    }
}

/// Affine → batch-norm → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Fcb {
    pub dense: Dense,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct FcbCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Post-ReLU output; `out > 0` is the ReLU mask.
    out: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl Fcb {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, bn_momentum: f64, bn_eps: f64, rng: &mut R) -> Self {
        Self {
            dense: Dense::init(in_dim, out_dim, rng),
            bn: BatchNorm::new(out_dim, bn_momentum, bn_eps),
        }
    }

    fn forward(&self, x: &[f64], batch: usize, mode: Mode) -> FcbCache {
        let d = self.dense.out_dim;
        let z = self.dense.forward(x, batch);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; d];
                for row in z.chunks_exact(d) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= batch as f64);
                let mut var = vec![0.0; d];
                for row in z.chunks_exact(d) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= batch as f64);
                (mean, var)
            }
            Mode::Eval => (self.bn.running_mean.clone(), self.bn.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn.eps).sqrt()).collect();
        let mut xhat = z;
        let mut out = vec![0.0; batch * d];
        for (xr, or) in xhat.chunks_exact_mut(d).zip(out.chunks_exact_mut(d)) {
            for j in 0..d {
                let h = (xr[j] - mean[j]) * inv_std[j];
                xr[j] = h;
                or[j] = (self.bn.gamma[j] * h + self.bn.beta[j]).max(0.0);
            }
        }
        FcbCache {
            xhat,
            inv_std,
            out,
            batch_mean: mean,
            batch_var: var,
        }
    }

    /// Gradients `(dW, db, dγ, dβ)` and the input gradient.
    fn backward(
        &self,
        x: &[f64],
        cache: &FcbCache,
        d_out: &[f64],
        batch: usize,
        mode: Mode,
        need_params: bool,
        need_dx: bool,
    ) -> (Option<[Vec<f64>; 4]>, Option<Vec<f64>>) {
        let d = self.dense.out_dim;
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        // dxhat, written in place of dy.
        let mut dxhat = vec![0.0; batch * d];
        for ((dr, gr), (hr, or)) in dxhat
            .chunks_exact_mut(d)
            .zip(d_out.chunks_exact(d))
            .zip(cache.xhat.chunks_exact(d).zip(cache.out.chunks_exact(d)))
        {
            for j in 0..d {
                let dy = if or[j] > 0.0 { gr[j] } else { 0.0 };
                dgamma[j] += dy * hr[j];
                dbeta[j] += dy;
                dr[j] = dy * self.bn.gamma[j];
            }
        }
        let dz = match mode {
            Mode::Eval => {
                for row in dxhat.chunks_exact_mut(d) {
                    for (v, s) in row.iter_mut().zip(&cache.inv_std) {
                        *v *= s;
                    }
                }
                dxhat
            }
            Mode::Train => {
                let mut sum = vec![0.0; d];
                let mut sum_h = vec![0.0; d];
                for (dr, hr) in dxhat.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
                    for j in 0..d {
                        sum[j] += dr[j];
                        sum_h[j] += dr[j] * hr[j];
                    }
                }
                let bf = batch as f64;
                for (dr, hr) in dxhat.chunks_exact_mut(d).zip(cache.xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dr[j] = cache.inv_std[j] / bf * (bf * dr[j] - sum[j] - hr[j] * sum_h[j]);
                    }
                }
                dxhat
            }
        };
        let (p, dx) = self.dense.backward(x, &dz, batch, need_params, need_dx);
        (p.map(|(dw, db)| [dw, db, dgamma, dbeta]), dx)
    }

    fn update_running_stats(&mut self, cache: &FcbCache, batch: usize) {
        let mo = self.bn.momentum;
        let unbias = batch as f64 / (batch as f64 - 1.0);
        for j in 0..self.bn.running_mean.len() {
            self.bn.running_mean[j] = (1.0 - mo) * self.bn.running_mean[j] + mo * cache.batch_mean[j];
            self.bn.running_var[j] = (1.0 - mo) * self.bn.running_var[j] + mo * cache.batch_var[j] * unbias;
        }
    }

    fn trainable<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        out.push(&mut self.dense.weight);
        out.push(&mut self.dense.bias);
        out.push(&mut self.bn.gamma);
        out.push(&mut self.bn.beta);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub hidden: [Fcb; 2],
    pub out: Dense,
}

/// Hyper-parameters that shape a freshly initialized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ArchConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            width: DEFAULT_WIDTH,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Weights, biases and batch-norm state for the shared trunk plus one branch per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub width: usize,
    pub trunk: [Fcb; 2],
    pub branches: Vec<Branch>,
    pub mode: Mode,
    version: u64,
}

/// Trainable-parameter gradients, in [`ModelParams::trainable_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    batch: usize,
    input: Vec<f64>,
    trunk: Vec<FcbCache>,
    branches: Vec<[FcbCache; 2]>,
    /// `B×C` pre-head values (logits).
    pub logits: Matrix,
    /// `B×C` head outputs.
    pub outputs: Matrix,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Option<Gradients>,
    pub d_input: Option<Matrix>,
}

impl ModelParams {
    pub fn init(kind: ModelKind, arch: ArchConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::INIT, 0);
        let w = arch.width;
        let (mo, eps) = (arch.bn_momentum, arch.bn_eps);
        let trunk = [
            Fcb::init(arch.input_dim, w, mo, eps, &mut rng),
            Fcb::init(w, w, mo, eps, &mut rng),
        ];
        let branches = (0..arch.num_classes)
            .map(|_| Branch {
                hidden: [
                    Fcb::init(w, w, mo, eps, &mut rng),
                    Fcb::init(w, w, mo, eps, &mut rng),
                ],
                out: Dense::init(w, 1, &mut rng),
            })
            .collect();
        Self {
            kind,
            input_dim: arch.input_dim,
            width: w,
            trunk,
            branches,
            mode: Mode::Train,
            version: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.branches.len()
    }

    pub fn head(&self) -> Head {
        self.kind.head()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        if self.mode != mode {
            self.mode = mode;
            self.touch();
        }
    }

    /// Marks parameters as changed so older caches are rejected.
    pub fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    pub fn layer_table(&self) -> Vec<LayerSpec> {
        let fcb = |f: &Fcb| LayerSpec {
            kind: LayerKind::Fcb,
            in_dim: f.dense.in_dim,
            out_dim: f.dense.out_dim,
        };
        let mut t: Vec<LayerSpec> = self.trunk.iter().map(fcb).collect();
        for b in &self.branches {
            t.extend(b.hidden.iter().map(fcb));
            t.push(LayerSpec {
                kind: LayerKind::Fc,
                in_dim: b.out.in_dim,
                out_dim: b.out.out_dim,
            });
        }
        t
    }

    /// Trainable blocks in declaration order: per FCB `W, b, γ, β`; per output `W, b`.
    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(8 + 10 * self.branches.len());
        for f in self.trunk.iter_mut() {
            f.trainable(&mut out);
        }
        for b in self.branches.iter_mut() {
            for f in b.hidden.iter_mut() {
                f.trainable(&mut out);
            }
            out.push(&mut b.out.weight);
            out.push(&mut b.out.bias);
        }
        out
    }

    /// Every stored block (trainable and running statistics) in declaration order:
    /// per FCB `W, b, γ, β, running_mean, running_var`; per output `W, b`.
    pub fn all_blocks(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for f in &self.trunk {
            out.extend(fcb_blocks(f));
        }
        for b in &self.branches {
            for f in &b.hidden {
                out.extend(fcb_blocks(f));
            }
            out.push(&b.out.weight);
            out.push(&b.out.bias);
        }
        out
    }

    pub fn all_blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for f in self.trunk.iter_mut() {
            out.extend(fcb_blocks_mut(f));
        }
        for b in self.branches.iter_mut() {
            for f in b.hidden.iter_mut() {
                out.extend(fcb_blocks_mut(f));
            }
            out.push(&mut b.out.weight);
            out.push(&mut b.out.bias);
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        // Running mean and variance are the last two of each FCB's six blocks.
        let fcb = |f: &Fcb| fcb_blocks(f)[..4].iter().map(|b| b.len()).sum::<usize>();
        let trunk: usize = self.trunk.iter().map(fcb).sum();
        let branches: usize = self
            .branches
            .iter()
            .map(|b| b.hidden.iter().map(fcb).sum::<usize>() + b.out.weight.len() + b.out.bias.len())
            .sum();
        trunk + branches
    }

    /// Moves batch-norm running statistics toward the batch statistics in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let b = cache.batch;
        for (f, c) in self.trunk.iter_mut().zip(&cache.trunk) {
            f.update_running_stats(c, b);
        }
        for (br, cs) in self.branches.iter_mut().zip(&cache.branches) {
            for (f, c) in br.hidden.iter_mut().zip(cs) {
                f.update_running_stats(c, b);
            }
        }
        self.touch();
    }
}

fn fcb_blocks(f: &Fcb) -> [&Vec<f64>; 6] {
    [
        &f.dense.weight,
        &f.dense.bias,
        &f.bn.gamma,
        &f.bn.beta,
        &f.bn.running_mean,
        &f.bn.running_var,
    ]
}

fn fcb_blocks_mut(f: &mut Fcb) -> [&mut Vec<f64>; 6] {
    [
        &mut f.dense.weight,
        &mut f.dense.bias,
        &mut f.bn.gamma,
        &mut f.bn.beta,
        &mut f.bn.running_mean,
        &mut f.bn.running_var,
    ]
}

/// Runs the network on a `B×n` batch in the model's current mode.
pub fn forward(params: &ModelParams, batch: &Matrix) -> Result<ForwardCache> {
    forward_in_mode(params, batch, params.mode)
}

/// Like [`forward`] but with an explicit batch-norm mode.
pub fn forward_in_mode(params: &ModelParams, batch: &Matrix, mode: Mode) -> Result<ForwardCache> {
    let b = batch.rows();
    if batch.cols() != params.input_dim {
        return Err(NnError::Shape(format!(
            "model expects {} inputs, batch has {}",
            params.input_dim,
            batch.cols()
        )));
    }
    if mode == Mode::Train && b < 2 {
        return Err(NnError::BatchTooSmall(b));
    }
    if !batch.is_finite() {
        return Err(NnError::NonFinite);
    }
    let t0 = params.trunk[0].forward(batch.data(), b, mode);
    let t1 = params.trunk[1].forward(&t0.out, b, mode);
    let c = params.num_classes();
    let mut logits = Matrix::zeros(b, c);
    let mut branch_caches = Vec::with_capacity(c);
    for (ci, br) in params.branches.iter().enumerate() {
        let h0 = br.hidden[0].forward(&t1.out, b, mode);
        let h1 = br.hidden[1].forward(&h0.out, b, mode);
        let o = br.out.forward(&h1.out, b);
        for (i, v) in o.iter().enumerate() {
            logits.set(i, ci, *v);
        }
        branch_caches.push([h0, h1]);
    }
    let outputs = apply_head(params.head(), &logits);
    Ok(ForwardCache {
        version: params.version,
        mode,
        batch: b,
        input: batch.data().to_vec(),
        trunk: vec![t0, t1],
        branches: branch_caches,
        logits,
        outputs,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn apply_head(head: Head, logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    match head {
        Head::SigmoidPerBranch => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        Head::SoftmaxOverBranches => {
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    out
}

/// Pulls an output-space gradient back through the head.
pub fn head_backward(head: Head, outputs: &Matrix, d_outputs: &Matrix) -> Matrix {
    let mut d = d_outputs.clone();
    match head {
        Head::SigmoidPerBranch => {
            for (g, o) in d.data_mut().iter_mut().zip(outputs.data()) {
                *g *= o * (1.0 - o);
            }
        }
        Head::SoftmaxOverBranches => {
            for i in 0..d.rows() {
                let p = outputs.row(i);
                let s: f64 = p.iter().zip(d_outputs.row(i)).map(|(a, b)| a * b).sum();
                for (g, pj) in d.row_mut(i).iter_mut().zip(p) {
                    *g = pj * (*g - s);
                }
            }
        }
    }
    d
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub param_grads: bool,
    pub input_grad: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            param_grads: true,
            input_grad: true,
        }
    }
}

/// Reverse-mode gradients for upstream `d_outputs` (gradient w.r.t. head outputs).
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_outputs: &Matrix) -> Result<Backward> {
    let d_logits = head_backward(params.head(), &cache.outputs, d_outputs);
    backward_logits(params, cache, &d_logits, BackwardOptions::default())
}

/// Reverse-mode gradients for upstream `d_logits` (gradient w.r.t. pre-head values).
pub fn backward_logits(
    params: &ModelParams,
    cache: &ForwardCache,
    d_logits: &Matrix,
    opts: BackwardOptions,
) -> Result<Backward> {
    if cache.version != params.version {
        return Err(NnError::StaleCache);
    }
    let (b, c, w) = (cache.batch, params.num_classes(), params.width);
    if d_logits.rows() != b || d_logits.cols() != c {
        return Err(NnError::Shape(format!(
            "upstream gradient is {}x{}, expected {b}x{c}",
            d_logits.rows(),
            d_logits.cols()
        )));
    }
    let mode = cache.mode;
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); 8 + 10 * c];
    let mut d_trunk = vec![0.0; b * w];
    let trunk_out = &cache.trunk[1].out;
    for (ci, br) in params.branches.iter().enumerate() {
        let dz: Vec<f64> = d_logits.column(ci);
        let hc = &cache.branches[ci];
        let (p, dh1) = br.out.backward(&hc[1].out, &dz, b, opts.param_grads, true);
        let base = 8 + 10 * ci;
        if let Some((dw, db)) = p {
            blocks[base + 8] = dw;
            blocks[base + 9] = db;
        }
        let dh1 = dh1.expect("requested");
        let (p1, dh0) = br.hidden[1].backward(&hc[0].out, &hc[1], &dh1, b, mode, opts.param_grads, true);
        if let Some(g) = p1 {
            for (k, v) in g.into_iter().enumerate() {
                blocks[base + 4 + k] = v;
            }
        }
        let dh0 = dh0.expect("requested");
        let (p0, dt) = br.hidden[0].backward(trunk_out, &hc[0], &dh0, b, mode, opts.param_grads, true);
        if let Some(g) = p0 {
            for (k, v) in g.into_iter().enumerate() {
                blocks[base + k] = v;
            }
        }
        for (a, v) in d_trunk.iter_mut().zip(dt.expect("requested")) {
            *a += v;
        }
    }
    let (p1, dt0) = params.trunk[1].backward(
        &cache.trunk[0].out,
        &cache.trunk[1],
        &d_trunk,
        b,
        mode,
        opts.param_grads,
        true,
    );
    if let Some(g) = p1 {
        for (k, v) in g.into_iter().enumerate() {
            blocks[4 + k] = v;
        }
    }
    let (p0, dx) = params.trunk[0].backward(
        &cache.input,
        &cache.trunk[0],
        &dt0.expect("requested"),
        b,
        mode,
        opts.param_grads,
        opts.input_grad,
    );
    if let Some(g) = p0 {
        for (k, v) in g.into_iter().enumerate() {
            blocks[k] = v;
        }
    }
    Ok(Backward {
        grads: opts.param_grads.then_some(Gradients { blocks }),
        d_input: dx.map(|d| Matrix::from_vec(b, params.input_dim, d).expect("input grad shape")),
    })
}

/// Targets for a loss: per-class distances or class labels.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Distances(&'a Matrix),
    Labels(&'a [usize]),
}

/// Scalar loss of head `outputs`: mean squared error over all `B·C`
/// entries, or mean negative log-probability of the labels.
pub fn loss(outputs: &Matrix, targets: Targets<'_>, kind: LossKind) -> Result<f64> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Distances(t)) => {
            if t.rows() != outputs.rows() || t.cols() != outputs.cols() {
                return Err(NnError::Shape("targets and outputs differ in shape".into()));
            }
            let n = outputs.data().len() as f64;
            Ok(outputs
                .data()
                .iter()
                .zip(t.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / n)
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            check_labels(labels, outputs)?;
            let s: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| -outputs.get(i, y).max(f64::MIN_POSITIVE).ln())
                .sum();
            Ok(s / labels.len() as f64)
        }
        _ => Err(NnError::Shape("loss kind does not match target type".into())),
    }
}

fn check_labels(labels: &[usize], outputs: &Matrix) -> Result<()> {
    if labels.len() != outputs.rows() {
        return Err(NnError::Shape("label count differs from batch size".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= outputs.cols()) {
        return Err(NnError::InvalidLabel {
            label: bad,
            num_classes: outputs.cols(),
        });
    }
    Ok(())
}

/// Loss value and its gradient w.r.t. the logits in `cache`.
///
/// Cross-entropy is evaluated from logits through log-sum-exp, so the
/// gradient is `(p − onehot)/B` without dividing by small probabilities.
pub fn loss_and_logit_grad(
    cache: &ForwardCache,
    targets: Targets<'_>,
    kind: LossKind,
) -> Result<(f64, Matrix)> {
    let (b, c) = (cache.outputs.rows(), cache.outputs.cols());
    match (kind, targets) {
        (LossKind::Mse, Targets::Distances(t)) => {
            let value = loss(&cache.outputs, targets, kind)?;
            let scale = 2.0 / (b * c) as f64;
            let mut g = cache.outputs.clone();
            for (gv, tv) in g.data_mut().iter_mut().zip(t.data()) {
                let o = *gv;
                *gv = scale * (o - tv) * o * (1.0 - o);
            }
            Ok((value, g))
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            check_labels(labels, &cache.outputs)?;
            let mut value = 0.0;
            let mut g = cache.outputs.clone();
            for (i, &y) in labels.iter().enumerate() {
                let z = cache.logits.row(i);
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                value += lse - z[y];
                let row = g.row_mut(i);
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v /= b as f64);
            }
            Ok((value / b as f64, g))
        }
        _ => Err(NnError::Shape("loss kind does not match target type".into())),
    }
}

/// Eval-mode predictions in chunks of `chunk` rows, chunks evaluated in parallel.
pub fn predict(params: &ModelParams, inputs: &Matrix, chunk: usize) -> Result<Matrix> {
    let c = params.num_classes();
    let n = inputs.cols();
    if n != params.input_dim {
        return Err(NnError::Shape(format!(
            "model expects {} inputs, batch has {n}",
            params.input_dim
        )));
    }
    let parts: Vec<Vec<f64>> = inputs
        .data()
        .par_chunks(chunk.max(1) * n.max(1))
        .map(|rows| {
            let m = Matrix::from_vec(rows.len() / n.max(1), n, rows.to_vec()).expect("chunk shape");
            forward_in_mode(params, &m, Mode::Eval).map(|cache| cache.outputs.into_data())
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_vec(inputs.rows(), c, parts.concat()).expect("prediction shape"))
}

/// Inner maximization for adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustInner {
    pub eta: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl RobustInner {
    pub const DEFAULT_STEPS: usize = 40;

    /// 40 ascent steps of size `eta / 10`.
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            steps: Self::DEFAULT_STEPS,
            step_size: eta / 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_end_epoch: usize,
    pub decay_start_epoch: usize,
    pub decay_end_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub robust_inner: Option<RobustInner>,
}

impl TrainConfig {
    /// Knee schedule with warm-up to epoch 10 and linear decay over the last
    /// 30% of training (700..1000 for a 1000-epoch run).
    pub fn new(lr_max: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            lr_max,
            batch_size,
            epochs,
            warmup_end_epoch: 10.min(epochs),
            decay_start_epoch: (epochs * 7 / 10).max(10.min(epochs)),
            decay_end_epoch: epochs,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            width: DEFAULT_WIDTH,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            robust_inner: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(NnError::InvalidConfig(s));
        if !(self.lr_max > 0.0) || !self.lr_max.is_finite() {
            return bad(format!("lr_max must be positive, got {}", self.lr_max));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.warmup_end_epoch <= self.decay_start_epoch
            && self.decay_start_epoch <= self.decay_end_epoch
            && self.decay_end_epoch == self.epochs)
        {
            return bad(format!(
                "need warmup_end <= decay_start <= decay_end = epochs, got {} <= {} <= {} = {}",
                self.warmup_end_epoch, self.decay_start_epoch, self.decay_end_epoch, self.epochs
            ));
        }
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if let Some(r) = &self.robust_inner {
            if !(r.eta >= 0.0) || r.steps == 0 || !(r.step_size >= 0.0) {
                return bad("robust inner loop needs eta >= 0, steps >= 1, step_size >= 0".into());
            }
        }
        Ok(())
    }

    pub fn arch(&self, input_dim: usize, num_classes: usize) -> ArchConfig {
        ArchConfig {
            input_dim,
            num_classes,
            width: self.width,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

/// Knee schedule: linear warm-up from zero, flat plateau, linear decay to zero.
/// `epoch` may be fractional.
pub fn knee_lr(epoch: f64, cfg: &TrainConfig) -> f64 {
    let (w, ds, de) = (
        cfg.warmup_end_epoch as f64,
        cfg.decay_start_epoch as f64,
        cfg.decay_end_epoch as f64,
    );
    if epoch < w {
        cfg.lr_max * (epoch.max(0.0) / w)
    } else if epoch <= ds {
        cfg.lr_max
    } else if epoch < de {
        cfg.lr_max * ((de - epoch) / (de - ds))
    } else {
        0.0
    }
}

/// First and second moment estimates for every trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &mut ModelParams) -> Self {
        let shapes: Vec<usize> = params.trainable_mut().iter().map(|b| b.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(NnError::TrainingDiverged {
            epoch: 0,
            reason: "non-finite gradient".into(),
        });
    }
    let blocks = params.trainable_mut();
    if blocks.len() != grads.blocks.len() || blocks.len() != state.m.len() {
        return Err(NnError::Shape("gradient/optimizer block count mismatch".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in blocks
        .into_iter()
        .zip(&grads.blocks)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if g.len() != p.len() {
            return Err(NnError::Shape("gradient block length mismatch".into()));
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    params.touch();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Training data: inputs plus the targets matching the model kind.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub inputs: &'a Matrix,
    pub distances: Option<&'a Matrix>,
    pub labels: Option<&'a [usize]>,
    pub num_classes: usize,
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), m.cols(), data).expect("gathered shape")
}

/// Per-row L2 projected ascent on the batch cross-entropy, starting at zero
/// perturbation. Batch-norm runs in train mode without touching running stats.
fn robust_perturb(
    params: &ModelParams,
    x: &Matrix,
    labels: &[usize],
    inner: &RobustInner,
) -> Result<Matrix> {
    let mut adv = x.clone();
    if inner.eta == 0.0 || inner.step_size == 0.0 {
        return Ok(adv);
    }
    let n = x.cols();
    let opts = BackwardOptions {
        param_grads: false,
        input_grad: true,
    };
    for _ in 0..inner.steps {
        let cache = forward_in_mode(params, &adv, Mode::Train)?;
        let (_, dl) = loss_and_logit_grad(&cache, Targets::Labels(labels), LossKind::CrossEntropy)?;
        let g = backward_logits(params, &cache, &dl, opts)?
            .d_input
            .expect("requested input grad");
        for i in 0..x.rows() {
            let gi = g.row(i);
            let gn = crate::linalg::norm(gi);
            let x0 = x.row(i);
            let row = adv.row_mut(i);
            if gn > 0.0 && gn.is_finite() {
                for j in 0..n {
                    row[j] += inner.step_size * gi[j] / gn;
                }
            }
            let mut delta: Vec<f64> = row.iter().zip(x0).map(|(a, b)| a - b).collect();
            let dn = crate::linalg::norm(&delta);
            if dn > inner.eta {
                delta.iter_mut().for_each(|d| *d *= inner.eta / dn);
                for j in 0..n {
                    row[j] = x0[j] + delta[j];
                }
            }
        }
    }
    Ok(adv)
}

/// Mini-batch Adam training under the Knee schedule. The returned model is
/// in eval mode.
pub fn train(kind: ModelKind, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(kind, data, cfg, |_, _| {})
}

pub fn train_with_progress(
    kind: ModelKind,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_rows = data.inputs.rows();
    if n_rows < 2 {
        return Err(NnError::InvalidConfig("training set needs at least 2 rows".into()));
    }
    match kind.loss() {
        LossKind::Mse if data.distances.is_none() => {
            return Err(NnError::InvalidConfig("distance learner needs distance targets".into()))
        }
        LossKind::CrossEntropy if data.labels.is_none() => {
            return Err(NnError::InvalidConfig("classifier needs labels".into()))
        }
        _ => {}
    }
    if kind == ModelKind::Robust && cfg.robust_inner.is_none() {
        return Err(NnError::InvalidConfig("robust training needs an inner-loop config".into()));
    }
    let mut params = ModelParams::init(kind, cfg.arch(data.inputs.cols(), data.num_classes), cfg.seed);
    params.set_mode(Mode::Train);
    let mut adam = AdamState::new(&mut params);
    let batches_per_epoch = n_rows.div_ceil(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_rows).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, stream::BATCHES, epoch as u64));
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let mut x = gather_rows(data.inputs, idx);
            let labels: Option<Vec<usize>> = data.labels.map(|l| idx.iter().map(|&i| l[i]).collect());
            if let (ModelKind::Robust, Some(inner)) = (kind, cfg.robust_inner.as_ref()) {
                x = robust_perturb(&params, &x, labels.as_deref().expect("checked"), inner)?;
            }
            let cache = forward_in_mode(&params, &x, Mode::Train)?;
            let dist_t;
            let targets = match kind.loss() {
                LossKind::Mse => {
                    dist_t = gather_rows(data.distances.expect("checked"), idx);
                    Targets::Distances(&dist_t)
                }
                LossKind::CrossEntropy => Targets::Labels(labels.as_deref().expect("checked")),
            };
            let (value, dl) = loss_and_logit_grad(&cache, targets, kind.loss())?;
            if !value.is_finite() {
                return Err(NnError::TrainingDiverged {
                    epoch,
                    reason: format!("loss became {value}"),
                });
            }
            let grads = backward_logits(
                &params,
                &cache,
                &dl,
                BackwardOptions {
                    param_grads: true,
                    input_grad: false,
                },
            )?
            .grads
            .expect("requested");
            params.update_running_stats(&cache);
            let lr = knee_lr(epoch as f64 + bi as f64 / batches_per_epoch as f64, cfg);
            adam_step(&mut params, &grads, &mut adam, lr, cfg).map_err(|e| match e {
                NnError::TrainingDiverged { reason, .. } => NnError::TrainingDiverged { epoch, reason },
                other => other,
            })?;
            sum += value;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    params.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: ModelKind, n: usize, c: usize, seed: u64) -> ModelParams {
        let arch = ArchConfig {
            width: 8,
            ..ArchConfig::new(n, c)
        };
        let mut p = ModelParams::init(kind, arch, seed);
        // Non-trivial batch-norm affine and running stats.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        for f in p.trunk.iter_mut().chain(p.branches.iter_mut().flat_map(|b| b.hidden.iter_mut())) {
            for g in f.bn.gamma.iter_mut() {
                *g = rng.gen_range(0.5..1.5);
            }
            for b in f.bn.beta.iter_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
            for m in f.bn.running_mean.iter_mut() {
                *m = rng.gen_range(-0.2..0.2);
            }
            for v in f.bn.running_var.iter_mut() {
                *v = rng.gen_range(0.5..2.0);
            }
        }
        p
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn classifier_rows_sum_to_one() {
        let mut p = tiny(ModelKind::Standard, 3, 4, 1);
        let x = batch(6, 3, 2);
        for mode in [Mode::Train, Mode::Eval] {
            p.set_mode(mode);
            let out = forward(&p, &x).unwrap().outputs;
            for i in 0..6 {
                assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_head_in_open_unit_interval() {
        let p = tiny(ModelKind::DistanceLearner, 3, 2, 1);
        let out = forward(&p, &batch(10, 3, 3)).unwrap().outputs;
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_mode_is_row_independent() {
        let mut p = tiny(ModelKind::DistanceLearner, 4, 2, 5);
        p.set_mode(Mode::Eval);
        let x = batch(2, 4, 6);
        let both = forward(&p, &x).unwrap().outputs;
        for i in 0..2 {
            let single = Matrix::from_vec(1, 4, x.row(i).to_vec()).unwrap();
            let o = forward(&p, &single).unwrap().outputs;
            for c in 0..2 {
                assert!((o.get(0, c) - both.get(i, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let p = tiny(ModelKind::Standard, 2, 2, 1);
        assert_eq!(
            forward(&p, &batch(1, 2, 1)).unwrap_err(),
            NnError::BatchTooSmall(1)
        );
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let p = tiny(ModelKind::Standard, 3, 2, 9);
        let cache = forward(&p, &batch(32, 3, 10)).unwrap();
        let d = 8;
        for fc in &cache.trunk {
            for j in 0..d {
                let col: Vec<f64> = fc.xhat.chunks_exact(d).map(|r| r[j]).collect();
                let mean = col.iter().sum::<f64>() / 32.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
                assert!(mean.abs() < 1e-7);
                // eps keeps the variance just under one.
                let want = fc.batch_var[j] / (fc.batch_var[j] + 1e-5);
                assert!((var - want).abs() < 1e-6 && (var - 1.0).abs() < 1e-3 + 1e-5 / fc.batch_var[j]);
            }
        }
    }

    #[test]
    fn losses() {
        let o = Matrix::from_rows(&[[0.2, 0.7], [0.4, 0.1]]).unwrap();
        assert_eq!(loss(&o, Targets::Distances(&o), LossKind::Mse).unwrap(), 0.0);
        let u = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let ce = loss(&u, Targets::Labels(&[0, 1]), LossKind::CrossEntropy).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            loss(&u, Targets::Labels(&[0, 2]), LossKind::CrossEntropy),
            Err(NnError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn loss_matches_two_pass_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = Matrix::from_fn(7, 3, |_, _| rng.gen_range(0.01..0.99));
        let t = Matrix::from_fn(7, 3, |_, _| rng.gen_range(0.0..1.0));
        let mut acc = Vec::new();
        for i in 0..7 {
            for j in 0..3 {
                acc.push((o.get(i, j) - t.get(i, j)).powi(2));
            }
        }
        let two_pass = acc.iter().sum::<f64>() / acc.len() as f64;
        let got = loss(&o, Targets::Distances(&t), LossKind::Mse).unwrap();
        assert!((got - two_pass).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = tiny(ModelKind::DistanceLearner, 3, 2, 2);
        let cache = forward(&p, &batch(5, 3, 1)).unwrap();
        let b = backward(&p, &cache, &Matrix::zeros(5, 2)).unwrap();
        assert_eq!(b.grads.unwrap().max_abs(), 0.0);
        assert_eq!(b.d_input.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = tiny(ModelKind::Standard, 3, 2, 2);
        let cache = forward(&p, &batch(5, 3, 1)).unwrap();
        let grads = backward(&p, &cache, &Matrix::zeros(5, 2)).unwrap().grads.unwrap();
        let mut st = AdamState::new(&mut p);
        adam_step(&mut p, &grads, &mut st, 1e-3, &TrainConfig::new(1e-3, 4, 1, 0)).unwrap();
        assert_eq!(
            backward(&p, &cache, &Matrix::zeros(5, 2)).unwrap_err(),
            NnError::StaleCache
        );
    }

    #[test]
    fn softmax_ce_logit_gradient() {
        let p = tiny(ModelKind::Standard, 3, 3, 8);
        let x = batch(4, 3, 2);
        let labels = [0, 2, 1, 1];
        let cache = forward(&p, &x).unwrap();
        let (_, dl) = loss_and_logit_grad(&cache, Targets::Labels(&labels), LossKind::CrossEntropy).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                let onehot = if labels[i] == c { 1.0 } else { 0.0 };
                let want = (cache.outputs.get(i, c) - onehot) / 4.0;
                assert!((dl.get(i, c) - want).abs() < 1e-15);
            }
        }
        // Through the output-space path: dCE/dp = -1/(B p_y) at the label.
        let mut dout = Matrix::zeros(4, 3);
        for (i, &y) in labels.iter().enumerate() {
            dout.set(i, y, -1.0 / (4.0 * cache.outputs.get(i, y)));
        }
        let a = backward(&p, &cache, &dout).unwrap().d_input.unwrap();
        let b = backward_logits(&p, &cache, &dl, BackwardOptions::default())
            .unwrap()
            .d_input
            .unwrap();
        assert!(a.sub(&b).max_abs() < 1e-12);
    }

    #[test]
    fn knee_knots() {
        let cfg = TrainConfig::new(2e-3, 4, 1000, 0);
        assert_eq!(
            (cfg.warmup_end_epoch, cfg.decay_start_epoch, cfg.decay_end_epoch),
            (10, 700, 1000)
        );
        assert_eq!(knee_lr(0.0, &cfg), 0.0);
        assert_eq!(knee_lr(10.0, &cfg), 2e-3);
        assert_eq!(knee_lr(350.0, &cfg), 2e-3);
        assert_eq!(knee_lr(700.0, &cfg), 2e-3);
        assert!((knee_lr(850.0, &cfg) - 1e-3).abs() < 1e-18);
        assert_eq!(knee_lr(1000.0, &cfg), 0.0);
        assert!((knee_lr(5.0, &cfg) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn adam_first_steps() {
        let mut p = tiny(ModelKind::Standard, 2, 2, 3);
        let before = p.clone();
        let mut st = AdamState::new(&mut p);
        let shapes: Vec<usize> = p.trainable_mut().iter().map(|b| b.len()).collect();
        let zero = Gradients {
            blocks: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        };
        let cfg = TrainConfig::new(1e-3, 4, 1, 0);
        adam_step(&mut p, &zero, &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(p.trunk, before.trunk);
        assert_eq!(p.branches, before.branches);

        let mut p = before.clone();
        let mut st = AdamState::new(&mut p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Gradients {
            blocks: shapes
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        };
        adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        let mut p0 = before.clone();
        for ((new, old), gb) in p.trainable_mut().into_iter().zip(p0.trainable_mut()).zip(&g.blocks) {
            for ((a, b), gv) in new.iter().zip(old.iter()).zip(gb) {
                if *gv != 0.0 {
                    assert_eq!((a - b).signum(), -gv.signum());
                    // m̂ = g and √v̂ = |g| on the first step.
                    let expected = 1e-3 * gv.abs() / (gv.abs() + cfg.adam_eps);
                    assert!(((b - a).abs() - expected).abs() < 1e-12);
                }
            }
        }

        let bad = Gradients {
            blocks: shapes.iter().map(|&n| vec![f64::NAN; n]).collect(),
        };
        assert!(matches!(
            adam_step(&mut p, &bad, &mut st, 1e-3, &cfg),
            Err(NnError::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        // Two well separated clusters.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let c = i % 2;
            let off = if c == 0 { -0.5 } else { 0.5 };
            rows.push([off + rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]);
            labels.push(c);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let mut cfg = TrainConfig::new(1e-2, 16, 20, 3);
        cfg.width = 16;
        let data = TrainData {
            inputs: &x,
            distances: None,
            labels: Some(&labels),
            num_classes: 2,
        };
        let a = train(ModelKind::Standard, data, &cfg).unwrap();
        assert!(a.epoch_losses.last().unwrap() < &(a.epoch_losses[0] * 0.5));
        assert_eq!(a.params.mode, Mode::Eval);
        let b = train(ModelKind::Standard, data, &cfg).unwrap();
        assert_eq!(a.params.trunk, b.params.trunk);
        assert_eq!(a.params.branches, b.params.branches);
        assert_eq!(a.epoch_losses, b.epoch_losses);

        // η = 0 robust training follows the standard trajectory exactly.
        let mut rcfg = cfg.clone();
        rcfg.robust_inner = Some(RobustInner::new(0.0));
        let r = train(ModelKind::Robust, data, &rcfg).unwrap();
        assert_eq!(r.params.trunk, a.params.trunk);
        assert_eq!(r.params.branches, a.params.branches);
        assert!(train(ModelKind::Robust, data, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(1e-3, 8, 300, 0);
        assert!(c.validate().is_ok());
        assert_eq!((c.warmup_end_epoch, c.decay_start_epoch), (10, 210));
        c.decay_end_epoch = 299;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(1e-3, 1, 3, 0);
        assert!(c.validate().is_err());
        c.batch_size = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn layer_table_matches_architecture() {
        let p = ModelParams::init(ModelKind::DistanceLearner, ArchConfig::new(5, 3), 0);
        let t = p.layer_table();
        assert_eq!(t.len(), 2 + 3 * 3);
        assert_eq!(t[0], LayerSpec { kind: LayerKind::Fcb, in_dim: 5, out_dim: 512 });
        assert_eq!(t[1], LayerSpec { kind: LayerKind::Fcb, in_dim: 512, out_dim: 512 });
        assert_eq!(t[4], LayerSpec { kind: LayerKind::Fc, in_dim: 512, out_dim: 1 });
    }
}
