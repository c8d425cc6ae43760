//! White-box L2 PGD attacks and robustness sweeps.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Decision, Rule};
use crate::linalg::{self, Matrix};
use crate::nn::{self, BackwardOptions, Head, Mode, ModelKind, ModelParams, NnError};
use crate::rng::{rng_for, stream};

/// Rows attacked together in one forward/backward pass.
pub const ATTACK_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack failed: non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("{loss:?} objective needs a {needs} head")]
    HeadMismatch { loss: LossSpec, needs: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("robustness csv line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// Cross-entropy of the softmax prediction against the true label.
    XentAscent,
    /// Own-class predicted distance minus the smallest other-class one.
    DistanceMargin,
}

impl LossSpec {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::DistanceLearner => LossSpec::DistanceMargin,
            _ => LossSpec::XentAscent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L2 radius, dataset units.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub loss_spec: LossSpec,
    pub random_start: bool,
    /// Only used with `random_start`.
    pub seed: u64,
}

impl AttackConfig {
    pub const DEFAULT_STEPS: usize = 100;
    pub const DEFAULT_STEP_SIZE: f64 = 5e-3;

    pub fn new(epsilon: f64, loss_spec: LossSpec) -> Self {
        Self {
            epsilon,
            steps: Self::DEFAULT_STEPS,
            step_size: Self::DEFAULT_STEP_SIZE,
            loss_spec,
            random_start: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(AttackError::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(AttackError::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(AttackError::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// A differentiable scorer that can be attacked.
pub trait AttackTarget: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn head(&self) -> Head;
    /// Eval-mode logits and head outputs.
    fn logits_and_outputs(&self, x: &Matrix) -> Result<(Matrix, Matrix)>;
    /// Input gradient of `Σ_rows d_logits · logits`.
    fn input_grad(&self, x: &Matrix, d_logits: &Matrix) -> Result<Matrix>;
}

impl AttackTarget for ModelParams {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        ModelParams::num_classes(self)
    }

    fn head(&self) -> Head {
        ModelParams::head(self)
    }

    fn logits_and_outputs(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let cache = nn::forward_in_mode(self, x, Mode::Eval)?;
        Ok((cache.logits, cache.outputs))
    }

    fn input_grad(&self, x: &Matrix, d_logits: &Matrix) -> Result<Matrix> {
        let cache = nn::forward_in_mode(self, x, Mode::Eval)?;
        let opts = BackwardOptions {
            param_grads: false,
            input_grad: true,
        };
        let back = nn::backward_logits(self, &cache, d_logits, opts)?;
        Ok(back.d_input.expect("input gradient requested"))
    }
}

/// Affine scorer `z = W·x + b` (`W` is `C×n`) with a sigmoid or softmax head.
/// Its worst-case perturbations have closed forms, which makes it a test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub head: Head,
}

impl AttackTarget for LinearModel {
    fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    fn head(&self) -> Head {
        self.head
    }

    fn logits_and_outputs(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.input_dim() {
            return Err(AttackError::Shape("input width differs from model".into()));
        }
        let mut z = Matrix::zeros(x.rows(), self.num_classes());
        for i in 0..x.rows() {
            for c in 0..self.num_classes() {
                z.set(i, c, linalg::dot(x.row(i), self.weights.row(c)) + self.bias[c]);
            }
        }
        let out = head_outputs(self.head, &z);
        Ok((z, out))
    }

    fn input_grad(&self, x: &Matrix, d_logits: &Matrix) -> Result<Matrix> {
        let mut g = Matrix::zeros(x.rows(), self.input_dim());
        for i in 0..x.rows() {
            for c in 0..self.num_classes() {
                linalg::axpy(d_logits.get(i, c), self.weights.row(c), g.row_mut(i));
            }
        }
        Ok(g)
    }
}

fn head_outputs(head: Head, z: &Matrix) -> Matrix {
    let mut out = z.clone();
    match head {
        Head::SigmoidPerBranch => out.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        Head::SoftmaxOverBranches => {
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter_mut().for_each(|v| *v = (*v - mx).exp());
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    out
}

/// Per-row objective values and their gradient w.r.t. the logits.
fn objective_from_logits(
    head: Head,
    logits: &Matrix,
    outputs: &Matrix,
    labels: &[usize],
    spec: LossSpec,
) -> Result<(Vec<f64>, Matrix)> {
    let c = outputs.cols();
    if labels.len() != outputs.rows() {
        return Err(AttackError::Shape("label count differs from batch size".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(AttackError::Shape(format!("label {y} out of range for {c} classes")));
    }
    match (spec, head) {
        (LossSpec::DistanceMargin, Head::SigmoidPerBranch) => {
            if c < 2 {
                return Err(AttackError::Shape("distance margin needs two classes".into()));
            }
            let mut values = Vec::with_capacity(labels.len());
            let mut d_out = Matrix::zeros(outputs.rows(), c);
            for (i, &y) in labels.iter().enumerate() {
                let d = outputs.row(i);
                let other = (0..c)
                    .filter(|&k| k != y)
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)))
                    .expect("at least two classes");
                values.push(d[y] - d[other]);
                d_out.set(i, y, 1.0);
                d_out.set(i, other, -1.0);
            }
            Ok((values, nn::head_backward(head, outputs, &d_out)))
        }
        (LossSpec::XentAscent, Head::SoftmaxOverBranches) => {
            let mut values = Vec::with_capacity(labels.len());
            let mut g = outputs.clone();
            for (i, &y) in labels.iter().enumerate() {
                let z = logits.row(i);
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                values.push(lse - z[y]);
                g.row_mut(i)[y] -= 1.0;
            }
            Ok((values, g))
        }
        (LossSpec::DistanceMargin, _) => Err(AttackError::HeadMismatch {
            loss: spec,
            needs: "sigmoid distance",
        }),
        (LossSpec::XentAscent, _) => Err(AttackError::HeadMismatch {
            loss: spec,
            needs: "softmax",
        }),
    }
}

/// Per-row objective to maximize and its input gradient, in eval mode.
pub fn attack_objective<M: AttackTarget + ?Sized>(
    model: &M,
    x: &Matrix,
    labels: &[usize],
    spec: LossSpec,
) -> Result<(Vec<f64>, Matrix)> {
    let (logits, outputs) = model.logits_and_outputs(x)?;
    let (values, d_logits) = objective_from_logits(model.head(), &logits, &outputs, labels, spec)?;
    let grad = model.input_grad(x, &d_logits)?;
    Ok((values, grad))
}

/// Scales `delta` back onto the ball of radius `eps` if it left it.
fn project(delta: &mut [f64], eps: f64) {
    let nrm = linalg::norm(delta);
    if nrm > eps {
        let s = if nrm > 0.0 { eps / nrm } else { 0.0 };
        delta.iter_mut().for_each(|v| *v *= s);
    }
}

/// Uniform draw from the L2 ball of radius `eps` in `R^n`.
fn ball_sample<R: Rng>(n: usize, eps: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nrm = linalg::norm(&v);
        if nrm > 0.0 {
            let r = eps * rng.gen::<f64>().powf(1.0 / n as f64);
            v.iter_mut().for_each(|x| *x *= r / nrm);
            return v;
        }
    }
}

fn pgd_chunk<M: AttackTarget + ?Sized>(
    model: &M,
    x0: &Matrix,
    labels: &[usize],
    cfg: &AttackConfig,
    first_index: usize,
) -> Result<Matrix> {
    let (b, n) = (x0.rows(), x0.cols());
    let mut delta = Matrix::zeros(b, n);
    if cfg.random_start && cfg.epsilon > 0.0 {
        for i in 0..b {
            let mut rng = rng_for(cfg.seed, stream::ATTACK, (first_index + i) as u64);
            delta.row_mut(i).copy_from_slice(&ball_sample(n, cfg.epsilon, &mut rng));
        }
    }
    let current = |delta: &Matrix| {
        let mut x = x0.clone();
        for (a, d) in x.data_mut().iter_mut().zip(delta.data()) {
            *a += d;
        }
        x
    };
    let mut x = current(&delta);
    let mut best = x.clone();
    let mut best_val = vec![f64::NEG_INFINITY; b];
    for step in 0..=cfg.steps {
        let (vals, grad) = attack_objective(model, &x, labels, cfg.loss_spec)?;
        for i in 0..b {
            if vals[i] > best_val[i] {
                best_val[i] = vals[i];
                best.row_mut(i).copy_from_slice(x.row(i));
            }
        }
        if step == cfg.steps {
            break;
        }
        if !grad.is_finite() {
            return Err(AttackError::NonFiniteGradient { step });
        }
        for i in 0..b {
            let g = grad.row(i);
            let gn = linalg::norm(g);
            if gn == 0.0 {
                continue;
            }
            let d = delta.row_mut(i);
            linalg::axpy(cfg.step_size / gn, g, d);
            project(d, cfg.epsilon);
        }
        x = current(&delta);
    }
    // Re-project the kept iterate so rounding in x0 + δ cannot leave the ball.
    for i in 0..b {
        let mut d: Vec<f64> = best.row(i).iter().zip(x0.row(i)).map(|(a, b)| a - b).collect();
        if linalg::norm(&d) > cfg.epsilon {
            project(&mut d, cfg.epsilon * (1.0 - 1e-12));
            for ((o, a), dd) in best.row_mut(i).iter_mut().zip(x0.row(i)).zip(&d) {
                *o = a + dd;
            }
        }
    }
    Ok(best)
}

/// L2 PGD from each row of `x0`, keeping the best iterate seen per row.
///
/// Rows are attacked independently, in parallel chunks, so the result does
/// not depend on the thread count.
pub fn pgd_attack<M: AttackTarget + ?Sized>(
    model: &M,
    x0: &Matrix,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    if x0.cols() != model.input_dim() {
        return Err(AttackError::Shape(format!(
            "model expects {} inputs, got {}",
            model.input_dim(),
            x0.cols()
        )));
    }
    if labels.len() != x0.rows() {
        return Err(AttackError::Shape("label count differs from point count".into()));
    }
    if !x0.is_finite() {
        return Err(AttackError::Shape("non-finite input".into()));
    }
    if cfg.epsilon == 0.0 {
        return Ok(x0.clone());
    }
    let n = x0.cols();
    let starts: Vec<usize> = (0..x0.rows()).step_by(ATTACK_CHUNK).collect();
    let parts: Vec<Matrix> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + ATTACK_CHUNK).min(x0.rows());
            let chunk = Matrix::from_vec(e - s, n, x0.data()[s * n..e * n].to_vec()).expect("chunk");
            pgd_chunk(model, &chunk, &labels[s..e], cfg, s)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(x0.data().len());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Ok(Matrix::from_vec(x0.rows(), n, data).expect("attack output shape"))
}

/// One row of a robustness report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: String,
    pub epsilon: f64,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    /// Fraction of attacked points declared out of domain; distance learners only.
    pub ood_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

pub const ROBUSTNESS_HEADER: &str = "model,epsilon,clean_acc,adv_acc,ood_rate";

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{ROBUSTNESS_HEADER}")?;
        for r in &self.rows {
            let ood = r.ood_rate.map_or_else(String::new, |v| v.to_string());
            writeln!(
                w,
                "{},{},{},{},{}",
                r.model, r.epsilon, r.clean_accuracy, r.adversarial_accuracy, ood
            )?;
        }
        Ok(())
    }

    /// Reads the format written by [`RobustnessReport::write_csv`].
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == ROBUSTNESS_HEADER => {}
            _ => {
                return Err(AttackError::Parse {
                    line: 1,
                    message: format!("expected header `{ROBUSTNESS_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| AttackError::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            rows.push(RobustnessRow {
                model: f[0].to_string(),
                epsilon: num(f[1])?,
                clean_accuracy: num(f[2])?,
                adversarial_accuracy: num(f[3])?,
                ood_rate: if f[4].trim().is_empty() { None } else { Some(num(f[4])?) },
            });
        }
        Ok(Self { rows })
    }

    /// Rows for one model, in sweep order.
    pub fn for_model<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a RobustnessRow> + 'a {
        self.rows.iter().filter(move |r| r.model == model)
    }
}

/// A model to sweep with its display name and decision rule.
pub struct SweepModel<'a> {
    pub name: String,
    pub model: &'a ModelParams,
    pub rule: Rule,
}

fn decide_all(model: &ModelParams, x: &Matrix, rule: Rule) -> Result<Vec<Decision>> {
    let out = nn::predict(model, x, crate::eval::EVAL_CHUNK)?;
    Ok(crate::eval::decisions(&out, rule))
}

fn fraction(dec: &[Decision], pred: impl Fn(usize, Decision) -> bool) -> f64 {
    let hits = dec.iter().enumerate().filter(|(i, d)| pred(*i, **d)).count();
    hits as f64 / dec.len().max(1) as f64
}

/// Attacks every test point for each model and ε and reports accuracy on the
/// attacked points. `base` supplies steps, step size, random start and seed;
/// the objective follows the model kind.
///
/// A successful attack found at some ε is also feasible at every larger ε,
/// so it is carried forward and the reported accuracy never increases with ε.
pub fn robustness_sweep(
    models: &[SweepModel<'_>],
    points: &Matrix,
    labels: &[usize],
    epsilons: &[f64],
    base: &AttackConfig,
) -> Result<RobustnessReport> {
    let mut report = RobustnessReport::default();
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]).then(a.cmp(&b)));
    for sm in models {
        if sm.model.input_dim != points.cols() {
            return Err(AttackError::Shape(format!(
                "model {} expects {} inputs, test set has {}",
                sm.name,
                sm.model.input_dim,
                points.cols()
            )));
        }
        let clean_dec = decide_all(sm.model, points, sm.rule)?;
        let clean = fraction(&clean_dec, |i, d| d == Decision::Class(labels[i]));
        let is_dl = sm.model.kind == ModelKind::DistanceLearner;
        let mut broken: Vec<Option<Decision>> = vec![None; labels.len()];
        let mut rows: Vec<Option<RobustnessRow>> = vec![None; epsilons.len()];
        for &k in &order {
            let eps = epsilons[k];
            let cfg = AttackConfig {
                epsilon: eps,
                loss_spec: LossSpec::for_kind(sm.model.kind),
                ..base.clone()
            };
            let adv = pgd_attack(sm.model, points, labels, &cfg)?;
            let mut dec = decide_all(sm.model, &adv, sm.rule)?;
            for (i, d) in dec.iter_mut().enumerate() {
                match broken[i] {
                    Some(prev) => *d = prev,
                    None if *d != Decision::Class(labels[i]) => broken[i] = Some(*d),
                    None => {}
                }
            }
            let acc = fraction(&dec, |i, d| d == Decision::Class(labels[i]));
            let ood = fraction(&dec, |_, d| d == Decision::OutOfDomain);
            log::info!("{} eps={eps}: clean {clean:.4} adversarial {acc:.4}", sm.name);
            rows[k] = Some(RobustnessRow {
                model: sm.name.clone(),
                epsilon: eps,
                clean_accuracy: clean,
                adversarial_accuracy: acc,
                ood_rate: is_dl.then_some(ood),
            });
        }
        report.rows.extend(rows.into_iter().flatten());
    }
    Ok(report)
}
