//! Central finite differences against the hand-written backward pass.

use mdl_core::linalg::Matrix;
use mdl_core::nn::{
    backward_logits, forward, loss, loss_and_logit_grad, ArchConfig, BackwardOptions, Mode,
    ModelKind, ModelParams, Targets,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// At most this fraction of entries may sit on a ReLU kink and be skipped.
pub const MAX_KINK_FRACTION: f64 = 0.01;
pub const TOL: f64 = 1e-4;

struct Case {
    params: ModelParams,
    x: Matrix,
    distances: Matrix,
    labels: Vec<usize>,
}

fn make_case(kind: ModelKind, seed: u64, mode: Mode) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let c = rng.gen_range(2..=3);
    let b = 5;
    let arch = ArchConfig {
        width: 8,
        ..ArchConfig::new(n, c)
    };
    let mut params = ModelParams::init(kind, arch, seed);
    for f in params
        .trunk
        .iter_mut()
        .chain(params.branches.iter_mut().flat_map(|br| br.hidden.iter_mut()))
    {
        f.bn.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
        f.bn.beta.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        f.bn.running_mean.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        f.bn.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
    }
    params.set_mode(mode);
    let x = Matrix::from_fn(b, n, |_, _| rng.gen_range(-1.0..1.0));
    let distances = Matrix::from_fn(b, c, |_, _| rng.gen_range(0.0..1.0));
    let labels = (0..b).map(|_| rng.gen_range(0..c)).collect();
    Case {
        params,
        x,
        distances,
        labels,
    }
}

fn targets(case: &Case) -> Targets<'_> {
    match case.params.kind {
        ModelKind::DistanceLearner => Targets::Distances(&case.distances),
        _ => Targets::Labels(&case.labels),
    }
}

fn scalar_loss(params: &ModelParams, x: &Matrix, case: &Case) -> f64 {
    let out = forward(params, x).unwrap().outputs;
    loss(&out, targets(case), params.kind.loss()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
}

impl Tally {
    /// `up`, `mid`, `down` are the loss at `+H`, `0`, `-H`. One-sided slopes
    /// that disagree by more than curvature allows mean a ReLU switched.
    fn record(&mut self, analytic: f64, up: f64, mid: f64, down: f64) {
        self.checked += 1;
        let right = (up - mid) / H;
        let left = (mid - down) / H;
        if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
            self.kinks += 1;
            return;
        }
        self.worst = self.worst.max(rel_err(analytic, (up - down) / (2.0 * H)));
    }
}

/// Worst relative error and kink count for one random instance.
pub fn check(kind: ModelKind, mode: Mode, seed: u64) -> Tally {
    let case = make_case(kind, seed, mode);
    let cache = forward(&case.params, &case.x).unwrap();
    let (value, d_logits) = loss_and_logit_grad(&cache, targets(&case), kind.loss()).unwrap();
    let direct = scalar_loss(&case.params, &case.x, &case);
    assert!((value - direct).abs() < 1e-10, "loss value mismatch {value} vs {direct}");
    let back = backward_logits(&case.params, &cache, &d_logits, BackwardOptions::default()).unwrap();
    let grads = back.grads.unwrap();
    let d_input = back.d_input.unwrap();

    let mut tally = Tally::default();
    let nblocks = grads.blocks.len();
    for bi in 0..nblocks {
        for k in 0..grads.blocks[bi].len() {
            let mut p = case.params.clone();
            p.trainable_mut()[bi][k] += H;
            p.touch();
            let up = scalar_loss(&p, &case.x, &case);
            p.trainable_mut()[bi][k] -= 2.0 * H;
            p.touch();
            let down = scalar_loss(&p, &case.x, &case);
            tally.record(grads.blocks[bi][k], up, direct, down);
        }
    }
    for i in 0..case.x.rows() {
        for j in 0..case.x.cols() {
            let mut x = case.x.clone();
            x.set(i, j, case.x.get(i, j) + H);
            let up = scalar_loss(&case.params, &x, &case);
            x.set(i, j, case.x.get(i, j) - H);
            let down = scalar_loss(&case.params, &x, &case);
            tally.record(d_input.get(i, j), up, direct, down);
        }
    }
    tally
}

impl Tally {
    pub fn passes(&self) -> bool {
        self.worst < TOL && (self.kinks as f64) <= MAX_KINK_FRACTION * self.checked as f64
    }
}

/// Cases used by both the unit test and the acceptance run: ten train-mode and
/// ten eval-mode instances per head.
pub fn cases() -> Vec<(ModelKind, Mode, u64)> {
    let mut v = Vec::new();
    for (kind, base) in [(ModelKind::DistanceLearner, 0), (ModelKind::Standard, 100)] {
        for seed in 0..20 {
            let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Eval };
            v.push((kind, mode, base + seed));
        }
    }
    v
}
