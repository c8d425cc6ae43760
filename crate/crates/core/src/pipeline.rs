//! Stage runner: gen → augment → train → attack → eval, with a manifest.
//!
//! Each stage reads its upstream files from the workdir and records its
//! inputs and outputs (with SHA-256 hashes) in `manifest.json`. A stage whose
//! input fingerprint and outputs are unchanged is skipped unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{self, AttackConfig, LossSpec, SweepModel};
use crate::config::ExperimentConfig;
use crate::datagen::{self, DatasetKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{self, GridCsvOptions, MetricsRow, PlaneSpec, Rule};
use crate::io::{self, CheckpointMeta};
use crate::linalg::Matrix;
use crate::manifold::{self, AugmentConfig, TrainingSet};
use crate::nn::{self, ModelKind, ModelParams, RobustInner, TrainConfig, TrainData};
use crate::rng::{derive_seed, stream};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".mdl.lock";
pub const DATASET_FILE: &str = "dataset.bin";
pub const TRAINSET_FILE: &str = "trainset.bin";
pub const TESTSET_FILE: &str = "testset.bin";
pub const ROBUSTNESS_FILE: &str = "robustness.csv";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gen,
    Augment,
    Train,
    Attack,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Gen, Stage::Augment, Stage::Train, Stage::Attack, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Short model tag used in file names.
pub fn model_tag(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::DistanceLearner => "dl",
        ModelKind::Standard => "sc",
        ModelKind::Robust => "rc",
    }
}

pub fn model_file(kind: ModelKind) -> String {
    format!("model_{}.bin", model_tag(kind))
}

pub fn grid_file(kind: ModelKind, ext: &str) -> String {
    format!("grid_{}.{ext}", model_tag(kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExportFormat {
    #[default]
    Bin,
    /// Binary files plus CSV copies of datasets and training sets.
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub format: ExportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Per-model training time, train stage only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_seconds: BTreeMap<String, f64>,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::file(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Io(io::IoError::Metadata(e)))
    }

    fn save(&self, workdir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(io::IoError::Metadata(e)))?;
        io::write_atomic(&workdir.join(MANIFEST), text.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&io::read_file(path).map_err(|e| match e {
        io::IoError::Io(source) => Error::file(format!("reading {}", path.display()), source),
        other => Error::Io(other),
    })?))
}

/// Exclusive hold on a workdir; released on drop.
pub struct WorkdirLock {
    path: PathBuf,
}

fn pid_alive(pid: &str) -> bool {
    // Without /proc there is no cheap check; treat the holder as alive.
    let proc_root = Path::new("/proc");
    !proc_root.exists() || proc_root.join(pid.trim()).exists()
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self> {
        let path = workdir.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    use std::io::Write;
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    if !holder.trim().is_empty() && !pid_alive(&holder) {
                        log::warn!("removing stale lock left by process {}", holder.trim());
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    return Err(Error::Locked {
                        path: workdir.to_path_buf(),
                        holder: format!("pid {}", holder.trim()),
                    });
                }
                Err(e) => return Err(Error::file(format!("creating {}", path.display()), e)),
            }
        }
        Err(Error::Locked {
            path: workdir.to_path_buf(),
            holder: "unknown".into(),
        })
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Sets the global rayon pool size from `MDL_THREADS` if present.
pub fn init_threads_from_env() {
    if let Some(n) = std::env::var("MDL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 && rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialised; MDL_THREADS ignored");
        }
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    opts: &'a RunOptions,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config sections serialize")
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn need(&self, stage: Stage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::MissingDependency {
                stage: stage.name().into(),
                path: p,
            });
        }
        Ok(p)
    }

    fn load_dataset(&self, stage: Stage) -> Result<LabeledDataset> {
        let p = self.need(stage, DATASET_FILE)?;
        Ok(io::decode_dataset(&read(&p)?)?)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        io::write_atomic(&p, bytes)?;
        Ok(p)
    }

    /// Upstream files a stage reads.
    fn dependencies(&self, stage: Stage) -> Vec<String> {
        let models = || self.cfg.train.models.iter().map(|&k| model_file(k));
        match stage {
            Stage::Gen => vec![],
            Stage::Augment => vec![DATASET_FILE.into()],
            Stage::Train => vec![TRAINSET_FILE.into()],
            Stage::Attack => std::iter::once(DATASET_FILE.to_string()).chain(models()).collect(),
            Stage::Eval => [DATASET_FILE, TRAINSET_FILE, TESTSET_FILE]
                .iter()
                .map(|s| s.to_string())
                .chain(models())
                .collect(),
        }
    }

    /// Config slices a stage depends on.
    fn config_key(&self, stage: Stage) -> String {
        let c = self.cfg;
        match stage {
            Stage::Gen => json(&c.dataset),
            Stage::Augment => format!("{}|{}", json(&c.dataset), json(&c.augment)),
            Stage::Train => format!("{}|{:?}", json(&c.train), c.dataset.length_units),
            Stage::Attack => format!(
                "{}|{}|{:?}|{}",
                json(&c.attack),
                c.eval.tol,
                c.dataset.length_units,
                c.dataset.test_per_class
            ),
            Stage::Eval => format!("{}|{}", json(&c.eval), json(&c.dataset)),
        }
    }

    fn seed(&self, stage: Stage) -> u64 {
        let c = self.cfg;
        match stage {
            Stage::Gen => c.dataset.seed,
            Stage::Augment => c.augment.seed,
            Stage::Train => c.train.seed,
            Stage::Attack => c.attack.seed,
            Stage::Eval => c.dataset.seed,
        }
    }
}

fn read(p: &Path) -> Result<Vec<u8>> {
    io::read_file(p).map_err(|e| match e {
        io::IoError::Io(source) => Error::file(format!("reading {}", p.display()), source),
        other => Error::Io(other),
    })
}

fn augment_config(cfg: &ExperimentConfig, ds: &LabeledDataset) -> AugmentConfig {
    let a = &cfg.augment;
    AugmentConfig {
        max_tangent: cfg.length(ds, a.max_tangent),
        max_norm: cfg.length(ds, a.max_norm),
        high_distance: a.high_distance,
        k_neighbors: a.k_neighbors,
        augment_per_point: 1,
        chart_source: a.chart_source,
        symmetric_coeffs: a.symmetric_coeffs,
    }
}

/// Training configuration for one model kind with lengths in dataset units.
pub fn train_config(cfg: &ExperimentConfig, kind: ModelKind, ds: &LabeledDataset) -> TrainConfig {
    let t = &cfg.train;
    let s = t.for_kind(kind);
    TrainConfig {
        lr_max: s.lr,
        batch_size: s.batch_size,
        epochs: s.epochs,
        warmup_end_epoch: s.warmup_end,
        decay_start_epoch: s.decay_start,
        decay_end_epoch: s.epochs,
        beta1: t.adam_beta1,
        beta2: t.adam_beta2,
        adam_eps: t.adam_eps,
        seed: derive_seed(t.seed, stream::INIT, kind.code() as u64),
        width: t.width,
        bn_momentum: t.bn_momentum,
        bn_eps: t.bn_eps,
        robust_inner: (kind == ModelKind::Robust).then(|| RobustInner {
            eta: cfg.length(ds, t.robust_eta),
            steps: t.robust_steps,
            step_size: cfg.length(ds, t.robust_step_size),
        }),
    }
}

/// Decision rule for a model; distance learners on swiss rolls use the plain
/// nearest-manifold rule, elsewhere the tolerance rule.
pub fn rule_for(cfg: &ExperimentConfig, kind: ModelKind, ds: &LabeledDataset) -> Rule {
    match kind {
        ModelKind::DistanceLearner if ds.kind == DatasetKind::SwissRolls => Rule::MinDistance { tol: None },
        ModelKind::DistanceLearner => Rule::MinDistance {
            tol: Some(cfg.length(ds, cfg.eval.tol)),
        },
        _ => Rule::Argmax,
    }
}

/// Held-out on-manifold points of the generated dataset.
pub fn held_out(cfg: &ExperimentConfig, ds: &LabeledDataset) -> LabeledDataset {
    ds.split_per_class(cfg.dataset.train_per_class()).1
}

fn run_gen(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let d = &ctx.cfg.dataset;
    let ds = datagen::generate(d.kind, d.m, d.n, d.count_per_class, d.seed)?;
    let gap = ds.manifold_gap();
    let band = 2.0 * ctx.cfg.length(&ds, ctx.cfg.augment.max_norm);
    if gap <= band {
        log::warn!("class manifolds are {gap:.4} apart, not more than 2·max_norm = {band:.4}; bands will overlap");
    }
    log::info!(
        "generated {} points ({} per class), cube scale {:.4}",
        ds.len(),
        d.count_per_class,
        ds.embedding.cube_scale
    );
    let mut out = vec![ctx.write(DATASET_FILE, &io::encode_dataset(&ds)?)?];
    if ctx.opts.format == ExportFormat::Csv {
        let mut buf = Vec::new();
        io::write_points_csv(&ds.points, &ds.labels, None, &mut buf)?;
        out.push(ctx.write("dataset.csv", &buf)?);
    }
    Ok(out)
}

fn run_augment(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = ctx.cfg;
    let ds = ctx.load_dataset(Stage::Augment)?;
    let (train, test) = ds.split_per_class(cfg.dataset.train_per_class());
    let acfg = augment_config(cfg, &ds);
    let a = &cfg.augment;
    let trainset = manifold::build_training_set(&train, &acfg, a.n_on, a.n_off, a.seed)?;
    let test_seed = derive_seed(a.seed, stream::TEST_AUGMENT, 0);
    let testset = manifold::build_training_set(&test, &acfg, a.test_n_on, a.test_n_off, test_seed)?;
    log::info!("training set {} rows, test set {} rows", trainset.len(), testset.len());
    let mut out = vec![
        ctx.write(TRAINSET_FILE, &io::encode_training_set(&trainset, &ds)?)?,
        ctx.write(TESTSET_FILE, &io::encode_training_set(&testset, &ds)?)?,
    ];
    if ctx.opts.format == ExportFormat::Csv {
        for (name, ts) in [("trainset.csv", &trainset), ("testset.csv", &testset)] {
            let mut buf = Vec::new();
            io::write_points_csv(&ts.points, &ts.labels, Some(&ts.targets), &mut buf)?;
            out.push(ctx.write(name, &buf)?);
        }
    }
    Ok(out)
}

/// Rows a model kind trains on: everything for the distance learner,
/// on-manifold rows for the classifiers; optionally capped.
pub fn training_rows(cfg: &ExperimentConfig, kind: ModelKind, ts: &TrainingSet) -> TrainingSet {
    let rows = match kind {
        ModelKind::DistanceLearner => ts.clone(),
        _ => ts.on_manifold(),
    };
    match cfg.train.for_kind(kind).max_rows {
        Some(cap) if cap < rows.len() => rows.subset(&(0..cap).collect::<Vec<_>>()),
        _ => rows,
    }
}

/// Trains one model on `ts` and returns it with its checkpoint metadata.
pub fn train_model(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    ts: &TrainingSet,
    ds: &LabeledDataset,
) -> Result<(ModelParams, CheckpointMeta)> {
    let rows = training_rows(cfg, kind, ts);
    let tcfg = train_config(cfg, kind, ds);
    let data = TrainData {
        inputs: &rows.points,
        distances: Some(&rows.targets),
        labels: Some(&rows.labels),
        num_classes: ts.num_classes(),
    };
    let every = (tcfg.epochs / 20).max(1);
    let started = Instant::now();
    log::info!("training {} on {} rows for {} epochs", kind.name(), rows.len(), tcfg.epochs);
    let outcome = nn::train_with_progress(kind, data, &tcfg, |epoch, loss| {
        if (epoch + 1) % every == 0 || epoch == 0 {
            log::info!(
                "{} epoch {}/{}: loss {loss:.4e} ({:.0}s)",
                kind.name(),
                epoch + 1,
                tcfg.epochs,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    let meta = CheckpointMeta {
        bn_momentum: tcfg.bn_momentum,
        bn_eps: tcfg.bn_eps,
        train_config: Some(tcfg),
        epoch_losses: outcome.epoch_losses,
    };
    Ok((outcome.params, meta))
}

fn run_train(ctx: &Ctx, seconds: &mut BTreeMap<String, f64>) -> Result<Vec<PathBuf>> {
    let p = ctx.need(Stage::Train, TRAINSET_FILE)?;
    let (ts, ds) = io::decode_training_set(&read(&p)?)?;
    let mut out = Vec::new();
    for &kind in &ctx.cfg.train.models {
        let started = Instant::now();
        let (params, meta) = train_model(ctx.cfg, kind, &ts, &ds)?;
        seconds.insert(model_tag(kind).to_string(), started.elapsed().as_secs_f64());
        out.push(ctx.write(&model_file(kind), &io::encode_checkpoint(&params, &meta)?)?);
    }
    Ok(out)
}

pub fn load_model(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    Ok(io::decode_checkpoint(&read(path)?)?)
}

/// Evenly strided subset of `count` rows.
pub fn strided(ds: &LabeledDataset, count: usize) -> LabeledDataset {
    let len = ds.len();
    let count = count.min(len);
    let idx: Vec<usize> = (0..count).map(|i| i * len / count.max(1)).collect();
    ds.subset(&idx)
}

fn run_attack(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = ctx.cfg;
    let ds = ctx.load_dataset(Stage::Attack)?;
    let mut models = Vec::new();
    for &kind in &cfg.train.models {
        let p = ctx.need(Stage::Attack, &model_file(kind))?;
        models.push((kind, load_model(&p)?.0));
    }
    let pts = strided(&held_out(cfg, &ds), cfg.attack.test_points);
    let sweep: Vec<SweepModel> = models
        .iter()
        .map(|(kind, m)| SweepModel {
            name: kind.name().to_string(),
            model: m,
            rule: rule_for(cfg, *kind, &ds),
        })
        .collect();
    let epsilons: Vec<f64> = cfg.attack.epsilons.iter().map(|&e| cfg.length(&ds, e)).collect();
    let base = AttackConfig {
        epsilon: 0.0,
        steps: cfg.attack.steps,
        step_size: cfg.attack.step_size,
        loss_spec: LossSpec::XentAscent,
        random_start: cfg.attack.random_start,
        seed: cfg.attack.seed,
    };
    let mut report = attack::robustness_sweep(&sweep, &pts.points, &pts.labels, &epsilons, &base)?;
    // Report ε in the config's own units.
    let n_eps = cfg.attack.epsilons.len();
    for (i, row) in report.rows.iter_mut().enumerate() {
        row.epsilon = cfg.attack.epsilons[i % n_eps];
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    Ok(vec![ctx.write(ROBUSTNESS_FILE, &buf)?])
}

fn run_eval(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = ctx.cfg;
    let ds = ctx.load_dataset(Stage::Eval)?;
    let (trainset, _) = io::decode_training_set(&read(&ctx.need(Stage::Eval, TRAINSET_FILE)?)?)?;
    let (testset, _) = io::decode_training_set(&read(&ctx.need(Stage::Eval, TESTSET_FILE)?)?)?;
    let held = held_out(cfg, &ds);
    let spec = PlaneSpec::through_center(
        &ds,
        cfg.eval.slice_class,
        cfg.length(&ds, cfg.eval.slice_half_extent),
        cfg.eval.slice_resolution,
    );
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for &kind in &cfg.train.models {
        let (model, _) = load_model(&ctx.need(Stage::Eval, &model_file(kind))?)?;
        let rule = rule_for(cfg, kind, &ds);
        let (train_mse, test_mse) = if kind == ModelKind::DistanceLearner {
            (
                Some(eval::distance_test_loss(&model, &trainset.points, &trainset.targets)?),
                Some(eval::distance_test_loss(&model, &testset.points, &testset.targets)?),
            )
        } else {
            (None, None)
        };
        let clf_error = eval::classification_error(&model, &held.points, &held.labels, rule)?;
        log::info!("{}: test mse {:?}, classification error {clf_error}", kind.name(), test_mse);
        rows.push(MetricsRow {
            dataset: ds.kind.name().to_string(),
            m: ds.m,
            n: ds.n,
            model: kind.name().to_string(),
            train_mse,
            test_mse,
            test_count: if kind == ModelKind::DistanceLearner { testset.len() } else { held.len() },
            clf_error,
        });
        let mut grid = eval::build_slice_grid(&spec)?;
        let tol = match rule {
            Rule::MinDistance { tol } => tol,
            Rule::Argmax => None,
        };
        eval::evaluate_grid(&model, &mut grid, tol)?;
        let clip = cfg.eval.clip_above;
        let opts = GridCsvOptions {
            include_coords: cfg.eval.include_coords,
            clip_above: clip,
        };
        let mut buf = Vec::new();
        eval::write_grid_csv(&grid, opts, &mut buf)?;
        out.push(ctx.write(&grid_file(kind, "csv"), &buf)?);
        if cfg.eval.emit_ppm {
            let mut img = Vec::new();
            eval::write_grid_ppm(&grid, &mut img)?;
            out.push(ctx.write(&grid_file(kind, "ppm"), &img)?);
        }
    }
    let mut buf = Vec::new();
    eval::write_metrics_csv(&rows, &mut buf)?;
    out.push(ctx.write(METRICS_FILE, &buf)?);
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs `stages` in pipeline order against `cfg.workdir`.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage], opts: &RunOptions) -> Result<Vec<StageReport>> {
    let dir = cfg.workdir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::file(format!("creating {}", dir.display()), e))?;
    let _lock = WorkdirLock::acquire(&dir)?;
    let ctx = Ctx { cfg, dir, opts };
    let mut manifest = Manifest::load(&ctx.dir)?;
    let mut ordered: Vec<Stage> = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut reports = Vec::new();
    for stage in ordered {
        let deps = ctx.dependencies(stage);
        let mut inputs = BTreeMap::new();
        for d in &deps {
            let p = ctx.need(stage, d)?;
            inputs.insert(d.clone(), hash_file(&p)?);
        }
        let fingerprint = sha256_hex(format!("{}|{}", ctx.config_key(stage), json(&inputs)).as_bytes());
        if !opts.force {
            if let Some(rec) = manifest.stages.get(stage.name()) {
                let intact = rec.fingerprint == fingerprint
                    && rec
                        .outputs
                        .iter()
                        .all(|(f, h)| hash_file(&ctx.path(f)).map(|x| &x == h).unwrap_or(false));
                if intact {
                    log::info!("stage {} is up to date; skipping", stage.name());
                    reports.push(StageReport {
                        stage,
                        skipped: true,
                        outputs: rec.outputs.keys().map(|f| ctx.path(f)).collect(),
                    });
                    continue;
                }
            }
        }
        log::info!("running stage {}", stage.name());
        let started = Instant::now();
        let mut model_seconds = BTreeMap::new();
        let outputs = match stage {
            Stage::Gen => run_gen(&ctx)?,
            Stage::Augment => run_augment(&ctx)?,
            Stage::Train => run_train(&ctx, &mut model_seconds)?,
            Stage::Attack => run_attack(&ctx)?,
            Stage::Eval => run_eval(&ctx)?,
        };
        let mut out_hashes = BTreeMap::new();
        for p in &outputs {
            out_hashes.insert(file_name(p), hash_file(p)?);
        }
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                fingerprint,
                inputs,
                outputs: out_hashes,
                seed: ctx.seed(stage),
                wall_time_s: started.elapsed().as_secs_f64(),
                model_seconds,
                finished_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        );
        manifest.save(&ctx.dir)?;
        log::info!("stage {} done in {:.1}s", stage.name(), started.elapsed().as_secs_f64());
        reports.push(StageReport {
            stage,
            skipped: false,
            outputs,
        });
    }
    Ok(reports)
}

/// Loads the held-out band test set from a workdir.
pub fn load_testset(workdir: &Path) -> Result<(TrainingSet, LabeledDataset)> {
    Ok(io::decode_training_set(&read(&workdir.join(TESTSET_FILE))?)?)
}

/// Loads the generated dataset from a workdir.
pub fn load_dataset(workdir: &Path) -> Result<LabeledDataset> {
    Ok(io::decode_dataset(&read(&workdir.join(DATASET_FILE))?)?)
}

/// Convenience for callers holding a matrix of points to classify.
pub fn predict(model: &ModelParams, points: &Matrix) -> Result<Matrix> {
    Ok(nn::predict(model, points, eval::EVAL_CHUNK)?)
}
