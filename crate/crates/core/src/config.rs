//! Flat `section.key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is known in
//! advance, so typos are rejected rather than silently ignored. Values that
//! are lengths (`max_norm`, `tol`, `ε`, `η`, slice extents) are read in the
//! units named by `dataset.length_units`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DatasetKind, LabeledDataset};
use crate::manifold::ChartSource;
use crate::nn::ModelKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: cannot parse {text:?}; expected `key = value`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("duplicate key `{key}` on lines {first} and {second}")]
    DuplicateKey { key: String, first: usize, second: usize },
    #[error("line {line}: `{key}` expects {expected}, got {value:?}")]
    Type {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("line {line}: `{key}` {message}")]
    Range { line: usize, key: String, message: String },
    #[error("config is empty; required keys: {}", .0.join(", "))]
    Empty(Vec<String>),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("{0}")]
    Inconsistent(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Units of length-valued keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnits {
    /// The generating geometry, before the unit-cube scaling.
    Canonical,
    /// Dataset coordinates, after the unit-cube scaling.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub m: usize,
    pub n: usize,
    /// Points generated per class; the last `test_per_class` are held out.
    pub count_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub length_units: LengthUnits,
}

impl DatasetSection {
    pub fn train_per_class(&self) -> usize {
        self.count_per_class - self.test_per_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSection {
    pub max_norm: f64,
    pub max_tangent: f64,
    pub high_distance: f64,
    pub k_neighbors: usize,
    pub chart_source: ChartSource,
    pub symmetric_coeffs: bool,
    pub n_on: usize,
    pub n_off: usize,
    pub test_n_on: usize,
    pub test_n_off: usize,
    pub seed: u64,
}

/// Optimizer settings for one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_end: usize,
    pub decay_start: usize,
    /// Cap on training rows; `None` uses them all.
    pub max_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub models: Vec<ModelKind>,
    pub width: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dl: ModelTrainSection,
    pub sc: ModelTrainSection,
    pub rc: ModelTrainSection,
    pub robust_eta: f64,
    pub robust_steps: usize,
    pub robust_step_size: f64,
}

impl TrainSection {
    pub fn for_kind(&self, kind: ModelKind) -> &ModelTrainSection {
        match kind {
            ModelKind::DistanceLearner => &self.dl,
            ModelKind::Standard => &self.sc,
            ModelKind::Robust => &self.rc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub epsilons: Vec<f64>,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub seed: u64,
    /// Held-out on-manifold points attacked per sweep.
    pub test_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub tol: f64,
    pub slice_class: usize,
    pub slice_half_extent: f64,
    pub slice_resolution: [usize; 2],
    /// Raw predicted values above this are exported as `nan`.
    pub clip_above: Option<f64>,
    pub include_coords: bool,
    pub emit_ppm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub workdir: PathBuf,
}

impl ExperimentConfig {
    /// Converts a config length into dataset units.
    pub fn length(&self, dataset: &LabeledDataset, value: f64) -> f64 {
        match self.dataset.length_units {
            LengthUnits::Canonical => dataset.to_dataset_units(value),
            LengthUnits::Normalized => value,
        }
    }

    /// Replaces every stage seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.augment.seed = seed;
        self.train.seed = seed;
        self.attack.seed = seed;
    }
}

const PER_MODEL: [&str; 6] = ["lr", "batch_size", "epochs", "warmup_end", "decay_start", "max_rows"];

const REQUIRED: &[&str] = &[
    "dataset.kind",
    "dataset.m",
    "dataset.n",
    "dataset.count_per_class",
    "dataset.test_per_class",
    "augment.max_norm",
    "augment.n_on",
    "augment.n_off",
    "train.lr",
    "train.batch_size",
    "train.epochs",
];

const OPTIONAL: &[&str] = &[
    "dataset.seed",
    "dataset.length_units",
    "augment.max_tangent",
    "augment.high_distance",
    "augment.k_neighbors",
    "augment.chart_source",
    "augment.symmetric_coeffs",
    "augment.test_n_on",
    "augment.test_n_off",
    "augment.seed",
    "train.models",
    "train.width",
    "train.seed",
    "train.bn_momentum",
    "train.bn_eps",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.warmup_end",
    "train.decay_start",
    "train.max_rows",
    "train.robust_eta",
    "train.robust_steps",
    "train.robust_step_size",
    "attack.epsilons",
    "attack.steps",
    "attack.step_size",
    "attack.random_start",
    "attack.seed",
    "attack.test_points",
    "eval.tol",
    "eval.slice_class",
    "eval.slice_half_extent",
    "eval.slice_resolution",
    "eval.clip_above",
    "eval.include_coords",
    "eval.emit_ppm",
    "paths.workdir",
];

fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = REQUIRED.iter().chain(OPTIONAL).map(|s| s.to_string()).collect();
    for model in ["dl", "sc", "rc"] {
        for f in PER_MODEL {
            keys.insert(format!("train.{model}.{f}"));
        }
    }
    keys
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but untyped `key = value` entries.
struct Entries {
    map: BTreeMap<String, Entry>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let known = known_keys();
        let mut map: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if !known.contains(k) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: k.to_string(),
                });
            }
            if let Some(prev) = map.get(k) {
                return Err(ConfigError::DuplicateKey {
                    key: k.to_string(),
                    first: prev.line,
                    second: line,
                });
            }
            map.insert(
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    line,
                },
            );
        }
        if map.is_empty() {
            return Err(ConfigError::Empty(REQUIRED.iter().map(|s| s.to_string()).collect()));
        }
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|k| !map.contains_key(**k))
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::Missing(missing));
        }
        Ok(Self { map })
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.line)
    }

    fn typed<T>(
        &self,
        key: &str,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| ConfigError::Type {
                line: e.line,
                key: key.to_string(),
                expected,
                value: e.value.clone(),
            }),
        }
    }

    fn or_default<T: std::fmt::Debug>(&self, key: &str, v: Option<T>, default: impl FnOnce() -> T) -> T {
        v.unwrap_or_else(|| {
            let d = default();
            log::info!("config default: {key} = {d:?}");
            d
        })
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "a number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, "a non-negative integer", |s| s.replace('_', "").parse().ok())
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "a non-negative integer", |s| s.replace('_', "").parse().ok())
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.typed(key, "true or false", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn range(&self, key: &str, ok: bool, message: impl Into<String>) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Range {
                line: self.line(key),
                key: key.to_string(),
                message: message.into(),
            })
        }
    }
}

fn parse_models(s: &str) -> Option<Vec<ModelKind>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let k = match part {
            "dl" => ModelKind::DistanceLearner,
            "sc" => ModelKind::Standard,
            "rc" => ModelKind::Robust,
            _ => return None,
        };
        if !out.contains(&k) {
            out.push(k);
        }
    }
    (!out.is_empty()).then_some(out)
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

fn parse_resolution(s: &str) -> Option<[usize; 2]> {
    let (a, b) = s.split_once('x')?;
    Some([a.trim().parse().ok()?, b.trim().parse().ok()?])
}

pub const DEFAULT_EPSILONS: [f64; 5] = [0.02, 0.05, 0.08, 0.11, 0.14];

/// Parses and validates config text, applying and logging defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let e = Entries::parse(text)?;

    let kind = e
        .typed("dataset.kind", "separated_spheres, concentric_spheres or swiss_rolls", DatasetKind::parse)?
        .expect("required");
    let m = e.usize("dataset.m")?.expect("required");
    let n = e.usize("dataset.n")?.expect("required");
    e.range("dataset.m", m >= 1, "must be at least 1")?;
    e.range("dataset.n", n > m, format!("must exceed m = {m}"))?;
    e.range("dataset.n", n < u32::MAX as usize, "is too large")?;
    let count_per_class = e.usize("dataset.count_per_class")?.expect("required");
    let test_per_class = e.usize("dataset.test_per_class")?.expect("required");
    e.range(
        "dataset.test_per_class",
        test_per_class < count_per_class,
        format!("must be below dataset.count_per_class = {count_per_class}"),
    )?;
    let dataset = DatasetSection {
        kind,
        m,
        n,
        count_per_class,
        test_per_class,
        seed: e.or_default("dataset.seed", e.u64("dataset.seed")?, || 0),
        length_units: e.or_default(
            "dataset.length_units",
            e.typed("dataset.length_units", "canonical or normalized", |s| match s {
                "canonical" => Some(LengthUnits::Canonical),
                "normalized" => Some(LengthUnits::Normalized),
                _ => None,
            })?,
            || LengthUnits::Canonical,
        ),
    };

    let max_norm = e.f64("augment.max_norm")?.expect("required");
    e.range("augment.max_norm", max_norm > 0.0, "must be positive")?;
    let max_tangent = e.or_default("augment.max_tangent", e.f64("augment.max_tangent")?, || max_norm);
    e.range("augment.max_tangent", max_tangent >= 0.0, "must be non-negative")?;
    let high_distance = e.or_default("augment.high_distance", e.f64("augment.high_distance")?, || 1.0);
    e.range(
        "augment.high_distance",
        high_distance > 0.0,
        "must be positive",
    )?;
    let k_neighbors = e.or_default("augment.k_neighbors", e.usize("augment.k_neighbors")?, || {
        crate::manifold::AugmentConfig::default_k(m)
    });
    e.range("augment.k_neighbors", k_neighbors > m, format!("must be at least m+1 = {}", m + 1))?;
    let train_per_class = dataset.train_per_class();
    e.range(
        "augment.k_neighbors",
        k_neighbors < train_per_class,
        format!("must be below the per-class training population {train_per_class}"),
    )?;
    let chart_source = e.or_default(
        "augment.chart_source",
        e.typed("augment.chart_source", "inferred or analytic", |s| match s {
            "inferred" => Some(ChartSource::Inferred),
            "analytic" => Some(ChartSource::Analytic),
            _ => None,
        })?,
        || ChartSource::Inferred,
    );
    let n_on = e.usize("augment.n_on")?.expect("required");
    let n_off = e.usize("augment.n_off")?.expect("required");
    e.range(
        "augment.n_on",
        n_on <= train_per_class * kind.num_classes(),
        format!("exceeds the {} training points per class", train_per_class),
    )?;
    e.range("augment.n_on", n_on + n_off > 0, "and augment.n_off cannot both be zero")?;
    let test_pool = test_per_class * kind.num_classes();
    let test_n_on = e.or_default("augment.test_n_on", e.usize("augment.test_n_on")?, || test_pool);
    e.range(
        "augment.test_n_on",
        test_n_on <= test_pool,
        format!("exceeds the {test_pool} held-out points"),
    )?;
    let test_n_off = e.or_default("augment.test_n_off", e.usize("augment.test_n_off")?, || test_n_on);
    let augment = AugmentSection {
        max_norm,
        max_tangent,
        high_distance,
        k_neighbors,
        chart_source,
        symmetric_coeffs: e.or_default("augment.symmetric_coeffs", e.bool("augment.symmetric_coeffs")?, || false),
        n_on,
        n_off,
        test_n_on,
        test_n_off,
        seed: e.or_default("augment.seed", e.u64("augment.seed")?, || dataset.seed),
    };

    let lr = e.f64("train.lr")?.expect("required");
    e.range("train.lr", lr > 0.0, "must be positive")?;
    let batch_size = e.usize("train.batch_size")?.expect("required");
    e.range("train.batch_size", batch_size >= 2, "must be at least 2")?;
    let epochs = e.usize("train.epochs")?.expect("required");
    e.range("train.epochs", epochs >= 1, "must be at least 1")?;
    let base_warmup = e.usize("train.warmup_end")?;
    let base_decay = e.usize("train.decay_start")?;
    let base_rows = e.usize("train.max_rows")?;
    let per_model = |tag: &str| -> Result<ModelTrainSection> {
        let key = |f: &str| format!("train.{tag}.{f}");
        let lr = e.f64(&key("lr"))?.unwrap_or(lr);
        e.range(&key("lr"), lr > 0.0, "must be positive")?;
        let batch_size = e.usize(&key("batch_size"))?.unwrap_or(batch_size);
        e.range(&key("batch_size"), batch_size >= 2, "must be at least 2")?;
        let epochs = e.usize(&key("epochs"))?.unwrap_or(epochs);
        e.range(&key("epochs"), epochs >= 1, "must be at least 1")?;
        let warmup_end = e.usize(&key("warmup_end"))?.or(base_warmup).unwrap_or(10.min(epochs));
        let decay_start = e
            .usize(&key("decay_start"))?
            .or(base_decay)
            .unwrap_or_else(|| ((0.7 * epochs as f64).round() as usize).max(warmup_end));
        let wkey = if e.map.contains_key(&key("warmup_end")) { key("warmup_end") } else { "train.warmup_end".into() };
        let dkey = if e.map.contains_key(&key("decay_start")) { key("decay_start") } else { "train.decay_start".into() };
        e.range(&wkey, warmup_end <= decay_start, format!("({warmup_end}) must not exceed decay_start ({decay_start})"))?;
        e.range(&dkey, decay_start <= epochs, format!("({decay_start}) must not exceed epochs ({epochs})"))?;
        let max_rows = e.usize(&key("max_rows"))?.or(base_rows);
        if let Some(r) = max_rows {
            e.range(&key("max_rows"), r >= 2, "must be at least 2")?;
        }
        Ok(ModelTrainSection {
            lr,
            batch_size,
            epochs,
            warmup_end,
            decay_start,
            max_rows,
        })
    };
    let robust_eta = e.or_default("train.robust_eta", e.f64("train.robust_eta")?, || 5e-2);
    e.range("train.robust_eta", robust_eta >= 0.0, "must be non-negative")?;
    let robust_steps = e.or_default("train.robust_steps", e.usize("train.robust_steps")?, || 40);
    e.range("train.robust_steps", robust_steps >= 1, "must be at least 1")?;
    let robust_step_size = e.or_default("train.robust_step_size", e.f64("train.robust_step_size")?, || {
        robust_eta / 10.0
    });
    e.range("train.robust_step_size", robust_step_size >= 0.0, "must be non-negative")?;
    let width = e.or_default("train.width", e.usize("train.width")?, || crate::nn::DEFAULT_WIDTH);
    e.range("train.width", width >= 1, "must be at least 1")?;
    let train = TrainSection {
        models: e.or_default(
            "train.models",
            e.typed("train.models", "a comma list of dl, sc, rc", parse_models)?,
            || vec![ModelKind::DistanceLearner, ModelKind::Standard, ModelKind::Robust],
        ),
        width,
        seed: e.or_default("train.seed", e.u64("train.seed")?, || dataset.seed),
        bn_momentum: e.or_default("train.bn_momentum", e.f64("train.bn_momentum")?, || 0.1),
        bn_eps: e.or_default("train.bn_eps", e.f64("train.bn_eps")?, || 1e-5),
        adam_beta1: e.or_default("train.adam_beta1", e.f64("train.adam_beta1")?, || 0.9),
        adam_beta2: e.or_default("train.adam_beta2", e.f64("train.adam_beta2")?, || 0.999),
        adam_eps: e.or_default("train.adam_eps", e.f64("train.adam_eps")?, || 1e-8),
        dl: per_model("dl")?,
        sc: per_model("sc")?,
        rc: per_model("rc")?,
        robust_eta,
        robust_steps,
        robust_step_size,
    };
    e.range(
        "train.bn_momentum",
        (0.0..=1.0).contains(&train.bn_momentum),
        "must lie in [0, 1]",
    )?;
    e.range("train.bn_eps", train.bn_eps > 0.0, "must be positive")?;
    e.range("train.adam_beta1", (0.0..1.0).contains(&train.adam_beta1), "must lie in [0, 1)")?;
    e.range("train.adam_beta2", (0.0..1.0).contains(&train.adam_beta2), "must lie in [0, 1)")?;
    e.range("train.adam_eps", train.adam_eps > 0.0, "must be positive")?;

    let epsilons = e.or_default(
        "attack.epsilons",
        e.typed("attack.epsilons", "a comma list of numbers", parse_f64_list)?,
        || DEFAULT_EPSILONS.to_vec(),
    );
    e.range("attack.epsilons", epsilons.iter().all(|&v| v >= 0.0), "must all be non-negative")?;
    let attack = AttackSection {
        epsilons,
        steps: e.or_default("attack.steps", e.usize("attack.steps")?, || 100),
        step_size: e.or_default("attack.step_size", e.f64("attack.step_size")?, || 5e-3),
        random_start: e.or_default("attack.random_start", e.bool("attack.random_start")?, || false),
        seed: e.or_default("attack.seed", e.u64("attack.seed")?, || dataset.seed),
        test_points: e.or_default("attack.test_points", e.usize("attack.test_points")?, || 1000.min(test_pool)),
    };
    e.range("attack.steps", attack.steps >= 1, "must be at least 1")?;
    e.range("attack.step_size", attack.step_size > 0.0, "must be positive")?;
    e.range(
        "attack.test_points",
        attack.test_points <= test_pool,
        format!("exceeds the {test_pool} held-out points"),
    )?;

    let tol = e.or_default("eval.tol", e.f64("eval.tol")?, || max_norm);
    e.range("eval.tol", tol > 0.0, "must be positive")?;
    let slice_class = e.or_default("eval.slice_class", e.usize("eval.slice_class")?, || 0);
    e.range(
        "eval.slice_class",
        slice_class < kind.num_classes(),
        "is not a class index",
    )?;
    let slice_half_extent = e.or_default("eval.slice_half_extent", e.f64("eval.slice_half_extent")?, || 2.0);
    e.range("eval.slice_half_extent", slice_half_extent > 0.0, "must be positive")?;
    let slice_resolution = e.or_default(
        "eval.slice_resolution",
        e.typed("eval.slice_resolution", "WxH, e.g. 101x101", parse_resolution)?,
        || [101, 101],
    );
    e.range(
        "eval.slice_resolution",
        slice_resolution[0] >= 1 && slice_resolution[1] >= 1,
        "must be at least 1x1",
    )?;
    let eval = EvalSection {
        tol,
        slice_class,
        slice_half_extent,
        slice_resolution,
        clip_above: e.f64("eval.clip_above")?,
        include_coords: e.or_default("eval.include_coords", e.bool("eval.include_coords")?, || false),
        emit_ppm: e.or_default("eval.emit_ppm", e.bool("eval.emit_ppm")?, || false),
    };

    let workdir = e.or_default(
        "paths.workdir",
        e.typed("paths.workdir", "a path", |s| Some(PathBuf::from(s)))?,
        || PathBuf::from("work"),
    );

    if augment.high_distance < augment.max_norm {
        return Err(ConfigError::Inconsistent(format!(
            "augment.high_distance (line {}) must be at least augment.max_norm (line {})",
            e.line("augment.high_distance"),
            e.line("augment.max_norm")
        )));
    }

    Ok(ExperimentConfig {
        dataset,
        augment,
        train,
        attack,
        eval,
        workdir,
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Read {
        path: path.display().to_string(),
        message: err.to_string(),
    })?;
    parse_config_str(&text)
}

/// Built-in presets: full-size experiment rows plus reduced desk variants.
pub const PRESETS: &[(&str, &str)] = &[
    ("separated_m1_n2", include_str!("../presets/separated_m1_n2.conf")),
    ("separated_m1_n50", include_str!("../presets/separated_m1_n50.conf")),
    ("separated_m1_n500", include_str!("../presets/separated_m1_n500.conf")),
    ("separated_m2_n500", include_str!("../presets/separated_m2_n500.conf")),
    ("swissroll_m1_n2", include_str!("../presets/swissroll_m1_n2.conf")),
    ("swissroll_m1_n50", include_str!("../presets/swissroll_m1_n50.conf")),
    ("swissroll_m1_n500", include_str!("../presets/swissroll_m1_n500.conf")),
    ("concentric_m1_n2", include_str!("../presets/concentric_m1_n2.conf")),
    ("concentric_m1_n50", include_str!("../presets/concentric_m1_n50.conf")),
    ("concentric_m2_n50", include_str!("../presets/concentric_m2_n50.conf")),
    ("concentric_m25_n500", include_str!("../presets/concentric_m25_n500.conf")),
    ("concentric_m50_n500", include_str!("../presets/concentric_m50_n500.conf")),
    ("circles_desk", include_str!("../presets/circles_desk.conf")),
    ("concentric_m25_n100_desk", include_str!("../presets/concentric_m25_n100_desk.conf")),
    ("smoke", include_str!("../presets/smoke.conf")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    parse_config_str(preset_text(name)?)
}

/// Loads `preset:NAME` or a config file path.
pub fn load(source: &str) -> Result<ExperimentConfig> {
    match source.strip_prefix("preset:") {
        Some(name) => preset(name),
        None => parse_config(Path::new(source)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
dataset.kind = concentric_spheres
dataset.m = 1
dataset.n = 2
dataset.count_per_class = 300
dataset.test_per_class = 100
augment.max_norm = 0.1
augment.n_on = 200
augment.n_off = 200
train.lr = 1e-3
train.batch_size = 64
train.epochs = 5
";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.augment.max_tangent, 0.1);
        assert_eq!(c.augment.high_distance, 1.0);
        assert_eq!(c.augment.k_neighbors, 50);
        assert_eq!(c.train.models.len(), 3);
        assert_eq!(c.train.dl.warmup_end, 5);
        assert_eq!(c.train.dl.decay_start, 5);
        assert_eq!(c.eval.tol, 0.1);
        assert_eq!(c.attack.epsilons, DEFAULT_EPSILONS.to_vec());
        assert_eq!(c.attack.steps, 100);
        assert_eq!(c.attack.step_size, 5e-3);
        assert_eq!(c.train.robust_steps, 40);
        assert_eq!(c.dataset.length_units, LengthUnits::Canonical);
    }

    #[test]
    fn empty_file_lists_required_keys() {
        match parse_config_str("# nothing here\n\n") {
            Err(ConfigError::Empty(keys)) => {
                assert_eq!(keys.len(), REQUIRED.len());
                assert!(keys.contains(&"augment.max_norm".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let text = format!("{MINIMAL}train.lr = 2e-3\n");
        assert_eq!(
            parse_config_str(&text).unwrap_err(),
            ConfigError::DuplicateKey {
                key: "train.lr".into(),
                first: 9,
                second: 12
            }
        );
    }

    #[test]
    fn errors_name_the_line() {
        let unknown = format!("{MINIMAL}train.lrr = 1\n");
        assert!(matches!(parse_config_str(&unknown), Err(ConfigError::UnknownKey { line: 12, .. })));
        let typed = MINIMAL.replace("train.epochs = 5", "train.epochs = five");
        assert!(matches!(parse_config_str(&typed), Err(ConfigError::Type { line: 11, .. })));
        let range = MINIMAL.replace("augment.max_norm = 0.1", "augment.max_norm = -0.1");
        assert!(matches!(parse_config_str(&range), Err(ConfigError::Range { line: 6, .. })));
        let syntax = format!("{MINIMAL}just words\n");
        assert!(matches!(parse_config_str(&syntax), Err(ConfigError::Syntax { line: 12, .. })));
        let missing = MINIMAL.replace("train.lr = 1e-3\n", "");
        assert_eq!(
            parse_config_str(&missing).unwrap_err(),
            ConfigError::Missing(vec!["train.lr".into()])
        );
    }

    #[test]
    fn per_model_overrides() {
        let text = format!("{MINIMAL}train.sc.epochs = 3\ntrain.rc.lr = 5e-4\ntrain.models = dl, sc\n");
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.train.sc.epochs, 3);
        assert_eq!(c.train.dl.epochs, 5);
        assert_eq!(c.train.rc.lr, 5e-4);
        assert_eq!(c.train.models, vec![ModelKind::DistanceLearner, ModelKind::Standard]);
        let bad = format!("{MINIMAL}train.dl.decay_start = 9\n");
        assert!(matches!(parse_config_str(&bad), Err(ConfigError::Range { line: 12, .. })));
    }

    #[test]
    fn all_presets_parse() {
        for (name, text) in PRESETS {
            parse_config_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn full_size_presets() {
        let c = preset("concentric_m50_n500").unwrap();
        assert_eq!((c.dataset.m, c.dataset.n), (50, 500));
        assert_eq!(c.augment.max_norm, 0.14);
        assert_eq!(c.train.dl.lr, 1.5e-5);
        assert_eq!(c.train.dl.batch_size, 4096);
        assert_eq!((c.augment.n_on, c.augment.n_off), (500_000, 6_000_000));
        assert_eq!(c.train.dl.epochs, 1000);
        assert_eq!((c.train.dl.warmup_end, c.train.dl.decay_start), (10, 700));
        let s = preset("swissroll_m1_n2").unwrap();
        assert_eq!(s.augment.max_norm, 0.4);
        assert_eq!((s.augment.n_on, s.augment.n_off), (50_000, 50_000));
        assert_eq!(s.augment.chart_source, ChartSource::Analytic);
        let r = preset("concentric_m25_n500").unwrap();
        assert_eq!(r.train.robust_eta, 5e-2);
    }
}
