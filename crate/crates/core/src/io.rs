//! Binary containers for datasets, training sets and checkpoints, plus CSV export.
//!
//! All integers and floats are little-endian. Every container ends its fixed
//! part with a `u32`-length-prefixed UTF-8 JSON metadata block.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DatasetKind, EmbeddingRecord, LabeledDataset, ManifoldDescriptor};
use crate::linalg::Matrix;
use crate::manifold::TrainingSet;
use crate::nn::{ArchConfig, LayerKind, LayerSpec, Mode, ModelKind, ModelParams, TrainConfig};

pub const DATASET_MAGIC: &[u8; 4] = b"MDLD";
pub const MODEL_MAGIC: &[u8; 4] = b"MDLM";
pub const DATASET_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("size fits in u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.reserve(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_json<T: Serialize>(buf: &mut Vec<u8>, meta: &T) -> Result<()> {
    let text = serde_json::to_vec(meta)?;
    put_u32(buf, text.len());
    buf.extend_from_slice(&text);
    Ok(())
}

/// Cursor over an in-memory file.
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| IoError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| IoError::Corrupt("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u32()?;
        Ok(serde_json::from_slice(self.take(len)?)?)
    }

    fn magic(&mut self, expected: &'static [u8; 4]) -> Result<()> {
        if self.take(4)? != expected {
            return Err(IoError::BadMagic {
                expected: std::str::from_utf8(expected).unwrap(),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(IoError::Corrupt(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    kind: DatasetKind,
    descriptors: Vec<ManifoldDescriptor>,
    embedding: EmbeddingRecord,
    seed: u64,
    canonical_params: Option<Matrix>,
    targets_present: bool,
}

/// A point set in the dataset container, optionally with training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dataset: LabeledDataset,
    /// Training targets, normal offsets and augmentation flags.
    pub training: Option<(Matrix, Vec<f64>, Vec<bool>)>,
}

fn encode_container(
    ds: &LabeledDataset,
    training: Option<(&Matrix, &[f64], &[bool])>,
) -> Result<Vec<u8>> {
    let n_rows = ds.len();
    let mut buf = Vec::with_capacity(64 + n_rows * (ds.n * 8 + 1));
    buf.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut buf, DATASET_VERSION as usize);
    put_u32(&mut buf, ds.m);
    put_u32(&mut buf, ds.n);
    put_u32(&mut buf, ds.num_classes);
    put_u32(&mut buf, n_rows);
    put_f64s(&mut buf, ds.points.data());
    buf.extend(ds.labels.iter().map(|&l| u8::try_from(l).expect("class index fits in u8")));
    let meta = DatasetMeta {
        kind: ds.kind,
        descriptors: ds.descriptors.clone(),
        embedding: ds.embedding.clone(),
        seed: ds.seed,
        canonical_params: ds.canonical_params.clone(),
        targets_present: training.is_some(),
    };
    put_json(&mut buf, &meta)?;
    // Training blocks trail the metadata: N×C targets, N offsets, N flags.
    if let Some((targets, delta, aug)) = training {
        put_f64s(&mut buf, targets.data());
        put_f64s(&mut buf, delta);
        buf.extend(aug.iter().map(|&a| a as u8));
    }
    Ok(buf)
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { data: bytes, pos: 0 };
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()? as u32;
    if version != DATASET_VERSION {
        return Err(IoError::Version(version));
    }
    let (m, n, c, rows) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let points = Matrix::from_vec(rows, n, r.f64s(rows * n)?)
        .map_err(|e| IoError::Corrupt(e.to_string()))?;
    let labels: Vec<usize> = r.take(rows)?.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(IoError::Corrupt(format!("label {bad} out of range for {c} classes")));
    }
    let meta: DatasetMeta = r.json()?;
    let training = if meta.targets_present {
        let targets = Matrix::from_vec(rows, c, r.f64s(rows * c)?).expect("sized above");
        let delta = r.f64s(rows)?;
        let aug = r.take(rows)?.iter().map(|&b| b != 0).collect();
        Some((targets, delta, aug))
    } else {
        None
    };
    r.finish()?;
    if meta.descriptors.len() != c || meta.embedding.ambient_dim() != n {
        return Err(IoError::Corrupt("metadata disagrees with header".into()));
    }
    Ok(Container {
        dataset: LabeledDataset {
            kind: meta.kind,
            points,
            labels,
            m,
            n,
            num_classes: c,
            descriptors: meta.descriptors,
            embedding: meta.embedding,
            seed: meta.seed,
            canonical_params: meta.canonical_params,
        },
        training,
    })
}

pub fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    encode_container(ds, None)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    Ok(decode_container(bytes)?.dataset)
}

/// Encodes a training set; the generating record comes from `source`.
pub fn encode_training_set(ts: &TrainingSet, source: &LabeledDataset) -> Result<Vec<u8>> {
    let ds = LabeledDataset {
        points: ts.points.clone(),
        labels: ts.labels.clone(),
        canonical_params: None,
        ..source.clone()
    };
    encode_container(&ds, Some((&ts.targets, &ts.delta_perp, &ts.augmented)))
}

pub fn decode_training_set(bytes: &[u8]) -> Result<(TrainingSet, LabeledDataset)> {
    let c = decode_container(bytes)?;
    let (targets, delta_perp, augmented) = c
        .training
        .ok_or_else(|| IoError::Corrupt("file carries no training targets".into()))?;
    let ts = TrainingSet {
        points: c.dataset.points.clone(),
        targets,
        labels: c.dataset.labels.clone(),
        delta_perp,
        augmented,
    };
    Ok((ts, c.dataset))
}

/// Extra information stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub train_config: Option<TrainConfig>,
    pub epoch_losses: Vec<f64>,
}

fn layer_code(k: LayerKind) -> u32 {
    match k {
        LayerKind::Fcb => 0,
        LayerKind::Fc => 1,
    }
}

pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut buf, MODEL_VERSION as usize);
    put_u32(&mut buf, params.kind.code() as usize);
    put_u32(&mut buf, params.input_dim);
    put_u32(&mut buf, params.num_classes());
    let table = params.layer_table();
    put_u32(&mut buf, table.len());
    for l in &table {
        put_u32(&mut buf, layer_code(l.kind) as usize);
        put_u32(&mut buf, l.in_dim);
        put_u32(&mut buf, l.out_dim);
    }
    for block in params.all_blocks() {
        put_f64s(&mut buf, block);
    }
    put_json(&mut buf, meta)?;
    Ok(buf)
}

/// Decodes a checkpoint; the model comes back in eval mode.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let mut r = Reader { data: bytes, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return Err(IoError::Version(version));
    }
    let kind = ModelKind::from_code(r.u32()? as u32)
        .ok_or_else(|| IoError::Corrupt("unknown model kind".into()))?;
    let (n, c) = (r.u32()?, r.u32()?);
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let kind = match r.u32()? {
            0 => LayerKind::Fcb,
            1 => LayerKind::Fc,
            k => return Err(IoError::Corrupt(format!("unknown layer code {k}"))),
        };
        table.push(LayerSpec {
            kind,
            in_dim: r.u32()?,
            out_dim: r.u32()?,
        });
    }
    let width = table
        .first()
        .map(|l| l.out_dim)
        .ok_or_else(|| IoError::Corrupt("empty layer table".into()))?;
    // Read raw blocks first; metadata (with batch-norm constants) follows them.
    let shell = ModelParams::init(
        kind,
        ArchConfig {
            width,
            ..ArchConfig::new(n, c)
        },
        0,
    );
    if shell.layer_table() != table {
        return Err(IoError::Corrupt("layer table does not match the fixed architecture".into()));
    }
    let sizes: Vec<usize> = shell.all_blocks().iter().map(|b| b.len()).collect();
    let mut blocks = Vec::with_capacity(sizes.len());
    for s in sizes {
        blocks.push(r.f64s(s)?);
    }
    let meta: CheckpointMeta = r.json()?;
    r.finish()?;
    let mut params = ModelParams::init(
        kind,
        ArchConfig {
            width,
            bn_momentum: meta.bn_momentum,
            bn_eps: meta.bn_eps,
            ..ArchConfig::new(n, c)
        },
        0,
    );
    for (dst, src) in params.all_blocks_mut().into_iter().zip(blocks) {
        *dst = src;
    }
    params.touch();
    params.set_mode(Mode::Eval);
    Ok((params, meta))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path)?;
    let mut v = Vec::new();
    f.read_to_end(&mut v)?;
    Ok(v)
}

/// `x_0..x_{n-1},label[,target_0..]` rows with a header.
pub fn write_points_csv<W: Write>(
    points: &Matrix,
    labels: &[usize],
    targets: Option<&Matrix>,
    mut w: W,
) -> Result<()> {
    let mut header: Vec<String> = (0..points.cols()).map(|k| format!("x_{k}")).collect();
    header.push("label".into());
    if let Some(t) = targets {
        header.extend((0..t.cols()).map(|k| format!("target_{k}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..points.rows() {
        let mut fields: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        fields.push(labels[i].to_string());
        if let Some(t) = targets {
            fields.extend(t.row(i).iter().map(|v| v.to_string()));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
