//! C ABI over `mdl_core`.
//!
//! Datasets and models are opaque handles created by `mdl_*_generate` /
//! `mdl_*_load` and released with the matching `_free`. Every fallible call
//! returns an [`MdlStatus`]; the message for the most recent failure on the
//! calling thread is available through [`mdl_last_error`].
//!
//! Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mdl_core::attack::{self, AttackConfig, AttackError, LossSpec};
use mdl_core::datagen::{self, DatasetKind, LabeledDataset};
use mdl_core::eval::{self, Decision, Rule};
use mdl_core::io;
use mdl_core::linalg::Matrix;
use mdl_core::nn::{ModelKind, ModelParams, NnError};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    Panic = 5,
}

/// Dataset family selector for [`mdl_dataset_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdlDatasetKind {
    SeparatedSpheres = 0,
    ConcentricSpheres = 1,
    SwissRolls = 2,
}

/// Model family reported by [`mdl_model_kind`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdlModelKind {
    DistanceLearner = 0,
    Standard = 1,
    Robust = 2,
}

/// Label written by [`mdl_model_classify`] for points outside every class band.
pub const MDL_OUT_OF_DOMAIN: i32 = -1;

/// Opaque labelled dataset.
pub struct MdlDataset {
    inner: LabeledDataset,
}

/// Opaque trained model, always in inference mode.
pub struct MdlModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl ToString) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string().into_bytes());
}

struct Failure(MdlStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(MdlStatus::NullPointer, format!("{what} is null"))
    }
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(MdlStatus::InvalidArgument, msg.into())
    }
}

impl From<datagen::DatagenError> for Failure {
    fn from(e: datagen::DatagenError) -> Self {
        Failure(MdlStatus::InvalidArgument, e.to_string())
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure(MdlStatus::Io, e.to_string())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        let status = match e {
            NnError::NonFinite | NnError::TrainingDiverged { .. } => MdlStatus::Numeric,
            _ => MdlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        let status = match e {
            AttackError::NonFiniteGradient { .. } | AttackError::Nn(NnError::NonFinite) => MdlStatus::Numeric,
            _ => MdlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MdlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MdlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure(MdlStatus::Io, format!("{}: {e}", path.display())))
}

fn input_matrix(model: &ModelParams, x: *const f64, rows: usize) -> Result<Matrix, Failure> {
    let n = model.input_dim;
    let data = unsafe { slice(x, rows * n, "points")? };
    Matrix::from_vec(rows, n, data.to_vec()).map_err(|e| Failure::invalid(e.to_string()))
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mdl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Samples `count_per_class` points from each of the two class manifolds.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_generate(
    kind: MdlDatasetKind,
    m: usize,
    n: usize,
    count_per_class: usize,
    seed: u64,
    out: *mut *mut MdlDataset,
) -> MdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let kind = match kind {
            MdlDatasetKind::SeparatedSpheres => DatasetKind::SeparatedSpheres,
            MdlDatasetKind::ConcentricSpheres => DatasetKind::ConcentricSpheres,
            MdlDatasetKind::SwissRolls => DatasetKind::SwissRolls,
        };
        let inner = datagen::generate(kind, m, n, count_per_class, seed)?;
        *out = Box::into_raw(Box::new(MdlDataset { inner }));
        Ok(())
    })
}

/// Loads a dataset or training-set container written by the pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_load(path: *const c_char, out: *mut *mut MdlDataset) -> MdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let container = io::decode_container(&read(c_path(path)?)?)?;
        *out = Box::into_raw(Box::new(MdlDataset {
            inner: container.dataset,
        }));
        Ok(())
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_free(ds: *mut MdlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_len(ds: *const MdlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Ambient dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_dim(ds: *const MdlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n)
}

/// Copies points (`len × dim`, row-major) and labels into caller buffers.
/// Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `len·dim` doubles and `len` ints respectively.
#[no_mangle]
pub unsafe extern "C" fn mdl_dataset_copy(
    ds: *const MdlDataset,
    points: *mut f64,
    labels: *mut i32,
) -> MdlStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.inner;
        if !points.is_null() {
            slice_mut(points, ds.points.data().len(), "points")?.copy_from_slice(ds.points.data());
        }
        if !labels.is_null() {
            for (dst, &l) in slice_mut(labels, ds.len(), "labels")?.iter_mut().zip(&ds.labels) {
                *dst = l as i32;
            }
        }
        Ok(())
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_load(path: *const c_char, out: *mut *mut MdlModel) -> MdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let (inner, _) = io::decode_checkpoint(&read(c_path(path)?)?)?;
        *out = Box::into_raw(Box::new(MdlModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_free(model: *mut MdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_input_dim(model: *const MdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim)
}

/// Number of classes (output columns), or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_num_classes(model: *const MdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Writes the model family into `out`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_kind(model: *const MdlModel, out: *mut MdlModelKind) -> MdlStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        *out = match m.inner.kind {
            ModelKind::DistanceLearner => MdlModelKind::DistanceLearner,
            ModelKind::Standard => MdlModelKind::Standard,
            ModelKind::Robust => MdlModelKind::Robust,
        };
        Ok(())
    })
}

/// Evaluates `rows` points. Distance learners write predicted distances,
/// classifiers write class probabilities; `out` is `rows × num_classes`.
///
/// # Safety
/// `x` must hold `rows·input_dim` doubles and `out` `rows·num_classes`.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_predict(
    model: *const MdlModel,
    x: *const f64,
    rows: usize,
    out: *mut f64,
) -> MdlStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let input = input_matrix(m, x, rows)?;
        let pred = mdl_core::nn::predict(m, &input, eval::EVAL_CHUNK)?;
        slice_mut(out, pred.data().len(), "out")?.copy_from_slice(pred.data());
        Ok(())
    })
}

/// Assigns a label to each of `rows` points. For distance learners the
/// nearest class wins when its distance is at most `tol`, otherwise the
/// point gets [`MDL_OUT_OF_DOMAIN`]; pass a negative or NaN `tol` to
/// disable abstention. Classifiers use the most probable class.
///
/// # Safety
/// `x` must hold `rows·input_dim` doubles and `labels` `rows` ints.
#[no_mangle]
pub unsafe extern "C" fn mdl_model_classify(
    model: *const MdlModel,
    x: *const f64,
    rows: usize,
    tol: f64,
    labels: *mut i32,
) -> MdlStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let input = input_matrix(m, x, rows)?;
        let tol = (tol >= 0.0).then_some(tol);
        let rule = Rule::for_head(m.head(), tol);
        let pred = mdl_core::nn::predict(m, &input, eval::EVAL_CHUNK)?;
        let out = slice_mut(labels, rows, "labels")?;
        for (dst, d) in out.iter_mut().zip(eval::decisions(&pred, rule)) {
            *dst = match d {
                Decision::Class(c) => c as i32,
                Decision::OutOfDomain => MDL_OUT_OF_DOMAIN,
            };
        }
        Ok(())
    })
}

/// Projected gradient attack inside the L2 ball of radius `epsilon` around
/// each point. `step_size` is the per-step move length; a `seed` of 0 starts
/// at the clean point, any other value starts at a random point in the ball.
/// Adversarial points are written to `out` (`rows × input_dim`).
///
/// # Safety
/// `x` and `out` must hold `rows·input_dim` doubles, `labels` `rows` ints.
#[no_mangle]
pub unsafe extern "C" fn mdl_pgd_attack(
    model: *const MdlModel,
    x: *const f64,
    labels: *const i32,
    rows: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    seed: u64,
    out: *mut f64,
) -> MdlStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let input = input_matrix(m, x, rows)?;
        let classes = m.num_classes();
        let labels: Vec<usize> = slice(labels, rows, "labels")?
            .iter()
            .map(|&l| {
                usize::try_from(l)
                    .ok()
                    .filter(|&l| l < classes)
                    .ok_or_else(|| Failure::invalid(format!("label {l} outside 0..{classes}")))
            })
            .collect::<Result<_, _>>()?;
        let cfg = AttackConfig {
            epsilon,
            steps,
            step_size,
            loss_spec: LossSpec::for_kind(m.kind),
            random_start: seed != 0,
            seed,
        };
        let adv = attack::pgd_attack(m, &input, &labels, &cfg)?;
        slice_mut(out, adv.data().len(), "out")?.copy_from_slice(adv.data());
        Ok(())
    })
}
