//! C ABI over `dmp-core`.
//!
//! Objects cross the boundary as opaque handles created by `dmp_*_new`,
//! `dmp_*_load` or `dmp_*_synth` and released with the matching `_free`.
//! Every fallible call returns a [`DmpStatus`]; on failure the message is
//! available from [`dmp_last_error`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dmp_core::attacks::bl_attack;
use dmp_core::data::{load_dataset, synth_purchase, Dataset, SynthParams};
use dmp_core::dmp::{distill_from_teacher, prediction_entropy, train_unprotected, DmpConfig};
use dmp_core::nncore::{architecture, evaluate, load_model, save_model, train, Mlp, TrainConfig};
use dmp_core::{Error, ErrorClass};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmpStatus {
    DmpOk = 0,
    /// A required pointer argument was null.
    DmpErrNull = 1,
    /// Bad arguments, shapes or file contents.
    DmpErrInvalid = 2,
    /// Training diverged or a numerical routine failed.
    DmpErrNumerical = 3,
    /// File system failure.
    DmpErrIo = 4,
    /// A bug inside the library; the handles involved should be freed.
    DmpErrPanic = 5,
}

/// Opaque model handle.
pub struct DmpModel {
    inner: Mlp,
}

/// Opaque labeled dataset handle.
pub struct DmpDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DmpStatus {
    match e {
        Error::Io(_) => DmpStatus::DmpErrIo,
        Error::Stage { source, .. } => status_of(source),
        _ => match e.class() {
            ErrorClass::Validation => DmpStatus::DmpErrInvalid,
            ErrorClass::Numerical => DmpStatus::DmpErrNumerical,
        },
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmpStatus::DmpOk,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DmpStatus::DmpErrNull
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DmpStatus::DmpErrPanic
        }
    }
}

unsafe fn opt_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Core(Error::InvalidInput("path is not valid UTF-8".into())))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dmp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates the Purchase-style synthetic corpus.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_synth(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    cluster_noise: f64,
    seed: u64,
    out: *mut *mut DmpDataset,
) -> DmpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = synth_purchase(&SynthParams {
            n_samples,
            n_features,
            n_classes,
            cluster_noise,
            seed,
        })?;
        *out = boxed(DmpDataset { inner });
        Ok(())
    })
}

/// Reads a dataset file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_load(path: *const c_char, out: *mut *mut DmpDataset) -> DmpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = load_dataset(path_arg(path)?)?;
        *out = boxed(DmpDataset { inner });
        Ok(())
    })
}

/// Rows `[start, start + len)` as a new dataset.
///
/// # Safety
/// `data` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_slice(
    data: *const DmpDataset,
    start: usize,
    len: usize,
    out: *mut *mut DmpDataset,
) -> DmpStatus {
    guard(|| {
        let d = &opt_ref(data, "data")?.inner;
        let out = out_ptr(out, "out")?;
        let end = start.checked_add(len).filter(|&e| e <= d.len()).ok_or_else(|| {
            Failure::Core(Error::InvalidInput(format!(
                "rows {start}..{start}+{len} out of range for {} rows",
                d.len()
            )))
        })?;
        let idx: Vec<usize> = (start..end).collect();
        *out = boxed(DmpDataset { inner: d.subset(&idx) });
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_len(data: *const DmpDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of features per row, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_n_features(data: *const DmpDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n_features())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmp_dataset_free(data: *mut DmpDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fresh model with ReLU hidden layers of the given widths.
///
/// # Safety
/// `hidden` must point to `n_hidden` values (or be null when `n_hidden` is
/// 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_new(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    n_classes: usize,
    seed: u64,
    out: *mut *mut DmpModel,
) -> DmpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let hidden = slice_arg(hidden, n_hidden, "hidden")?;
        let inner = Mlp::new(&architecture(input_dim, hidden, n_classes), seed)?;
        *out = boxed(DmpModel { inner });
        Ok(())
    })
}

/// Trains a copy of `model` with cross-entropy (Adam, batch 64) and returns
/// it as a new handle.
///
/// # Safety
/// `model` and `data` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_train(
    model: *const DmpModel,
    data: *const DmpDataset,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
    out: *mut *mut DmpModel,
) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        let d = &opt_ref(data, "data")?.inner;
        let out = out_ptr(out, "out")?;
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let inner = train(m, d, &cfg)?.model;
        *out = boxed(DmpModel { inner });
        Ok(())
    })
}

/// Runs selection and distillation on a trained teacher with default
/// settings apart from the reference size and teacher temperature. The
/// pool's labels are ignored.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_distill(
    teacher: *const DmpModel,
    d_tr: *const DmpDataset,
    pool: *const DmpDataset,
    d_test: *const DmpDataset,
    ref_size: usize,
    teacher_temperature: f64,
    out: *mut *mut DmpModel,
) -> DmpStatus {
    guard(|| {
        let t = &opt_ref(teacher, "teacher")?.inner;
        let d_tr = &opt_ref(d_tr, "d_tr")?.inner;
        let pool = &opt_ref(pool, "pool")?.inner;
        let d_test = &opt_ref(d_test, "d_test")?.inner;
        let out = out_ptr(out, "out")?;
        let cfg = DmpConfig {
            ref_size,
            teacher_temperature,
            student_temperature: teacher_temperature,
            ..DmpConfig::default()
        };
        cfg.validate()?;
        let res = distill_from_teacher(t.clone(), &t.layer_specs(), d_tr, &pool.unlabeled(), d_test, &cfg)?;
        *out = boxed(DmpModel { inner: res.protected });
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_load(path: *const c_char, out: *mut *mut DmpModel) -> DmpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = load_model(path_arg(path)?)?;
        *out = boxed(DmpModel { inner });
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_save(model: *const DmpModel, path: *const c_char) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        save_model(m, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_n_classes(model: *const DmpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_classes())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_free(model: *mut DmpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes `softmax(logits / temperature)` of one row into `probs`, which
/// must hold `n_probs >= n_classes` values.
///
/// # Safety
/// `x` must point to `n_features` values and `probs` to `n_probs`.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_predict(
    model: *const DmpModel,
    x: *const f64,
    n_features: usize,
    temperature: f64,
    probs: *mut f64,
    n_probs: usize,
) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        let x = slice_arg(x, n_features, "x")?;
        if probs.is_null() {
            return Err(Failure::Null("probs"));
        }
        if n_probs < m.n_classes() {
            return Err(Failure::Core(Error::InvalidInput(format!(
                "output buffer holds {n_probs} values, model has {} classes",
                m.n_classes()
            ))));
        }
        let row = dmp_core::nncore::softmax_t(&m.forward(x)?, temperature)?;
        slice::from_raw_parts_mut(probs, row.len()).copy_from_slice(&row);
        Ok(())
    })
}

/// Prediction entropy (nats) of one row at `temperature`.
///
/// # Safety
/// `x` must point to `n_features` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_entropy(
    model: *const DmpModel,
    x: *const f64,
    n_features: usize,
    temperature: f64,
    out: *mut f64,
) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        let x = slice_arg(x, n_features, "x")?;
        let out = out_ptr(out, "out")?;
        *out = prediction_entropy(m, x, temperature)?;
        Ok(())
    })
}

/// Argmax accuracy on a dataset.
///
/// # Safety
/// Handles must be live; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_model_accuracy(
    model: *const DmpModel,
    data: *const DmpDataset,
    accuracy: *mut f64,
) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        let d = &opt_ref(data, "data")?.inner;
        let acc = out_ptr(accuracy, "accuracy")?;
        *acc = evaluate(m, d, 1.0)?.accuracy;
        Ok(())
    })
}

/// Loss-threshold attack; writes the tuned and the 0-1 accuracy.
///
/// # Safety
/// Handles must be live; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_bl_attack(
    model: *const DmpModel,
    members: *const DmpDataset,
    nonmembers: *const DmpDataset,
    tuned_accuracy: *mut f64,
    zero_one_accuracy: *mut f64,
) -> DmpStatus {
    guard(|| {
        let m = &opt_ref(model, "model")?.inner;
        let mem = &opt_ref(members, "members")?.inner;
        let non = &opt_ref(nonmembers, "nonmembers")?.inner;
        let tuned = out_ptr(tuned_accuracy, "tuned_accuracy")?;
        let zo = out_ptr(zero_one_accuracy, "zero_one_accuracy")?;
        let r = bl_attack(m, mem, non)?;
        *tuned = r.tuned.accuracy;
        *zo = r.zero_one.accuracy;
        Ok(())
    })
}

/// Trains an unprotected model with the default teacher recipe and
/// returns it with its train accuracy.
///
/// # Safety
/// `data` must be live; `hidden` must point to `n_hidden` values; outputs
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmp_train_unprotected(
    data: *const DmpDataset,
    hidden: *const usize,
    n_hidden: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut DmpModel,
    train_accuracy: *mut f64,
) -> DmpStatus {
    guard(|| {
        let d = &opt_ref(data, "data")?.inner;
        let hidden = slice_arg(hidden, n_hidden, "hidden")?;
        let out = out_ptr(out, "out")?;
        let acc = out_ptr(train_accuracy, "train_accuracy")?;
        let cfg = TrainConfig {
            epochs,
            seed,
            ..DmpConfig::default().teacher_train
        };
        let up = train_unprotected(&architecture(d.n_features(), hidden, d.n_classes()), d, &cfg, None)?;
        *acc = up.a_train;
        *out = boxed(DmpModel { inner: up.model });
        Ok(())
    })
}
