//! C ABI over `orderlab`.
//!
//! Every function returns an [`OlStatus`]; on failure a message is available
//! from [`ol_last_error_message`] on the same thread. Layers are opaque
//! [`OlLayer`] handles released with [`ol_layer_free`]. Matrices cross the
//! boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use orderlab::layer::{forward, load_checkpoint, save_checkpoint};
use orderlab::orderedness::orderedness_with_scope;
use orderlab::pruning::{dyn_topk_fraction, dyn_tril_fraction};
use orderlab::training::{run_clp, role};
use orderlab::{
    Error, Init, LayerParams, LayerShape, MassScope, Matrix, Progress, PruneSpec, SeededRng, Task,
    TrainConfig,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Capacity = 6,
    Panic = 7,
}

/// Which entries the orderedness denominator sums.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlMassScope {
    /// Neuron-to-neuron block only.
    Recurrent = 0,
    /// Every entry, input columns included.
    Full = 1,
}

impl From<OlMassScope> for MassScope {
    fn from(s: OlMassScope) -> Self {
        match s {
            OlMassScope::Recurrent => MassScope::Recurrent,
            OlMassScope::Full => MassScope::Full,
        }
    }
}

/// Summary of one training run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlRunSummary {
    /// NaN when the run diverged.
    pub final_loss: f64,
    pub o_pre: f64,
    /// NaN when the run diverged.
    pub o_post: f64,
    /// NaN when the run diverged.
    pub delta_o: f64,
    pub steps_run: usize,
    pub diverged: bool,
}

/// Opaque layer handle.
pub struct OlLayer {
    shape: LayerShape,
    params: LayerParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(OlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => OlStatus::Dimension,
            Error::Config(_) | Error::Contract(_) => OlStatus::InvalidArgument,
            Error::Capacity(_) => OlStatus::Capacity,
            Error::Parse(_) | Error::Json(_) => OlStatus::Parse,
            Error::Io { .. } => OlStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn layer_ref<'a>(p: *const OlLayer) -> Result<&'a OlLayer, Fail> {
    p.as_ref().ok_or_else(|| null("layer"))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(OlStatus::Dimension, format!("{what} holds {len} values, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed(out: *mut *mut OlLayer, layer: OlLayer) {
    unsafe { *out = Box::into_raw(Box::new(layer)) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if the last call
/// succeeded. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ol_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a layer with normally initialised weights and values, seeded as in
/// training runs. The handle must be released with `ol_layer_free`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_new(
    outputs: usize,
    hidden: usize,
    inputs: usize,
    iters: usize,
    bias: bool,
    seed: u64,
    out: *mut *mut OlLayer,
) -> OlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = LayerShape::new(outputs, hidden, inputs, iters)?;
        let params = LayerParams::init(
            &shape,
            Init::Normal,
            Init::Normal,
            bias,
            &mut SeededRng::derive(seed, role::WEIGHTS),
            &mut SeededRng::derive(seed, role::VALUES),
        )?;
        boxed(out, OlLayer { shape, params });
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `layer` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_free(layer: *mut OlLayer) {
    if !layer.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(layer))));
    }
}

/// Writes `{outputs, hidden, inputs, iters}` into `shape_out`.
///
/// # Safety
/// `layer` must be a live handle and `shape_out` must point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_shape(layer: *const OlLayer, shape_out: *mut usize) -> OlStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        if shape_out.is_null() {
            return Err(null("shape_out"));
        }
        let s = l.shape;
        let dst = std::slice::from_raw_parts_mut(shape_out, 4);
        dst.copy_from_slice(&[s.outputs, s.hidden, s.inputs, s.iters]);
        Ok(())
    })
}

/// Runs the layer on `batch` rows of `x` (row-major, `batch × inputs`) and
/// writes `batch × outputs` values to `out`.
///
/// # Safety
/// `x` must hold `batch × inputs` doubles and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_forward(
    layer: *const OlLayer,
    x: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> OlStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let xs = in_slice(x, batch * l.shape.inputs, "x")?;
        let dst = out_slice(out, out_len, batch * l.shape.outputs, "out")?;
        let x = Matrix::from_vec(batch, l.shape.inputs, xs.to_vec())?;
        let (y, _) = forward(&l.shape, &l.params, &x, false)?;
        dst.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Copies the effective (masked) weights, `(o+h) × (o+h+i)` row-major.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_weights(layer: *const OlLayer, out: *mut f64, len: usize) -> OlStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let w = l.params.effective_weights();
        out_slice(out, len, w.len(), "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Replaces the weights; the mask is reset to all ones.
///
/// # Safety
/// `layer` must be a live handle and `w` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_set_weights(layer: *mut OlLayer, w: *const f64, len: usize) -> OlStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| null("layer"))?;
        let (rows, cols) = (l.shape.state_size(), l.shape.fan_in());
        if len != rows * cols {
            return Err(Fail(OlStatus::Dimension, format!("expected {} weights, got {len}", rows * cols)));
        }
        let src = in_slice(w, len, "w")?;
        if src.iter().any(|v| !v.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        l.params.weights = Matrix::from_vec(rows, cols, src.to_vec())?;
        l.params.mask = Matrix::filled(rows, cols, 1.0);
        Ok(())
    })
}

/// Orderedness of the layer's effective weights. When `perm_out` is not NULL
/// the optimal hidden ordering is written there (`perm_len` ≥ hidden).
///
/// # Safety
/// `o_out` must be writable; `perm_out` must be NULL or hold `perm_len` entries.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_orderedness(
    layer: *const OlLayer,
    scope: OlMassScope,
    o_out: *mut f64,
    perm_out: *mut usize,
    perm_len: usize,
) -> OlStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        if o_out.is_null() {
            return Err(null("o_out"));
        }
        let r = orderedness_with_scope(&l.params.effective_weights(), &l.shape, scope.into())?;
        if !perm_out.is_null() {
            if perm_len < r.permutation.len() {
                return Err(Fail(
                    OlStatus::Dimension,
                    format!("perm_out holds {perm_len}, need {}", r.permutation.len()),
                ));
            }
            std::slice::from_raw_parts_mut(perm_out, r.permutation.len()).copy_from_slice(&r.permutation);
        }
        *o_out = r.orderedness;
        Ok(())
    })
}

/// Orderedness of a dense `(o+h) × (o+h+i)` row-major matrix.
///
/// # Safety
/// `w` must hold `(o+h)(o+h+i)` doubles and `o_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_orderedness_dense(
    w: *const f64,
    outputs: usize,
    hidden: usize,
    inputs: usize,
    scope: OlMassScope,
    o_out: *mut f64,
) -> OlStatus {
    guard(|| {
        if o_out.is_null() {
            return Err(null("o_out"));
        }
        let n = outputs + hidden;
        let data = in_slice(w, n * (n + inputs), "w")?;
        let m = Matrix::from_vec(n, n + inputs, data.to_vec())?;
        let shape = LayerShape { outputs, hidden, inputs, iters: 1 };
        *o_out = orderedness_with_scope(&m, &shape, scope.into())?.orderedness;
        Ok(())
    })
}

/// Loads a checkpoint written by `ol_layer_save_checkpoint` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_load_checkpoint(path: *const c_char, out: *mut *mut OlLayer) -> OlStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (shape, params) = load_checkpoint(&path)?;
        boxed(out, OlLayer { shape, params });
        Ok(())
    })
}

/// # Safety
/// `layer` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ol_layer_save_checkpoint(layer: *const OlLayer, path: *const c_char) -> OlStatus {
    guard(|| {
        let l = layer_ref(layer)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_checkpoint(&path, &l.shape, &l.params)?;
        Ok(())
    })
}

/// Kept fraction of dynamic top-k at progress `x ∈ [0, 1]`; NaN if `x` is out of range.
#[no_mangle]
pub extern "C" fn ol_dyn_topk_fraction(k: f64, x: f64) -> f64 {
    Progress::new(x).map_or(f64::NAN, |p| dyn_topk_fraction(k, p))
}

/// Damping factor of dynamic tril-damp at progress `x ∈ [0, 1]`; NaN if `x` is out of range.
#[no_mangle]
pub extern "C" fn ol_dyn_tril_fraction(f: f64, x: f64) -> f64 {
    Progress::new(x).map_or(f64::NAN, |p| dyn_tril_fraction(f, p))
}

/// Trains a layer with the task defaults, overriding the pruning spec (e.g.
/// `"dyntopk:0.5"`), the seed and, when nonzero, the step count. When
/// `layer_out` is not NULL it receives the trained layer.
///
/// # Safety
/// `task` and `prune` must be NUL-terminated strings; `summary` writable;
/// `layer_out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ol_train(
    task: *const c_char,
    prune: *const c_char,
    seed: u64,
    steps: usize,
    summary: *mut OlRunSummary,
    layer_out: *mut *mut OlLayer,
) -> OlStatus {
    guard(|| {
        let task: Task = str_arg(task, "task")?.parse()?;
        let prune: PruneSpec = str_arg(prune, "prune")?.parse()?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        let mut cfg = TrainConfig { prune, seed, ..TrainConfig::defaults(task) };
        if steps > 0 {
            cfg.steps = steps;
        }
        let (record, params) = run_clp(&cfg)?;
        *summary = OlRunSummary {
            final_loss: record.final_loss.unwrap_or(f64::NAN),
            o_pre: record.o_pre.orderedness,
            o_post: record.o_post.as_ref().map_or(f64::NAN, |o| o.orderedness),
            delta_o: record.delta_o.unwrap_or(f64::NAN),
            steps_run: record.losses.len(),
            diverged: record.diverged,
        };
        if !layer_out.is_null() {
            boxed(layer_out, OlLayer { shape: cfg.shape, params });
        }
        Ok(())
    })
}
