//! C ABI over mtl-core.
//!
//! Conventions: every fallible entry point returns [`MtlStatus`] and writes
//! results through out-pointers; `MTL_STATUS_OK` is 0. On failure a
//! thread-local message is set, readable via [`mtl_last_error_message`]. The
//! message is sticky: it describes the most recent failure on this thread,
//! not the most recent call. Handles (`MtlNet`, `MtlConfig`,
//! `MtlSuiteOutput`) are opaque; each has a `_free` that accepts NULL.
//! Panics never cross the boundary; they surface as `MTL_STATUS_PANIC`.
//!
//! The matching header is generated into `include/mtl_ffi.h` by the build
//! script (cbindgen).

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use libc::{c_char, c_int};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mtl_core::aggregation::{cagrad, pcgrad, FlatGrad};
use mtl_core::harness::{run_suite, ExperimentConfig, Overrides};
use mtl_core::net::{HydraNet, HydraSpec};
use mtl_core::{landscape, metrics, MtlError};

/// Status code returned by every fallible entry point; `Ok` is 0.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtlStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    /// UW-O weighting was handed a non-positive loss.
    NonPositiveLoss = 4,
    /// Configuration text was rejected.
    Config = 5,
    Io = 6,
    /// Config or JSON text failed to parse.
    Parse = 7,
    /// The requested quantity is undefined for these inputs (e.g. cosine
    /// similarity of a zero vector). No error message is set.
    Undefined = 8,
    /// A panic was caught at the boundary.
    Panic = 9,
}

/// Opaque network handle.
pub struct MtlNet {
    inner: HydraNet,
}

/// Opaque experiment-configuration handle.
pub struct MtlConfig {
    inner: ExperimentConfig,
}

/// Opaque listing of the files a suite run wrote.
pub struct MtlSuiteOutput {
    dir: CString,
    files: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn fail(err: MtlError) -> MtlStatus {
    let status = match &err {
        MtlError::ShapeMismatch { .. } => MtlStatus::ShapeMismatch,
        MtlError::InvalidInput(_) => MtlStatus::InvalidArgument,
        MtlError::NonPositiveLoss { .. } => MtlStatus::NonPositiveLoss,
        MtlError::Config(_) => MtlStatus::Config,
        MtlError::Io(_) => MtlStatus::Io,
        MtlError::Json(_) | MtlError::Parse { .. } => MtlStatus::Parse,
    };
    set_error(err.to_string());
    status
}

fn null_arg(name: &str) -> MtlStatus {
    set_error(format!("argument `{name}` is NULL"));
    MtlStatus::NullPointer
}

fn guarded<F: FnOnce() -> MtlStatus>(body: F) -> MtlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic caught at FFI boundary".into());
            MtlStatus::Panic
        }
    }
}

/// `from_raw_parts` with NULL rejected only when elements are expected.
unsafe fn in_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], MtlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_arg(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], MtlStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null_arg(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> MtlStatus {
    if p.is_null() {
        return null_arg(name);
    }
    ptr::write(p, value);
    MtlStatus::Ok
}

/// Copy a NUL-terminated string into a caller buffer of `cap` bytes.
unsafe fn copy_str(s: &CStr, buf: *mut c_char, cap: usize) -> MtlStatus {
    if buf.is_null() {
        return null_arg("buf");
    }
    let bytes = s.to_bytes_with_nul();
    if cap < bytes.len() {
        set_error(format!(
            "buffer of {cap} bytes too small; need {}",
            bytes.len()
        ));
        return MtlStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    MtlStatus::Ok
}

// ---------------------------------------------------------------------------
// version / errors
// ---------------------------------------------------------------------------

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Length in bytes (including the trailing NUL) of the last error message on
/// this thread; 0 when no error has occurred yet.
#[no_mangle]
pub extern "C" fn mtl_last_error_length() -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        if msg.as_bytes().is_empty() {
            0
        } else {
            msg.as_bytes_with_nul().len()
        }
    })
}

/// Copy the last error message on this thread into `buf` (NUL-terminated).
/// Returns the number of bytes copied excluding the NUL, or -1 if `buf` is
/// NULL or `cap` is too small.
#[no_mangle]
pub unsafe extern "C" fn mtl_last_error_message(buf: *mut c_char, cap: usize) -> c_int {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if buf.is_null() || cap < bytes.len() {
            return -1;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        (bytes.len() - 1) as c_int
    })
}

// ---------------------------------------------------------------------------
// toy landscape
// ---------------------------------------------------------------------------

/// Per-task losses at (x1, x2); `out` receives 2 values.
#[no_mangle]
pub unsafe extern "C" fn mtl_landscape_losses(x1: f64, x2: f64, out: *mut f64) -> MtlStatus {
    guarded(|| match out_slice(out, 2, "out") {
        Ok(buf) => {
            buf.copy_from_slice(&landscape::losses([x1, x2]));
            MtlStatus::Ok
        }
        Err(s) => s,
    })
}

/// Per-task gradients at (x1, x2); `out` receives 4 values, row-major by
/// task: [dL1/dx1, dL1/dx2, dL2/dx1, dL2/dx2].
#[no_mangle]
pub unsafe extern "C" fn mtl_landscape_grads(x1: f64, x2: f64, out: *mut f64) -> MtlStatus {
    guarded(|| match out_slice(out, 4, "out") {
        Ok(buf) => {
            let g = landscape::grads([x1, x2]);
            buf[..2].copy_from_slice(&g[0]);
            buf[2..].copy_from_slice(&g[1]);
            MtlStatus::Ok
        }
        Err(s) => s,
    })
}

/// Mean of the two task losses at (x1, x2).
#[no_mangle]
pub unsafe extern "C" fn mtl_landscape_avg_loss(x1: f64, x2: f64, out: *mut f64) -> MtlStatus {
    guarded(|| write_out(out, landscape::avg_loss([x1, x2]), "out"))
}

/// Euclidean distance from (x1, x2) to the global minimum.
#[no_mangle]
pub unsafe extern "C" fn mtl_landscape_dist_to_min(x1: f64, x2: f64, out: *mut f64) -> MtlStatus {
    guarded(|| write_out(out, landscape::dist_to_min([x1, x2]), "out"))
}

// ---------------------------------------------------------------------------
// similarity and headline metrics
// ---------------------------------------------------------------------------

unsafe fn similarity(
    g: *const f64,
    h: *const f64,
    len: usize,
    out: *mut f64,
    f: impl Fn(&[f64], &[f64]) -> mtl_core::Result<Option<f64>>,
) -> MtlStatus {
    let g = match in_slice(g, len, "g") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let h = match in_slice(h, len, "h") {
        Ok(v) => v,
        Err(s) => return s,
    };
    match f(g, h) {
        Ok(Some(v)) => write_out(out, v, "out"),
        Ok(None) => MtlStatus::Undefined,
        Err(e) => fail(e),
    }
}

/// Cosine similarity of two equal-length vectors. Returns
/// `MTL_STATUS_UNDEFINED` (without touching `out`) when either vector is
/// zero.
#[no_mangle]
pub unsafe extern "C" fn mtl_cos_similarity(
    g: *const f64,
    h: *const f64,
    len: usize,
    out: *mut f64,
) -> MtlStatus {
    guarded(|| similarity(g, h, len, out, |a, b| metrics::cos_similarity(a, b)))
}

/// Magnitude similarity 2|g||h| / (|g|^2 + |h|^2); `MTL_STATUS_UNDEFINED`
/// when both vectors are zero.
#[no_mangle]
pub unsafe extern "C" fn mtl_mag_similarity(
    g: *const f64,
    h: *const f64,
    len: usize,
    out: *mut f64,
) -> MtlStatus {
    guarded(|| similarity(g, h, len, out, |a, b| metrics::mag_similarity(a, b)))
}

/// Fraction of coordinates on which the two gradients disagree in sign.
#[no_mangle]
pub unsafe extern "C" fn mtl_conflict_ratio(
    g: *const f64,
    h: *const f64,
    len: usize,
    out: *mut f64,
) -> MtlStatus {
    guarded(
        || match (in_slice(g, len, "g"), in_slice(h, len, "h")) {
            (Ok(a), Ok(b)) => match metrics::conflict_ratio(a, b) {
                Ok(v) => write_out(out, v, "out"),
                Err(e) => fail(e),
            },
            (Err(s), _) | (_, Err(s)) => s,
        },
    )
}

/// Plain dot product of two equal-length vectors.
#[no_mangle]
pub unsafe extern "C" fn mtl_dot_product(
    g: *const f64,
    h: *const f64,
    len: usize,
    out: *mut f64,
) -> MtlStatus {
    guarded(
        || match (in_slice(g, len, "g"), in_slice(h, len, "h")) {
            (Ok(a), Ok(b)) => match metrics::dot_product(a, b) {
                Ok(v) => write_out(out, v, "out"),
                Err(e) => fail(e),
            },
            (Err(s), _) | (_, Err(s)) => s,
        },
    )
}

/// Average percentage drop across tasks relative to `baseline`;
/// `higher_better[t]` is nonzero when larger metric values are better for
/// task t. Negative means the method improves on the baseline.
#[no_mangle]
pub unsafe extern "C" fn mtl_delta_m(
    method: *const f64,
    baseline: *const f64,
    higher_better: *const u8,
    n_tasks: usize,
    out: *mut f64,
) -> MtlStatus {
    guarded(|| {
        let m = match in_slice(method, n_tasks, "method") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let b = match in_slice(baseline, n_tasks, "baseline") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let hb = match in_slice(higher_better, n_tasks, "higher_better") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let hb: Vec<bool> = hb.iter().map(|&v| v != 0).collect();
        match metrics::delta_m(m, b, &hb) {
            Ok(v) => write_out(out, v, "out"),
            Err(e) => fail(e),
        }
    })
}

/// Robustness gap: mean over corruption cells of the normalized MTL drop
/// minus the normalized STL drop, oriented so positive means the MTL model
/// degrades more.
#[no_mangle]
pub unsafe extern "C" fn mtl_delta_t(
    mtl_clean: f64,
    stl_clean: f64,
    mtl_corrupted: *const f64,
    stl_corrupted: *const f64,
    n_cells: usize,
    higher_better: u8,
    out: *mut f64,
) -> MtlStatus {
    guarded(|| {
        let mc = match in_slice(mtl_corrupted, n_cells, "mtl_corrupted") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let sc = match in_slice(stl_corrupted, n_cells, "stl_corrupted") {
            Ok(v) => v,
            Err(s) => return s,
        };
        match metrics::delta_t(mtl_clean, stl_clean, mc, sc, higher_better != 0) {
            Ok(v) => write_out(out, v, "out"),
            Err(e) => fail(e),
        }
    })
}

/// Indices of the Pareto-optimal rows of an `n_records` x `n_metrics`
/// row-major matrix. `out_indices` must hold `n_records` entries; the number
/// actually written goes to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mtl_pareto_front(
    records: *const f64,
    n_records: usize,
    n_metrics: usize,
    higher_better: *const u8,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> MtlStatus {
    guarded(|| {
        let flat = match in_slice(records, n_records * n_metrics, "records") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let hb = match in_slice(higher_better, n_metrics, "higher_better") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let hb: Vec<bool> = hb.iter().map(|&v| v != 0).collect();
        let rows: Vec<Vec<f64>> = flat.chunks(n_metrics.max(1)).map(<[f64]>::to_vec).collect();
        let front = match metrics::pareto_front(&rows, &hb) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let out = match out_slice(out_indices, n_records, "out_indices") {
            Ok(v) => v,
            Err(s) => return s,
        };
        out[..front.len()].copy_from_slice(&front);
        write_out(out_len, front.len(), "out_len")
    })
}

// ---------------------------------------------------------------------------
// gradient surgery
// ---------------------------------------------------------------------------

unsafe fn grads_from_rows(
    grads: *const f64,
    n_tasks: usize,
    len: usize,
) -> Result<Vec<FlatGrad>, MtlStatus> {
    let flat = in_slice(grads, n_tasks * len, "grads")?;
    let mut out = Vec::with_capacity(n_tasks);
    for (t, row) in flat.chunks(len.max(1)).enumerate() {
        out.push(FlatGrad::backbone(t, row.to_vec()).map_err(fail)?);
    }
    Ok(out)
}

/// PCGrad over `n_tasks` row-major gradients of length `len`; `out` receives
/// the summed surgered gradient. `seed` drives the projection order shuffle.
#[no_mangle]
pub unsafe extern "C" fn mtl_pcgrad(
    grads: *const f64,
    n_tasks: usize,
    len: usize,
    seed: u64,
    out: *mut f64,
) -> MtlStatus {
    guarded(|| {
        let g = match grads_from_rows(grads, n_tasks, len) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let merged = match pcgrad(&g, &mut rng) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        match out_slice(out, len, "out") {
            Ok(buf) => {
                buf.copy_from_slice(&merged.values);
                MtlStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// CAGrad direction for `n_tasks` row-major gradients. `out_direction`
/// receives `len` values; `out_weights` (length `n_tasks`), `out_objective`
/// and `out_fell_back` may each be NULL when not wanted.
#[no_mangle]
pub unsafe extern "C" fn mtl_cagrad(
    grads: *const f64,
    n_tasks: usize,
    len: usize,
    c: f64,
    out_direction: *mut f64,
    out_weights: *mut f64,
    out_objective: *mut f64,
    out_fell_back: *mut c_int,
) -> MtlStatus {
    guarded(|| {
        let g = match grads_from_rows(grads, n_tasks, len) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let result = match cagrad(&g, c) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        match out_slice(out_direction, len, "out_direction") {
            Ok(buf) => buf.copy_from_slice(&result.direction.values),
            Err(s) => return s,
        }
        if !out_weights.is_null() {
            slice::from_raw_parts_mut(out_weights, n_tasks).copy_from_slice(&result.weights);
        }
        if !out_objective.is_null() {
            ptr::write(out_objective, result.objective);
        }
        if !out_fell_back.is_null() {
            ptr::write(out_fell_back, c_int::from(result.fell_back_to_mean));
        }
        MtlStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// networks
// ---------------------------------------------------------------------------

/// Build a shared-backbone network. `backbone` lists layer widths starting
/// at the input dimension; `head_widths` concatenates every head's width
/// chain and `head_lens[t]` gives head t's chain length (each chain starts
/// at the backbone output width). Initialization is seeded uniform.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_new(
    backbone: *const usize,
    backbone_len: usize,
    head_widths: *const usize,
    head_widths_len: usize,
    head_lens: *const usize,
    n_heads: usize,
    slope: f64,
    seed: u64,
    out: *mut *mut MtlNet,
) -> MtlStatus {
    guarded(|| {
        let backbone = match in_slice(backbone, backbone_len, "backbone") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let widths = match in_slice(head_widths, head_widths_len, "head_widths") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let lens = match in_slice(head_lens, n_heads, "head_lens") {
            Ok(v) => v,
            Err(s) => return s,
        };
        if lens.iter().sum::<usize>() != widths.len() {
            set_error(format!(
                "head_lens sum to {} but {} head widths were passed",
                lens.iter().sum::<usize>(),
                widths.len()
            ));
            return MtlStatus::InvalidArgument;
        }
        let mut heads = Vec::with_capacity(n_heads);
        let mut offset = 0;
        for &l in lens {
            heads.push(widths[offset..offset + l].to_vec());
            offset += l;
        }
        let spec = HydraSpec {
            backbone: backbone.to_vec(),
            heads,
            slope,
        };
        match HydraNet::new(spec, seed) {
            Ok(net) => write_out(out, Box::into_raw(Box::new(MtlNet { inner: net })), "out"),
            Err(e) => fail(e),
        }
    })
}

/// Free a network handle; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_free(net: *mut MtlNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Total number of parameters.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_n_params(net: *const MtlNet, out: *mut usize) -> MtlStatus {
    guarded(|| match net.as_ref() {
        None => null_arg("net"),
        Some(n) => write_out(out, n.inner.n_params(), "out"),
    })
}

/// Number of task heads.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_n_tasks(net: *const MtlNet, out: *mut usize) -> MtlStatus {
    guarded(|| match net.as_ref() {
        None => null_arg("net"),
        Some(n) => write_out(out, n.inner.n_tasks(), "out"),
    })
}

/// Output width of `task`'s head.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_head_width(
    net: *const MtlNet,
    task: usize,
    out: *mut usize,
) -> MtlStatus {
    guarded(|| {
        let n = match net.as_ref() {
            None => return null_arg("net"),
            Some(n) => n,
        };
        match n.inner.spec().heads.get(task) {
            Some(chain) => write_out(out, *chain.last().unwrap(), "out"),
            None => {
                set_error(format!(
                    "task {task} out of range ({} heads)",
                    n.inner.n_tasks()
                ));
                MtlStatus::InvalidArgument
            }
        }
    })
}

/// Copy the flat parameter vector into `buf` (`len` must equal the value
/// from `mtl_net_n_params`).
#[no_mangle]
pub unsafe extern "C" fn mtl_net_get_params(
    net: *const MtlNet,
    buf: *mut f64,
    len: usize,
) -> MtlStatus {
    guarded(|| {
        let n = match net.as_ref() {
            None => return null_arg("net"),
            Some(n) => n,
        };
        if len != n.inner.n_params() {
            return fail(MtlError::shape(
                "mtl_net_get_params",
                format!("{} params", n.inner.n_params()),
                format!("{len}"),
            ));
        }
        match out_slice(buf, len, "buf") {
            Ok(out) => {
                out.copy_from_slice(n.inner.params());
                MtlStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Replace the flat parameter vector.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_set_params(
    net: *mut MtlNet,
    buf: *const f64,
    len: usize,
) -> MtlStatus {
    guarded(|| {
        let n = match net.as_mut() {
            None => return null_arg("net"),
            Some(n) => n,
        };
        let values = match in_slice(buf, len, "buf") {
            Ok(v) => v,
            Err(s) => return s,
        };
        match n.inner.set_params(values) {
            Ok(()) => MtlStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Forward `x` (length = input dimension) through the backbone and `task`'s
/// head; `out` must hold that head's output width.
#[no_mangle]
pub unsafe extern "C" fn mtl_net_predict(
    net: *const MtlNet,
    x: *const f64,
    x_len: usize,
    task: usize,
    out: *mut f64,
    out_len: usize,
) -> MtlStatus {
    guarded(|| {
        let n = match net.as_ref() {
            None => return null_arg("net"),
            Some(n) => n,
        };
        let x = match in_slice(x, x_len, "x") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let outputs = match n.inner.predict(x) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let tensor = match outputs.get(task) {
            Some(t) => t,
            None => {
                set_error(format!("task {task} out of range ({} heads)", outputs.len()));
                return MtlStatus::InvalidArgument;
            }
        };
        if out_len != tensor.data().len() {
            return fail(MtlError::shape(
                "mtl_net_predict",
                format!("{} outputs", tensor.data().len()),
                format!("{out_len}"),
            ));
        }
        match out_slice(out, out_len, "out") {
            Ok(buf) => {
                buf.copy_from_slice(tensor.data());
                MtlStatus::Ok
            }
            Err(s) => s,
        }
    })
}

// ---------------------------------------------------------------------------
// configs and suites
// ---------------------------------------------------------------------------

/// Parse flat `key = value` configuration text (as accepted by the mtl-lab
/// CLI) into a handle.
#[no_mangle]
pub unsafe extern "C" fn mtl_config_parse(
    text: *const c_char,
    out: *mut *mut MtlConfig,
) -> MtlStatus {
    guarded(|| {
        if text.is_null() {
            return null_arg("text");
        }
        let text = match CStr::from_ptr(text).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("config text is not valid UTF-8".into());
                return MtlStatus::InvalidArgument;
            }
        };
        match ExperimentConfig::parse(text, &Overrides::default()) {
            Ok(cfg) => write_out(out, Box::into_raw(Box::new(MtlConfig { inner: cfg })), "out"),
            Err(e) => fail(e),
        }
    })
}

/// Free a configuration handle; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtl_config_free(cfg: *mut MtlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// SHA-256 content hash of the effective configuration (64 hex chars; `cap`
/// must be at least 65).
#[no_mangle]
pub unsafe extern "C" fn mtl_config_hash(
    cfg: *const MtlConfig,
    buf: *mut c_char,
    cap: usize,
) -> MtlStatus {
    guarded(|| {
        let cfg = match cfg.as_ref() {
            None => return null_arg("cfg"),
            Some(c) => c,
        };
        let hash = CString::new(cfg.inner.content_hash()).unwrap();
        copy_str(&hash, buf, cap)
    })
}

/// Name of the suite this configuration selects ("landscape", "invariance",
/// "gradsim", "synth-mtl", or "ood").
#[no_mangle]
pub unsafe extern "C" fn mtl_config_suite_name(
    cfg: *const MtlConfig,
    buf: *mut c_char,
    cap: usize,
) -> MtlStatus {
    guarded(|| {
        let cfg = match cfg.as_ref() {
            None => return null_arg("cfg"),
            Some(c) => c,
        };
        let name = CString::new(cfg.inner.suite.name()).unwrap();
        copy_str(&name, buf, cap)
    })
}

/// Run the configured suite end to end, writing its CSV/JSON outputs to the
/// configured directory. On success `out` receives a listing handle.
#[no_mangle]
pub unsafe extern "C" fn mtl_run_suite(
    cfg: *const MtlConfig,
    out: *mut *mut MtlSuiteOutput,
) -> MtlStatus {
    guarded(|| {
        let cfg = match cfg.as_ref() {
            None => return null_arg("cfg"),
            Some(c) => c,
        };
        let result = match run_suite(&cfg.inner) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let dir = CString::new(result.out_dir.display().to_string()).unwrap_or_default();
        let files = result
            .files
            .iter()
            .map(|f| CString::new(f.as_str()).unwrap_or_default())
            .collect();
        write_out(
            out,
            Box::into_raw(Box::new(MtlSuiteOutput { dir, files })),
            "out",
        )
    })
}

/// Free a suite-output handle; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mtl_suite_output_free(output: *mut MtlSuiteOutput) {
    if !output.is_null() {
        drop(Box::from_raw(output));
    }
}

/// Directory the suite wrote into.
#[no_mangle]
pub unsafe extern "C" fn mtl_suite_output_dir(
    output: *const MtlSuiteOutput,
    buf: *mut c_char,
    cap: usize,
) -> MtlStatus {
    guarded(|| match output.as_ref() {
        None => null_arg("output"),
        Some(o) => copy_str(&o.dir, buf, cap),
    })
}

/// Number of files the suite wrote.
#[no_mangle]
pub unsafe extern "C" fn mtl_suite_output_n_files(
    output: *const MtlSuiteOutput,
    out: *mut usize,
) -> MtlStatus {
    guarded(|| match output.as_ref() {
        None => null_arg("output"),
        Some(o) => write_out(out, o.files.len(), "out"),
    })
}

/// Path (relative to the output directory) of file `index`.
#[no_mangle]
pub unsafe extern "C" fn mtl_suite_output_file(
    output: *const MtlSuiteOutput,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> MtlStatus {
    guarded(|| {
        let o = match output.as_ref() {
            None => return null_arg("output"),
            Some(o) => o,
        };
        match o.files.get(index) {
            Some(f) => copy_str(f, buf, cap),
            None => {
                set_error(format!(
                    "file index {index} out of range ({} files)",
                    o.files.len()
                ));
                MtlStatus::InvalidArgument
            }
        }
    })
}
