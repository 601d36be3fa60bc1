//! C ABI over the `reltask` library.
//!
//! Objects cross the boundary as opaque handles created by `rt_*_new` or
//! `rt_*_from_*` functions and released by the matching `rt_*_free`.
//! Every fallible function returns an [`RtStatus`]; on failure the message
//! is kept per thread and can be copied out with [`rt_last_error`].
//! Tokens are `uint32_t` on the C side.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use reltask::harness::is_singular;
use reltask::kernel::{build_n_matrix, k_attn_mc, Kernel, KernelSpec};
use reltask::templates::{builtin, sample_dataset, Alphabet, Builtin, Dataset, TaskDoc, TemplateTask, Token};
use reltask::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    BufferTooSmall = 4,
    Singular = 5,
    Dimension = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: RtStatus, msg: impl Into<String>) -> RtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> RtStatus {
    let status = match &e {
        Error::Singular { .. } => RtStatus::Singular,
        Error::Dimension { .. } => RtStatus::Dimension,
        Error::Io(_) => RtStatus::Io,
        _ => RtStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`RtStatus::Internal`].
fn guard(f: impl FnOnce() -> RtStatus) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RtStatus::Internal, msg)
        }
    }
}

macro_rules! nonnull {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(RtStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, RtStatus> {
    CStr::from_ptr(s).to_str().map_err(|e| fail(RtStatus::InvalidUtf8, e.to_string()))
}

unsafe fn tokens(p: *const u32, k: usize) -> Vec<Token> {
    std::slice::from_raw_parts(p, k).iter().map(|&t| t as Token).collect()
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the full
/// message length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rt_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A template task.
pub struct RtTask {
    inner: TemplateTask,
}

/// A sampled dataset.
pub struct RtDataset {
    inner: Dataset,
}

/// A kernel with its pattern cache.
pub struct RtKernel {
    inner: Kernel,
}

fn boxed<T>(out: *mut *mut T, v: T) -> RtStatus {
    // SAFETY: callers check `out` for null before building `v`.
    unsafe { *out = Box::into_raw(Box::new(v)) };
    RtStatus::Ok
}

/// Creates a builtin task such as `"same_different"` or `"majority:5"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rt_task_from_builtin(name: *const c_char, out: *mut *mut RtTask) -> RtStatus {
    nonnull!(name, out);
    guard(|| {
        let name = match read_str(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match name.parse::<Builtin>().and_then(|b| builtin(&b)) {
            Ok(t) => boxed(out, RtTask { inner: t }),
            Err(e) => from_error(e),
        }
    })
}

/// Creates a task from a JSON task document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rt_task_from_json(json: *const c_char, out: *mut *mut RtTask) -> RtStatus {
    nonnull!(json, out);
    guard(|| {
        let json = match read_str(json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match TaskDoc::from_json(json).and_then(|d| d.into_task("custom")) {
            Ok(t) => boxed(out, RtTask { inner: t }),
            Err(e) => from_error(e),
        }
    })
}

/// Replaces the vocabulary size of the task.
///
/// # Safety
/// `task` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_task_set_vocab_size(task: *mut RtTask, vocab_size: usize) -> RtStatus {
    nonnull!(task);
    guard(|| match (*task).inner.clone().with_vocab_size(vocab_size) {
        Ok(t) => {
            (*task).inner = t;
            RtStatus::Ok
        }
        Err(e) => from_error(e),
    })
}

/// Appends a classification token to every template.
///
/// # Safety
/// `task` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_task_add_cls(task: *mut RtTask) -> RtStatus {
    nonnull!(task);
    guard(|| {
        (*task).inner = (*task).inner.with_cls();
        RtStatus::Ok
    })
}

/// Sequence length `k`, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_task_k(task: *const RtTask) -> usize {
    task.as_ref().map_or(0, |t| t.inner.k())
}

/// Number of templates, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_task_num_templates(task: *const RtTask) -> usize {
    task.as_ref().map_or(0, |t| t.inner.len())
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_task_vocab_size(task: *const RtTask) -> usize {
    task.as_ref().map_or(0, |t| t.inner.vocab_size)
}

/// # Safety
/// `task` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_task_free(task: *mut RtTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Samples `n` examples with substitutions drawn from the first
/// `alphabet` free tokens of the task.
///
/// # Safety
/// `task` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_sample(
    task: *const RtTask,
    n: usize,
    alphabet: usize,
    seed: u64,
    out: *mut *mut RtDataset,
) -> RtStatus {
    nonnull!(task, out);
    guard(|| {
        let t = &(*task).inner;
        let free = t.free_tokens();
        if alphabet > free.len() {
            return fail(RtStatus::InvalidArgument, format!("alphabet {alphabet} exceeds {} free tokens", free.len()));
        }
        match sample_dataset(t, n, &Alphabet::new(free[..alphabet].to_vec()), seed) {
            Ok(d) => boxed(out, RtDataset { inner: d }),
            Err(e) => from_error(e),
        }
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_len(ds: *const RtDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies the inputs row-major into `buf` (`len × k` tokens).
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_tokens(ds: *const RtDataset, buf: *mut u32, cap: usize) -> RtStatus {
    nonnull!(ds, buf);
    guard(|| {
        let flat: Vec<u32> = (*ds).inner.samples.iter().flat_map(|s| s.tokens.iter().map(|&t| t as u32)).collect();
        if flat.len() > cap {
            return fail(RtStatus::BufferTooSmall, format!("need {} slots, got {cap}", flat.len()));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        RtStatus::Ok
    })
}

/// Copies the template index of every sample into `buf`.
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_templates(ds: *const RtDataset, buf: *mut usize, cap: usize) -> RtStatus {
    nonnull!(ds, buf);
    guard(|| {
        let s = &(*ds).inner.samples;
        if s.len() > cap {
            return fail(RtStatus::BufferTooSmall, format!("need {} slots, got {cap}", s.len()));
        }
        for (i, x) in s.iter().enumerate() {
            *buf.add(i) = x.template;
        }
        RtStatus::Ok
    })
}

/// Copies real-valued labels into `buf`; fails for symbolic tasks.
///
/// # Safety
/// `ds` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_labels(ds: *const RtDataset, buf: *mut f64, cap: usize) -> RtStatus {
    nonnull!(ds, buf);
    guard(|| {
        let Some(y) = (*ds).inner.real_labels() else {
            return fail(RtStatus::InvalidArgument, "labels are tokens, not reals");
        };
        if y.len() > cap {
            return fail(RtStatus::BufferTooSmall, format!("need {} slots, got {cap}", y.len()));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), buf, y.len());
        RtStatus::Ok
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_free(ds: *mut RtDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Creates a kernel from a JSON spec such as
/// `{"kind":"trans","beta":0.5,"gamma":0.5,"b1":1,"b2":0.3}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rt_kernel_from_json(json: *const c_char, out: *mut *mut RtKernel) -> RtStatus {
    nonnull!(json, out);
    guard(|| {
        let json = match read_str(json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let spec: KernelSpec = match serde_json::from_str(json) {
            Ok(s) => s,
            Err(e) => return fail(RtStatus::InvalidArgument, e.to_string()),
        };
        match Kernel::new(spec) {
            Ok(k) => boxed(out, RtKernel { inner: k }),
            Err(e) => from_error(e),
        }
    })
}

/// Evaluates the kernel on two length-`k` sequences.
///
/// # Safety
/// `kernel` must be a live handle, `x` and `y` valid for `k` reads and
/// `value` valid for a write; `std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn rt_kernel_eval(
    kernel: *const RtKernel,
    x: *const u32,
    y: *const u32,
    k: usize,
    value: *mut f64,
    std_error: *mut f64,
) -> RtStatus {
    nonnull!(kernel, x, y, value);
    guard(|| match (*kernel).inner.eval(&tokens(x, k), &tokens(y, k)) {
        Ok(e) => {
            *value = e.value;
            if !std_error.is_null() {
                *std_error = e.std_error;
            }
            RtStatus::Ok
        }
        Err(e) => from_error(e),
    })
}

/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_kernel_free(kernel: *mut RtKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Attention kernel estimate for one pair; exact at `beta == 0`.
///
/// # Safety
/// `x`, `y` must be valid for `k` reads, `value` for a write; `std_error`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn rt_k_attn(
    x: *const u32,
    y: *const u32,
    k: usize,
    beta: f64,
    gamma: f64,
    n_samples: usize,
    seed: u64,
    value: *mut f64,
    std_error: *mut f64,
) -> RtStatus {
    nonnull!(x, y, value);
    guard(|| match k_attn_mc(&tokens(x, k), &tokens(y, k), beta, gamma, n_samples, seed) {
        Ok(e) => {
            *value = e.value;
            if !std_error.is_null() {
                *std_error = e.std_error;
            }
            RtStatus::Ok
        }
        Err(e) => from_error(e),
    })
}

/// Builds the template-level matrix `N` (`r × r`, row-major into
/// `values`). `condition_number` and `singular` may be null.
///
/// # Safety
/// Handles must be live, `values` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rt_n_matrix(
    task: *const RtTask,
    kernel: *const RtKernel,
    seed: u64,
    values: *mut f64,
    cap: usize,
    condition_number: *mut f64,
    singular: *mut bool,
) -> RtStatus {
    nonnull!(task, kernel, values);
    guard(|| match build_n_matrix(&(*task).inner, &(*kernel).inner, seed) {
        Ok(nm) => {
            let data = nm.values.data();
            if data.len() > cap {
                return fail(RtStatus::BufferTooSmall, format!("need {} slots, got {cap}", data.len()));
            }
            ptr::copy_nonoverlapping(data.as_ptr(), values, data.len());
            if !condition_number.is_null() {
                *condition_number = nm.condition_number;
            }
            if !singular.is_null() {
                *singular = is_singular(&nm);
            }
            RtStatus::Ok
        }
        Err(e) => from_error(e),
    })
}
