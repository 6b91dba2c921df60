//! C ABI over `pacit-core`.
//!
//! Every function returns a [`PacitStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be fetched with
//! [`pacit_last_error_message`]. Strings returned to the caller are owned by
//! the caller and must be released with [`pacit_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use pacit_core::corpus::{load_task, parse_task, Task};
use pacit_core::loss::{masked_nll, TokenSpans};
use pacit_core::metrics::{pearson, rouge_l};
use pacit_core::outparse::parse_output;
use pacit_core::packer::{LengthBudget, Packer, Variant, WhitespaceCounter};
use pacit_core::templater::{ActionText, Renderer, Templates, DEFAULT_MAX_EXAMPLES};
use pacit_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Template = 6,
    Loss = 7,
    Metric = 8,
    Generation = 9,
    OutOfRange = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacitVariant {
    Pacit = 0,
    PacitNoAction = 1,
    SuperniFewshot = 2,
    ZeroShot = 3,
    /// Classification and answering sub-samples.
    Separated = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PacitRouge {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PacitLoss {
    pub l_c: f64,
    pub l_a: f64,
    pub total: f64,
    pub classification_tokens: usize,
    pub answer_tokens: usize,
}

/// Opaque task handle.
pub struct PacitTask(Task);

/// Opaque packer handle.
pub struct PacitPacker(Packer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(PacitStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PacitStatus::Io,
            Error::Parse { .. } => PacitStatus::Parse,
            Error::Validation(_) => PacitStatus::Validation,
            Error::Template(_) => PacitStatus::Template,
            Error::Loss(_) => PacitStatus::Loss,
            Error::Metric(_) => PacitStatus::Metric,
            Error::Generation(_) => PacitStatus::Generation,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PacitStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PacitStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PacitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PacitStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PacitStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

/// Library version, statically allocated. Do not free.
#[no_mangle]
pub extern "C" fn pacit_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Free with
/// `pacit_string_free`.
#[no_mangle]
pub extern "C" fn pacit_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(m) => m.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pacit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a task JSON file; the task id is the file stem.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_task` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_task_load(path: *const c_char, out_task: *mut *mut PacitTask) -> PacitStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_task, "out_task")?;
        let task = load_task(Path::new(path))?;
        *slot = Box::into_raw(Box::new(PacitTask(task)));
        Ok(())
    })
}

/// Parses a task from JSON text.
///
/// # Safety
/// `task_id` and `json` must be NUL-terminated strings; `out_task` writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_task_parse(
    task_id: *const c_char,
    json: *const c_char,
    out_task: *mut *mut PacitTask,
) -> PacitStatus {
    guard(|| {
        let id = str_arg(task_id, "task_id")?;
        let text = str_arg(json, "json")?;
        let slot = out(out_task, "out_task")?;
        let task = parse_task(id, text)?;
        *slot = Box::into_raw(Box::new(PacitTask(task)));
        Ok(())
    })
}

/// # Safety
/// `task` must be NULL or a handle from `pacit_task_load`/`pacit_task_parse`.
#[no_mangle]
pub unsafe extern "C" fn pacit_task_free(task: *mut PacitTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// # Safety
/// `task` must be a live handle; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_task_sizes(
    task: *const PacitTask,
    out_instances: *mut usize,
    out_positive: *mut usize,
    out_negative: *mut usize,
) -> PacitStatus {
    guard(|| {
        let t = &task.as_ref().ok_or_else(|| null("task"))?.0;
        *out(out_instances, "out_instances")? = t.instances.len();
        *out(out_positive, "out_positive")? = t.positive_pool.len();
        *out(out_negative, "out_negative")? = t.negative_pool.len();
        Ok(())
    })
}

/// Packer with the builtin scaffold, default action and whitespace length
/// measure.
///
/// # Safety
/// `out_packer` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_packer_new(
    max_input_units: usize,
    max_output_units: usize,
    stage_headers: bool,
    out_packer: *mut *mut PacitPacker,
) -> PacitStatus {
    guard(|| {
        let slot = out(out_packer, "out_packer")?;
        let budget = LengthBudget::new(max_input_units, max_output_units, Arc::new(WhitespaceCounter))?;
        let renderer = Renderer::new(Templates::builtin(), stage_headers, DEFAULT_MAX_EXAMPLES);
        let packer = Packer::new(renderer, ActionText::default(), budget);
        *slot = Box::into_raw(Box::new(PacitPacker(packer)));
        Ok(())
    })
}

/// # Safety
/// `packer` must be NULL or a handle from `pacit_packer_new`.
#[no_mangle]
pub unsafe extern "C" fn pacit_packer_free(packer: *mut PacitPacker) {
    if !packer.is_null() {
        drop(Box::from_raw(packer));
    }
}

/// Packs one instance of `task`. Writes a JSON array of samples (two for
/// `Separated` when examples survive, otherwise one).
///
/// # Safety
/// Handles must be live; `out_json` writable. Free the result with
/// `pacit_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pacit_packer_assemble(
    packer: *const PacitPacker,
    task: *const PacitTask,
    instance_index: usize,
    variant: PacitVariant,
    k_pos: usize,
    k_neg: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> PacitStatus {
    guard(|| {
        let p = &packer.as_ref().ok_or_else(|| null("packer"))?.0;
        let t = &task.as_ref().ok_or_else(|| null("task"))?.0;
        let slot = out(out_json, "out_json")?;
        let inst = t.instances.get(instance_index).ok_or_else(|| {
            Failure(
                PacitStatus::OutOfRange,
                format!("instance_index {instance_index} >= {}", t.instances.len()),
            )
        })?;
        let single = |v| p.assemble(t, inst, v, k_pos, k_neg, seed).map(|s| vec![s]);
        let samples = match variant {
            PacitVariant::Pacit => single(Variant::Pacit)?,
            PacitVariant::PacitNoAction => single(Variant::PacitNoAction)?,
            PacitVariant::SuperniFewshot => single(Variant::SuperniFewshot)?,
            PacitVariant::ZeroShot => single(Variant::ZeroShot)?,
            PacitVariant::Separated => p.assemble_separated(t, inst, k_pos, k_neg, seed)?,
        };
        *slot = into_c_string(serde_json::to_string(&samples).expect("samples serialize"));
        Ok(())
    })
}

/// # Safety
/// String arguments must be NUL-terminated; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_rouge_l(
    reference: *const c_char,
    hypothesis: *const c_char,
    out_score: *mut PacitRouge,
) -> PacitStatus {
    guard(|| {
        let r = str_arg(reference, "reference")?;
        let h = str_arg(hypothesis, "hypothesis")?;
        let s = rouge_l(r, h);
        *out(out_score, "out_score")? = PacitRouge {
            precision: s.precision,
            recall: s.recall,
            f_measure: s.f_measure,
        };
        Ok(())
    })
}

/// Parses a generation into labels, action and answer; writes JSON.
///
/// # Safety
/// `generation` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_parse_output(
    generation: *const c_char,
    expected_examples: usize,
    out_json: *mut *mut c_char,
) -> PacitStatus {
    guard(|| {
        let g = str_arg(generation, "generation")?;
        let slot = out(out_json, "out_json")?;
        let parsed = parse_output(g, expected_examples);
        *slot = into_c_string(serde_json::to_string(&parsed).expect("parsed output serializes"));
        Ok(())
    })
}

/// Masked negative log-likelihood over per-token log-probabilities.
/// Token ranges are half-open; pass `has_classification = false` when the
/// sample has no classification span.
///
/// # Safety
/// `logprobs` must point to `n` doubles (may be NULL when `n == 0`);
/// `out_loss` writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_masked_nll(
    logprobs: *const f64,
    n: usize,
    has_classification: bool,
    classification_start: usize,
    classification_end: usize,
    answer_start: usize,
    answer_end: usize,
    lambda: f64,
    out_loss: *mut PacitLoss,
) -> PacitStatus {
    guard(|| {
        let lp: &[f64] = if n == 0 {
            &[]
        } else if logprobs.is_null() {
            return Err(null("logprobs"));
        } else {
            std::slice::from_raw_parts(logprobs, n)
        };
        let spans = TokenSpans {
            classification: has_classification.then_some((classification_start, classification_end)),
            answer: (answer_start, answer_end),
        };
        let b = masked_nll(lp, &spans, lambda)?;
        *out(out_loss, "out_loss")? = PacitLoss {
            l_c: b.l_c,
            l_a: b.l_a,
            total: b.total,
            classification_tokens: b.classification_tokens,
            answer_tokens: b.answer_tokens,
        };
        Ok(())
    })
}

/// # Safety
/// `xs` and `ys` must each point to `n` doubles; `out_r` writable.
#[no_mangle]
pub unsafe extern "C" fn pacit_pearson(xs: *const f64, ys: *const f64, n: usize, out_r: *mut f64) -> PacitStatus {
    guard(|| {
        if n > 0 && (xs.is_null() || ys.is_null()) {
            return Err(null("xs/ys"));
        }
        let (x, y): (&[f64], &[f64]) = if n == 0 {
            (&[], &[])
        } else {
            (std::slice::from_raw_parts(xs, n), std::slice::from_raw_parts(ys, n))
        };
        *out(out_r, "out_r")? = pearson(x, y)?;
        Ok(())
    })
}
