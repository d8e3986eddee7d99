//! C ABI over `mgrd-core`.
//!
//! Every fallible function returns an [`MgrdStatus`]; on failure a message is
//! available from [`mgrd_last_error_message`] on the same thread. Policies
//! are opaque handles released with [`mgrd_policy_free`]; strings returned
//! through out-parameters are released with [`mgrd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mgrd_core::format::{emit, parse, FormatConfig, FormatError};
use mgrd_core::policy::{PolicyError, ToyPolicy};
use mgrd_core::rewards::{audio_reward, text_reward, verify_answer, RewardError};
use mgrd_core::trainer::gae;
use mgrd_core::types::{Matcher, ReasoningOutput, RewardSpec};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgrdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    MalformedFormat = 5,
    OutOfVocabulary = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque policy handle.
pub struct MgrdPolicy {
    inner: ToyPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(MgrdStatus, String);

impl Fail {
    fn new(status: MgrdStatus, msg: impl Into<String>) -> Self {
        Fail(status, msg.into())
    }
}

impl From<PolicyError> for Fail {
    fn from(e: PolicyError) -> Self {
        let status = match e {
            PolicyError::OutOfVocabulary(_) => MgrdStatus::OutOfVocabulary,
            PolicyError::Io(_) => MgrdStatus::Io,
            _ => MgrdStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<FormatError> for Fail {
    fn from(e: FormatError) -> Self {
        Fail(MgrdStatus::MalformedFormat, e.to_string())
    }
}

impl From<RewardError> for Fail {
    fn from(e: RewardError) -> Self {
        Fail(MgrdStatus::InvalidArgument, e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MgrdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MgrdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MgrdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(MgrdStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(MgrdStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(MgrdStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::new(MgrdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NUL bytes removed").into_raw()
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mgrd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mgrd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_policy_load(path: *const c_char, out: *mut *mut MgrdPolicy) -> MgrdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = ToyPolicy::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MgrdPolicy { inner }));
        Ok(())
    })
}

/// Release a policy handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from [`mgrd_policy_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mgrd_policy_free(p: *mut MgrdPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of tokens in the policy vocabulary.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_policy_vocab_size(p: *const MgrdPolicy, out: *mut usize) -> MgrdStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| Fail::new(MgrdStatus::NullPointer, "policy is null"))?;
        *out_arg(out, "out")? = p.inner.vocab().len();
        Ok(())
    })
}

/// Next-token log-probabilities after `context` (token ids) at temperature 1.
/// `out` must hold at least the vocabulary size.
///
/// # Safety
/// `context` must point to `context_len` ids; `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgrd_policy_logprobs(
    p: *const MgrdPolicy,
    context: *const u32,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MgrdStatus {
    guard(|| {
        let p = &p.as_ref().ok_or_else(|| Fail::new(MgrdStatus::NullPointer, "policy is null"))?.inner;
        let ctx = slice_arg(context, context_len, "context")?;
        let n = p.vocab().len();
        if let Some(&bad) = ctx.iter().find(|&&t| t as usize >= n) {
            return Err(Fail::new(MgrdStatus::OutOfVocabulary, format!("token id {bad} >= vocabulary size {n}")));
        }
        if out_len < n {
            return Err(Fail::new(MgrdStatus::BufferTooSmall, format!("out holds {out_len}, need {n}")));
        }
        if out.is_null() {
            return Err(Fail::new(MgrdStatus::NullPointer, "out is null"));
        }
        let lp = p.logprobs(ctx);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&lp);
        Ok(())
    })
}

/// Sample a continuation of a whitespace-tokenized prompt; the generated
/// text (without the end token) is returned through `out`.
///
/// # Safety
/// `prompt` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_policy_sample_text(
    p: *const MgrdPolicy,
    prompt: *const c_char,
    temperature: f64,
    max_len: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> MgrdStatus {
    guard(|| {
        let p = &p.as_ref().ok_or_else(|| Fail::new(MgrdStatus::NullPointer, "policy is null"))?.inner;
        let out = out_arg(out, "out")?;
        let prompt = p.vocab().tokenize(str_arg(prompt, "prompt")?)?;
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Fail::new(MgrdStatus::InvalidArgument, "temperature must be positive"));
        }
        let traj = p.sample(&prompt, temperature, max_len, seed)?;
        *out = to_c(p.vocab().detokenize(&traj.gen_tokens));
        Ok(())
    })
}

/// Strictly parse `<think>...</think>` + response with the default tags.
///
/// # Safety
/// `raw` must be a NUL-terminated string; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_format_parse(
    raw: *const c_char,
    out_think: *mut *mut c_char,
    out_response: *mut *mut c_char,
) -> MgrdStatus {
    guard(|| {
        let out_think = out_arg(out_think, "out_think")?;
        let out_response = out_arg(out_response, "out_response")?;
        let o = parse(str_arg(raw, "raw")?, &FormatConfig::default())?;
        *out_think = to_c(o.think);
        *out_response = to_c(o.response);
        Ok(())
    })
}

/// Render a think span and response in the default format.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_format_emit(think: *const c_char, response: *const c_char, out: *mut *mut c_char) -> MgrdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let o = ReasoningOutput::new(str_arg(think, "think")?, str_arg(response, "response")?);
        *out = to_c(emit(&o, &FormatConfig::default()));
        Ok(())
    })
}

/// Composite audio reward with weights `w_acc`/`w_fmt` (normalized matcher).
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_reward_audio(
    think: *const c_char,
    response: *const c_char,
    answer: *const c_char,
    w_acc: f64,
    w_fmt: f64,
    out: *mut f64,
) -> MgrdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = RewardSpec { w_acc, w_fmt, matcher: Matcher::Normalized };
        spec.validate().map_err(|e| Fail::new(MgrdStatus::InvalidArgument, e.to_string()))?;
        let o = ReasoningOutput::new(str_arg(think, "think")?, str_arg(response, "response")?);
        *out = audio_reward(&o, str_arg(answer, "answer")?, &spec)?.value;
        Ok(())
    })
}

/// Binary text reward (normalized matcher).
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_reward_text(response: *const c_char, answer: *const c_char, out: *mut f64) -> MgrdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let o = ReasoningOutput::new("", str_arg(response, "response")?);
        *out = text_reward(&o, str_arg(answer, "answer")?, &RewardSpec::default())?.value;
        Ok(())
    })
}

/// 1 when `answer` matches `truth`, else 0. `normalized` selects the
/// case- and punctuation-insensitive matcher over exact comparison.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgrd_verify_answer(
    answer: *const c_char,
    truth: *const c_char,
    normalized: bool,
    out: *mut u8,
) -> MgrdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = if normalized { Matcher::Normalized } else { Matcher::Exact };
        *out = verify_answer(str_arg(answer, "answer")?, str_arg(truth, "truth")?, m)?;
        Ok(())
    })
}

/// Generalized advantage estimates for `n` steps into `out`.
///
/// # Safety
/// `rewards`, `values` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgrd_gae(
    rewards: *const f64,
    values: *const f64,
    n: usize,
    gamma: f64,
    lambda: f64,
    out: *mut f64,
) -> MgrdStatus {
    guard(|| {
        let r = slice_arg(rewards, n, "rewards")?;
        let v = slice_arg(values, n, "values")?;
        if n > 0 && out.is_null() {
            return Err(Fail::new(MgrdStatus::NullPointer, "out is null"));
        }
        let adv = gae(r, v, gamma, lambda).map_err(|e| Fail::new(MgrdStatus::InvalidArgument, e.to_string()))?;
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        }
        Ok(())
    })
}
