//! C ABI over the normlab engine.
//!
//! Every function returns an [`NlStatus`]. On failure the message is kept per
//! thread and read with [`nl_last_error`]. Strings handed out by the library
//! are owned by the caller and released with [`nl_string_free`]; handles are
//! released with their matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use normlab::backend::{BackendConfig, Corpus, PatternBackend};
use normlab::certify::{
    certify_convention_sensitivity, certify_reproduction, certify_sanction_sensitivity, classify_normative, ActionFrame,
    ConventionOptions, NormOptions, SanctionOptions,
};
use normlab::lmae::{Engine, EngineOptions, Scenario};
use normlab::seq::Sequence;
use serde_json::Value;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    Backend = 5,
    Engine = 6,
    Certify = 7,
    /// The episode already ran to its horizon.
    Finished = 8,
    Panic = 9,
}

/// Opaque pattern-completion backend.
pub struct NlBackend {
    inner: Box<dyn PatternBackend>,
}

/// Opaque episode in progress.
pub struct NlEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NlStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: NlStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> NlStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
        Err(Failure(NlStatus::Panic, msg.unwrap_or_else(|| "panic".into())))
    });
    match result {
        Ok(()) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NlStatus::Ok
        }
        Err(Failure(status, msg)) => {
            let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
            status
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(NlStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(fail(NlStatus::InvalidUtf8))
}

unsafe fn json(p: *const c_char) -> Outcome<Value> {
    serde_json::from_str(text(p)?).map_err(fail(NlStatus::InvalidJson))
}

unsafe fn out<'a, T>(p: *mut T) -> Outcome<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure(NlStatus::NullPointer, "null output pointer".into()))
}

unsafe fn give_string(dst: *mut *mut c_char, s: String) -> Outcome<()> {
    let s = CString::new(s).map_err(fail(NlStatus::InvalidArgument))?;
    *out(dst)? = s.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn nl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn nl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn nl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a backend from a JSON backend config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_backend` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_backend_new(config_json: *const c_char, out_backend: *mut *mut NlBackend) -> NlStatus {
    guard(|| {
        let config: BackendConfig = serde_json::from_value(json(config_json)?).map_err(fail(NlStatus::InvalidJson))?;
        let inner = config.build().map_err(fail(NlStatus::Backend))?;
        *out(out_backend)? = Box::into_raw(Box::new(NlBackend { inner }));
        Ok(())
    })
}

/// # Safety
/// `backend` must be null or a handle from [`nl_backend_new`].
#[no_mangle]
pub unsafe extern "C" fn nl_backend_free(backend: *mut NlBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

unsafe fn backend<'a>(b: *const NlBackend) -> Outcome<&'a NlBackend> {
    b.as_ref().ok_or_else(|| Failure(NlStatus::NullPointer, "null backend".into()))
}

/// Log-probability of `continuation` after `context`. With `complete` set the
/// continuation must also end there.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nl_backend_log_prob(
    handle: *const NlBackend,
    context: *const c_char,
    continuation: *const c_char,
    complete: bool,
    out_log_prob: *mut f64,
) -> NlStatus {
    guard(|| {
        let b = &backend(handle)?.inner;
        let (c, x) = (Sequence::new(text(context)?), Sequence::new(text(continuation)?));
        let lp = if complete { b.log_prob_complete(&c, &x) } else { b.log_prob(&c, &x) };
        *out(out_log_prob)? = lp.map_err(fail(NlStatus::Backend))?;
        Ok(())
    })
}

/// KL divergence between the continuation distributions of two contexts.
/// `out_std_error` receives NaN when the value is exact.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nl_backend_kl(
    handle: *const NlBackend,
    context_a: *const c_char,
    context_b: *const c_char,
    horizon: usize,
    out_value: *mut f64,
    out_std_error: *mut f64,
) -> NlStatus {
    guard(|| {
        let b = &backend(handle)?.inner;
        let e = b
            .kl_divergence(&Sequence::new(text(context_a)?), &Sequence::new(text(context_b)?), horizon)
            .map_err(fail(NlStatus::Backend))?;
        *out(out_value)? = e.value;
        *out(out_std_error)? = e.std_error.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Seeded completion of at most `max_tokens` tokens.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`nl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nl_backend_sample(
    handle: *const NlBackend,
    context: *const c_char,
    max_tokens: usize,
    seed: u64,
    out_text: *mut *mut c_char,
) -> NlStatus {
    guard(|| {
        let b = &backend(handle)?.inner;
        let s = b.sample_completion(&Sequence::new(text(context)?), max_tokens, seed).map_err(fail(NlStatus::Backend))?;
        give_string(out_text, s.to_string())
    })
}

/// Trains the backend on a JSON array of strings.
///
/// # Safety
/// Pointers must be valid; `corpus_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nl_backend_consolidate(handle: *mut NlBackend, corpus_json: *const c_char) -> NlStatus {
    guard(|| {
        let texts: Vec<String> = serde_json::from_value(json(corpus_json)?).map_err(fail(NlStatus::InvalidJson))?;
        let b = handle.as_mut().ok_or_else(|| Failure(NlStatus::NullPointer, "null backend".into()))?;
        b.inner.consolidate(&Corpus::from_texts(texts)).map_err(fail(NlStatus::Backend))
    })
}

/// Starts an episode of a JSON scenario.
///
/// # Safety
/// `scenario_json` must be NUL-terminated and `out_engine` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_engine_new(scenario_json: *const c_char, seed: u64, out_engine: *mut *mut NlEngine) -> NlStatus {
    guard(|| {
        let scenario = Scenario::from_json(text(scenario_json)?).map_err(fail(NlStatus::InvalidJson))?;
        let inner = Engine::new(&scenario, seed, EngineOptions::default()).map_err(fail(NlStatus::Engine))?;
        *out(out_engine)? = Box::into_raw(Box::new(NlEngine { inner }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from [`nl_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn nl_engine_free(engine: *mut NlEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs one tick and writes its record as a JSON object.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`nl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nl_engine_step(engine: *mut NlEngine, out_tick_json: *mut *mut c_char) -> NlStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| Failure(NlStatus::NullPointer, "null engine".into()))?;
        if e.inner.is_finished() {
            return Err(Failure(NlStatus::Finished, "episode reached its horizon".into()));
        }
        let record = e.inner.step().map_err(fail(NlStatus::Engine))?;
        give_string(out_tick_json, serde_json::to_string(&record).map_err(fail(NlStatus::InvalidJson))?)
    })
}

/// Runs a whole episode and writes the trace as JSON Lines.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`nl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nl_run_episode(scenario_json: *const c_char, seed: u64, out_trace: *mut *mut c_char) -> NlStatus {
    guard(|| {
        let scenario = Scenario::from_json(text(scenario_json)?).map_err(fail(NlStatus::InvalidJson))?;
        let (trace, _) = Engine::new(&scenario, seed, EngineOptions::default()).map_err(fail(NlStatus::Engine))?.run();
        give_string(out_trace, trace.to_jsonl())
    })
}

fn frames(v: Value) -> Outcome<Vec<ActionFrame>> {
    let parsed = match v {
        Value::Array(_) => serde_json::from_value(v),
        v => serde_json::from_value(v).map(|f| vec![f]),
    };
    parsed.map_err(fail(NlStatus::InvalidJson))
}

/// Certifies one property and writes the report as JSON.
///
/// `kind` is `convention`, `sanction`, `reproduction` or `norm`. `options_json`
/// may hold `f_grid`, `seed`, `r`, `generic_threshold` and, for `sanction`,
/// a `sanction` object. `actor` is ignored by `norm`, which uses every actor.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`nl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nl_certify(
    kind: *const c_char,
    scenario_json: *const c_char,
    actor: *const c_char,
    frame_json: *const c_char,
    options_json: *const c_char,
    out_report: *mut *mut c_char,
) -> NlStatus {
    guard(|| {
        let kind = text(kind)?;
        let scenario = Scenario::from_json(text(scenario_json)?).map_err(fail(NlStatus::InvalidJson))?;
        let backends = scenario.build_backends().map_err(fail(NlStatus::Engine))?;
        let actors = scenario.build_actors(&backends).map_err(fail(NlStatus::Engine))?;
        let frames = frames(json(frame_json)?)?;
        let opts = if options_json.is_null() { Value::Null } else { json(options_json)? };
        let grid: Vec<f64> = match opts.get("f_grid") {
            Some(g) => serde_json::from_value(g.clone()).map_err(fail(NlStatus::InvalidJson))?,
            None => vec![0.25, 0.5, 0.75, 1.0],
        };
        let seed = opts.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let r = opts.get("r").and_then(Value::as_f64).unwrap_or(0.5);
        let bad = |m: &str| Failure(NlStatus::InvalidArgument, m.to_string());
        let cert = fail(NlStatus::Certify);

        let report = if kind == "norm" {
            let mut no = NormOptions::new(grid);
            no.r = r;
            no.seed = seed;
            if let Some(t) = opts.get("generic_threshold").and_then(Value::as_f64) {
                no.generic_threshold = t;
            }
            serde_json::to_value(classify_normative(&actors, &frames, &no).map_err(cert)?)
        } else {
            let [frame] = frames.as_slice() else { return Err(bad("expected exactly one frame")) };
            let id = text(actor)?;
            let a = actors.iter().find(|a| a.id.as_str() == id).ok_or_else(|| bad("no such actor"))?;
            let co = ConventionOptions::new(&grid, seed);
            match kind {
                "convention" => serde_json::to_value(certify_convention_sensitivity(a, frame, &co).map_err(cert)?),
                "reproduction" => serde_json::to_value(certify_reproduction(a, frame, r, &co).map_err(cert)?),
                "sanction" => {
                    let so: SanctionOptions =
                        serde_json::from_value(opts.get("sanction").cloned().ok_or_else(|| bad("missing sanction options"))?)
                            .map_err(fail(NlStatus::InvalidJson))?;
                    serde_json::to_value(certify_sanction_sensitivity(a, frame, &so, seed).map_err(cert)?)
                }
                _ => return Err(bad("unknown certification kind")),
            }
        };
        let report = report.map_err(fail(NlStatus::InvalidJson))?;
        give_string(out_report, serde_json::to_string_pretty(&report).map_err(fail(NlStatus::InvalidJson))?)
    })
}
