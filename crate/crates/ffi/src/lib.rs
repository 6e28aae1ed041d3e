//! C interface to profilecp.
//!
//! Objects are opaque handles created by the `_default`, `_load`, `_parse`
//! and `_from_*` functions and released with the matching `_free`. Every fallible call returns a
//! [`PcpStatus`]; on failure the message is available from
//! [`pcp_last_error_message`] on the same thread until the next failing call.
//! Strings returned through out-parameters are owned by the caller and must be
//! released with [`pcp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use profilecp::bench::{cost_upper_bound, CostStats};
use profilecp::carm::{carm_rank, jaccard_similarity, RetrievalError};
use profilecp::config::RunConfig;
use profilecp::ontology::{parse_profile, ConstraintProfile, Ontology};
use profilecp::pipeline::{Outcome, Pipeline, ProblemStatement};
use profilecp::store::{cosine_similarity, ExemplarStore};
use profilecp::tot::{predicted_node_count, ToTConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    EmptyStore = 5,
    EmptyProfile = 6,
    Config = 7,
    Panic = 8,
}

/// Outcome of a solved problem, mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpOutcome {
    Solved = 0,
    Failed = 1,
    InfraError = 2,
}

pub struct PcpOntology(Ontology);
pub struct PcpProfile(ConstraintProfile);
pub struct PcpStore(ExemplarStore);
pub struct PcpPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(PcpStatus, String);

impl Failure {
    fn new(status: PcpStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

/// Runs `f`, turning failures and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PcpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(PcpStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PcpStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(PcpStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(PcpStatus::NullArgument, format!("`{name}` is null")));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn pcp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in constraint ontology.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcp_ontology_default(out: *mut *mut PcpOntology) -> PcpStatus {
    guard(|| {
        put(
            out,
            Box::into_raw(Box::new(PcpOntology(Ontology::default_ontology()))),
            "out",
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pcp_ontology_load(path: *const c_char, out: *mut *mut PcpOntology) -> PcpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let o = Ontology::load(Path::new(path)).map_err(|e| Failure::new(PcpStatus::InvalidInput, e.to_string()))?;
        put(out, Box::into_raw(Box::new(PcpOntology(o))), "out")
    })
}

/// # Safety
/// `o` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_ontology_free(o: *mut PcpOntology) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// Number of constraint types; 0 for null.
///
/// # Safety
/// `o` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcp_ontology_len(o: *const PcpOntology) -> usize {
    o.as_ref().map_or(0, |o| o.0.len())
}

/// Parses an analyzer answer (a bracketed list, or free text) into a profile.
///
/// # Safety
/// Pointers must be valid; `raw` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_profile_parse(
    ontology: *const PcpOntology,
    raw: *const c_char,
    out: *mut *mut PcpProfile,
) -> PcpStatus {
    guard(|| {
        let o = ref_arg(ontology, "ontology")?;
        let raw = str_arg(raw, "raw")?;
        let parsed = parse_profile(raw, &o.0).map_err(|e| Failure::new(PcpStatus::InvalidInput, e.to_string()))?;
        put(out, Box::into_raw(Box::new(PcpProfile(parsed.profile))), "out")
    })
}

/// Builds a profile from comma-separated names. Unknown names are an error.
///
/// # Safety
/// Pointers must be valid; `names` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_profile_from_names(
    ontology: *const PcpOntology,
    names: *const c_char,
    out: *mut *mut PcpProfile,
) -> PcpStatus {
    guard(|| {
        let o = ref_arg(ontology, "ontology")?;
        let names: Vec<&str> = str_arg(names, "names")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let (profile, unknown) = ConstraintProfile::from_names(&names, &o.0);
        if !unknown.is_empty() {
            return Err(Failure::new(
                PcpStatus::InvalidInput,
                format!("unknown constraint types: {}", unknown.join(", ")),
            ));
        }
        put(out, Box::into_raw(Box::new(PcpProfile(profile))), "out")
    })
}

/// # Safety
/// `p` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_profile_free(p: *mut PcpProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcp_profile_len(p: *const PcpProfile) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// Canonical names joined by ", ". Free with `pcp_string_free`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcp_profile_render(p: *const PcpProfile, out: *mut *mut c_char) -> PcpStatus {
    guard(|| {
        let p = ref_arg(p, "profile")?;
        put(out, c_string(p.0.names().join(", ")), "out")
    })
}

/// |A ∩ B| / |A ∪ B|; 0 when both are empty.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcp_jaccard(a: *const PcpProfile, b: *const PcpProfile, out: *mut f64) -> PcpStatus {
    guard(|| {
        let (a, b) = (ref_arg(a, "a")?, ref_arg(b, "b")?);
        put(out, jaccard_similarity(&a.0, &b.0), "out")
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `u` and `v` must point to `len` floats each.
#[no_mangle]
pub unsafe extern "C" fn pcp_cosine(u: *const f32, v: *const f32, len: usize, out: *mut f64) -> PcpStatus {
    guard(|| {
        if u.is_null() || v.is_null() {
            return Err(Failure::new(PcpStatus::NullArgument, "vector is null"));
        }
        let (u, v) = (std::slice::from_raw_parts(u, len), std::slice::from_raw_parts(v, len));
        let c = cosine_similarity(u, v).map_err(|e| Failure::new(PcpStatus::InvalidInput, e.to_string()))?;
        put(out, c, "out")
    })
}

/// Loads an exemplar store (JSON Lines) validated against `ontology`.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_store_load(
    path: *const c_char,
    ontology: *const PcpOntology,
    out: *mut *mut PcpStore,
) -> PcpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let o = ref_arg(ontology, "ontology")?;
        let store = ExemplarStore::load(Path::new(path), &o.0).map_err(|e| {
            let status = if Path::new(path).exists() {
                PcpStatus::InvalidInput
            } else {
                PcpStatus::Io
            };
            Failure::new(status, e.to_string())
        })?;
        put(out, Box::into_raw(Box::new(PcpStore(store))), "out")
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_store_free(s: *mut PcpStore) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcp_store_len(s: *const PcpStore) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Top-`k` exemplars by profile overlap, as a JSON array of `{"id","score"}`.
/// `exclude` may be null. An empty profile is `EmptyProfile`; embedding
/// fallback needs a backend and is only available through a pipeline.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_carm_retrieve(
    store: *const PcpStore,
    profile: *const PcpProfile,
    k: usize,
    exclude: *const c_char,
    out_json: *mut *mut c_char,
) -> PcpStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let profile = ref_arg(profile, "profile")?;
        let exclude = if exclude.is_null() {
            None
        } else {
            Some(str_arg(exclude, "exclude")?)
        };
        if profile.0.is_empty() {
            return Err(Failure::new(
                PcpStatus::EmptyProfile,
                RetrievalError::EmptyProfile.to_string(),
            ));
        }
        let hits = carm_rank(&profile.0, &store.0, k, exclude).map_err(|e| match e {
            RetrievalError::EmptyStore => Failure::new(PcpStatus::EmptyStore, e.to_string()),
            other => Failure::new(PcpStatus::InvalidInput, other.to_string()),
        })?;
        let rows: Vec<_> = hits
            .iter()
            .map(|(e, s)| serde_json::json!({"id": e.id, "score": s}))
            .collect();
        put(
            out_json,
            c_string(serde_json::Value::Array(rows).to_string()),
            "out_json",
        )
    })
}

/// Closed-form tree size for `w` roots, beam `m`, depth `n`.
#[no_mangle]
pub extern "C" fn pcp_predicted_node_count(w: usize, m: usize, n: usize) -> u64 {
    predicted_node_count(&ToTConfig {
        initial_thoughts: w,
        beam: m,
        max_depth: n,
    })
}

/// Seconds: k·(L·f + T_solver + T_CARM), times the tree size when
/// `with_tree` is non-zero.
///
/// # Safety
/// `out_seconds` must be valid for a write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pcp_cost_upper_bound(
    k: u64,
    with_tree: i32,
    w: usize,
    m: usize,
    n: usize,
    l_gen_tokens: f64,
    f_token_s: f64,
    t_solver_s: f64,
    t_carm_s: f64,
    out_seconds: *mut f64,
) -> PcpStatus {
    guard(|| {
        let stats = CostStats {
            l_gen_tokens,
            f_token_s,
            t_solver_s,
            t_carm_s,
        };
        if [l_gen_tokens, f_token_s, t_solver_s, t_carm_s]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Failure::new(
                PcpStatus::InvalidInput,
                "cost inputs must be finite and non-negative",
            ));
        }
        let tot = ToTConfig {
            initial_thoughts: w,
            beam: m,
            max_depth: n,
        };
        let bound = cost_upper_bound(k, (with_tree != 0).then_some(&tot), &stats);
        put(out_seconds, bound.as_secs_f64(), "out_seconds")
    })
}

/// Builds a pipeline from a config file: stores, backends and runner.
///
/// # Safety
/// Pointers must be valid; `config_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_pipeline_from_config(config_path: *const c_char, out: *mut *mut PcpPipeline) -> PcpStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let config_failure = |e: profilecp::config::ConfigError| Failure::new(PcpStatus::Config, e.to_string());
        let cfg = RunConfig::load(Path::new(path)).map_err(config_failure)?;
        cfg.validate().map_err(config_failure)?;
        let pipeline = cfg.pipeline().map_err(config_failure)?;
        put(out, Box::into_raw(Box::new(PcpPipeline(pipeline))), "out")
    })
}

/// # Safety
/// `p` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_pipeline_free(p: *mut PcpPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Solves one problem given as JSON. The report JSON goes to `out_report`
/// and the outcome to `out_outcome`; infrastructure failures are an outcome,
/// not a status.
///
/// # Safety
/// Pointers must be valid; `problem_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcp_solve_problem(
    pipeline: *const PcpPipeline,
    problem_json: *const c_char,
    out_report: *mut *mut c_char,
    out_outcome: *mut PcpOutcome,
) -> PcpStatus {
    guard(|| {
        let p = ref_arg(pipeline, "pipeline")?;
        let problem: ProblemStatement = serde_json::from_str(str_arg(problem_json, "problem_json")?)
            .map_err(|e| Failure::new(PcpStatus::InvalidInput, format!("problem: {e}")))?;
        if out_report.is_null() || out_outcome.is_null() {
            return Err(Failure::new(PcpStatus::NullArgument, "output pointer is null"));
        }
        let report = p.0.solve_problem(&problem);
        let outcome = match report.outcome {
            Outcome::Solved => PcpOutcome::Solved,
            Outcome::Failed => PcpOutcome::Failed,
            Outcome::InfraError => PcpOutcome::InfraError,
        };
        let json = serde_json::to_string(&report).map_err(|e| Failure::new(PcpStatus::InvalidInput, e.to_string()))?;
        put(out_report, c_string(json), "out_report")?;
        put(out_outcome, outcome, "out_outcome")
    })
}
