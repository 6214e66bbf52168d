//! C interface to the carbonflex simulator.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `cf_*_new`/`cf_*_load` call and released with the matching `cf_*_free`.
//! Fallible functions return a [`CfStatus`]; on failure the message is kept
//! per thread and can be read with [`cf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use carbonflex::config::ExperimentConfig;
use carbonflex::learning::{mean_lengths, KnowledgeBase};
use carbonflex::model::{CarbonTrace, ClusterConfig, Job};
use carbonflex::oracle::{retry_with_extension, OracleResult};
use carbonflex::sim::{compare, run_learning, CompareSettings, Forecaster, PolicyKind, SimOutcome};
use carbonflex::traces::{load_carbon_trace, load_jobs};
use carbonflex::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidUtf8 = -2,
    Io = -3,
    Parse = -4,
    Range = -5,
    Infeasible = -6,
    Invalid = -7,
    Panic = -99,
}

/// Experiment settings: cluster, learning, provisioning and simulation.
pub struct CfConfig(ExperimentConfig);

pub struct CfTrace(CarbonTrace);

/// Jobs loaded against a config's queues and profiles.
pub struct CfWorkload(Vec<Job>);

pub struct CfOracle(OracleResult);

pub struct CfKnowledgeBase(KnowledgeBase);

pub struct CfOutcome(SimOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: CfStatus,
    message: String,
}

impl Failure {
    fn new(status: CfStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CfStatus::Io,
            Error::Parse { .. } | Error::UnknownProfile(_) | Error::Config(_) => CfStatus::Parse,
            Error::Range(_) => CfStatus::Range,
            Error::Infeasible(_) | Error::EmptyKnowledgeBase => CfStatus::Infeasible,
            _ => CfStatus::Invalid,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {what}"));
            CfStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure::new(CfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(CfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure::new(CfStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn parse_policy(name: &str) -> Result<PolicyKind, Failure> {
    PolicyKind::from_str(name.trim()).map_err(|e| Failure::new(CfStatus::Invalid, e))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(CfStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(CfStatus::NullPointer, "output pointer is null"));
    }
    *out = value;
    Ok(())
}

unsafe fn release<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Size in bytes, including the terminating NUL, of the last error message
/// on this thread; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn cf_last_error_length() -> usize {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copy the last error message into `buf`. Returns the number of bytes
/// written without the NUL, 0 when there is no error, or -1 when `buf` is
/// null or too small.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cf_last_error_message(buf: *mut c_char, len: usize) -> i32 {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        None => 0,
        Some(c) => {
            let bytes = c.as_bytes_with_nul();
            if buf.is_null() || len < bytes.len() {
                return -1;
            }
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
            (bytes.len() - 1) as i32
        }
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default settings for a cluster of `max_capacity` servers with the
/// built-in scaling profiles.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_config_new(max_capacity: u32, out: *mut *mut CfConfig) -> CfStatus {
    guard(|| {
        let config = ExperimentConfig::new(ClusterConfig::with_capacity(max_capacity));
        config.validate()?;
        store(out, CfConfig(config))
    })
}

/// Read an experiment TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_config_load(path: *const c_char, out: *mut *mut CfConfig) -> CfStatus {
    guard(|| {
        let path = text(path, "path")?;
        store(out, CfConfig(ExperimentConfig::load(Path::new(path))?))
    })
}

/// # Safety
/// `config` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_config_free(config: *mut CfConfig) {
    release(config)
}

/// Read a carbon-intensity CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_load(path: *const c_char, out: *mut *mut CfTrace) -> CfStatus {
    guard(|| {
        let path = text(path, "path")?;
        store(out, CfTrace(load_carbon_trace(Path::new(path))?))
    })
}

/// Hourly trace from `len` values in gCO2/kWh.
///
/// # Safety
/// `values` must point to `len` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_from_values(values: *const f64, len: usize, out: *mut *mut CfTrace) -> CfStatus {
    guard(|| {
        if values.is_null() {
            return Err(Failure::new(CfStatus::NullPointer, "values is null"));
        }
        let values = std::slice::from_raw_parts(values, len).to_vec();
        store(out, CfTrace(CarbonTrace::hourly(values)?))
    })
}

/// Number of samples, or 0 for a null trace.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_len(trace: *const CfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trace` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_free(trace: *mut CfTrace) {
    release(trace)
}

/// Read a job CSV, routing jobs to the config's queues and resolving
/// profile ids against its profile set.
///
/// # Safety
/// `config` must come from this library, `path` must be a NUL-terminated
/// string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_workload_load(
    config: *const CfConfig,
    path: *const c_char,
    out: *mut *mut CfWorkload,
) -> CfStatus {
    guard(|| {
        let config = &borrow(config, "config")?.0;
        let path = text(path, "path")?;
        let profiles = config.profile_set()?;
        store(out, CfWorkload(load_jobs(Path::new(path), &config.cluster, &profiles)?))
    })
}

/// Number of jobs, or 0 for a null workload.
///
/// # Safety
/// `workload` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cf_workload_len(workload: *const CfWorkload) -> usize {
    workload.as_ref().map_or(0, |w| w.0.len())
}

/// # Safety
/// `workload` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_workload_free(workload: *mut CfWorkload) {
    release(workload)
}

/// Offline minimum-carbon schedule of the workload over the whole trace,
/// extending deadlines for at most `max_rounds` rounds (0 means one pass).
/// An infeasible result is still returned; check [`cf_oracle_feasible`].
///
/// # Safety
/// Handles must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_run(
    config: *const CfConfig,
    workload: *const CfWorkload,
    trace: *const CfTrace,
    max_rounds: usize,
    out: *mut *mut CfOracle,
) -> CfStatus {
    guard(|| {
        let config = &borrow(config, "config")?.0;
        let jobs = &borrow(workload, "workload")?.0;
        let trace = &borrow(trace, "trace")?.0;
        store(out, CfOracle(retry_with_extension(jobs, trace, &config.cluster, max_rounds)))
    })
}

/// # Safety
/// `oracle` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_carbon_g(oracle: *const CfOracle, out: *mut f64) -> CfStatus {
    guard(|| write(out, borrow(oracle, "oracle")?.0.carbon_g))
}

/// # Safety
/// `oracle` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_feasible(oracle: *const CfOracle, out: *mut bool) -> CfStatus {
    guard(|| write(out, borrow(oracle, "oracle")?.0.feasible))
}

/// Number of slots covered by the per-slot decisions, or 0 for null.
///
/// # Safety
/// `oracle` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_slots(oracle: *const CfOracle) -> usize {
    oracle.as_ref().map_or(0, |o| o.0.capacity.len())
}

/// Occupied servers and marginal-throughput threshold in slot `t`.
///
/// # Safety
/// `oracle` must come from this library; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_slot(
    oracle: *const CfOracle,
    t: usize,
    capacity: *mut u32,
    threshold: *mut f64,
) -> CfStatus {
    guard(|| {
        let o = &borrow(oracle, "oracle")?.0;
        if t >= o.capacity.len() {
            return Err(Failure::new(CfStatus::Range, format!("slot {t} outside 0..{}", o.capacity.len())));
        }
        write(capacity, o.capacity_at(t))?;
        write(threshold, o.threshold_at(t))
    })
}

/// Write the per-slot decisions and the per-job allocations as CSV.
///
/// # Safety
/// `oracle` must come from this library; paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_write_csvs(
    oracle: *const CfOracle,
    slots_path: *const c_char,
    allocations_path: *const c_char,
) -> CfStatus {
    guard(|| {
        let o = &borrow(oracle, "oracle")?.0;
        let slots = text(slots_path, "slots_path")?;
        let allocations = text(allocations_path, "allocations_path")?;
        Ok(o.write_csvs(Path::new(slots), Path::new(allocations))?)
    })
}

/// # Safety
/// `oracle` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_oracle_free(oracle: *mut CfOracle) {
    release(oracle)
}

/// Learning phase: replay the oracle over the historical workload with the
/// config's learning settings.
///
/// # Safety
/// Handles must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_kb_learn(
    config: *const CfConfig,
    workload: *const CfWorkload,
    trace: *const CfTrace,
    out: *mut *mut CfKnowledgeBase,
) -> CfStatus {
    guard(|| {
        let config = &borrow(config, "config")?.0;
        let jobs = &borrow(workload, "workload")?.0;
        let trace = &borrow(trace, "trace")?.0;
        let (kb, _) = run_learning(jobs, trace, &config.cluster, &config.learning)?;
        store(out, CfKnowledgeBase(kb))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_kb_load(path: *const c_char, out: *mut *mut CfKnowledgeBase) -> CfStatus {
    guard(|| {
        let path = text(path, "path")?;
        store(out, CfKnowledgeBase(KnowledgeBase::load(Path::new(path))?))
    })
}

/// # Safety
/// `kb` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_kb_save(kb: *const CfKnowledgeBase, path: *const c_char) -> CfStatus {
    guard(|| {
        let kb = &borrow(kb, "knowledge base")?.0;
        let path = text(path, "path")?;
        Ok(kb.save(Path::new(path))?)
    })
}

/// Number of stored cases, or 0 for null.
///
/// # Safety
/// `kb` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cf_kb_len(kb: *const CfKnowledgeBase) -> usize {
    kb.as_ref().map_or(0, |k| k.0.len())
}

/// # Safety
/// `kb` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_kb_free(kb: *mut CfKnowledgeBase) {
    release(kb)
}

/// Run policies on the evaluation workload. `policies` is a comma-separated
/// list of names, or null for every policy the inputs allow (carbonflex
/// only when `kb` is non-null). Forecast noise and seed come from the
/// config's simulation settings.
///
/// # Safety
/// `kb` and `policies` may be null; other handles must come from this
/// library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_compare(
    config: *const CfConfig,
    workload: *const CfWorkload,
    trace: *const CfTrace,
    kb: *const CfKnowledgeBase,
    policies: *const c_char,
    out: *mut *mut CfOutcome,
) -> CfStatus {
    guard(|| {
        let config = &borrow(config, "config")?.0;
        let jobs = &borrow(workload, "workload")?.0;
        let trace = &borrow(trace, "trace")?.0;
        let kb = kb.as_ref().map(|k| &k.0);
        let kinds: Vec<PolicyKind> = if policies.is_null() {
            PolicyKind::ALL
                .into_iter()
                .filter(|&p| p != PolicyKind::CarbonFlex || kb.is_some())
                .collect()
        } else {
            text(policies, "policies")?
                .split(',')
                .map(parse_policy)
                .collect::<Result<_, _>>()?
        };
        let queues = config.cluster.queues.len();
        let lengths = match kb {
            Some(kb) if kb.mean_lengths.len() == queues => kb.mean_lengths.clone(),
            _ => mean_lengths(jobs, queues),
        };
        let sim = &config.simulation;
        let settings = CompareSettings {
            params: config.provisioning.clone(),
            forecaster: Forecaster {
                noise_sigma: sim.forecast_noise_sigma,
                seed: sim.seed,
            },
            mean_lengths: lengths,
            max_extension_rounds: config.learning.max_extension_rounds,
            seed: sim.seed,
        };
        let mut outcome = compare(jobs, trace, &config.cluster, kb, &kinds, &settings)?;
        outcome.config = serde_json::json!({ "experiment": config });
        store(out, CfOutcome(outcome))
    })
}

/// The outcome document as JSON; release it with [`cf_string_free`].
///
/// # Safety
/// `outcome` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_outcome_json(outcome: *const CfOutcome, out: *mut *mut c_char) -> CfStatus {
    guard(|| {
        let json = borrow(outcome, "outcome")?.0.to_json();
        let c = CString::new(json).map_err(|e| Failure::new(CfStatus::Invalid, e.to_string()))?;
        write(out, c.into_raw())
    })
}

/// Total carbon (g) and savings against carbon-agnostic (%) of one policy.
///
/// # Safety
/// `outcome` must come from this library, `policy` must be NUL-terminated
/// and the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cf_outcome_policy(
    outcome: *const CfOutcome,
    policy: *const c_char,
    carbon_g: *mut f64,
    savings_pct: *mut f64,
) -> CfStatus {
    guard(|| {
        let o = &borrow(outcome, "outcome")?.0;
        let kind = parse_policy(text(policy, "policy")?)?;
        let report = o
            .report(kind)
            .ok_or_else(|| Failure::new(CfStatus::Range, format!("policy {kind} was not run")))?;
        write(carbon_g, report.total_carbon_g)?;
        write(savings_pct, report.savings_pct)
    })
}

/// Write `outcome.json` and one decision log per policy into `dir`.
///
/// # Safety
/// `outcome` must come from this library and `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_outcome_write(outcome: *const CfOutcome, dir: *const c_char) -> CfStatus {
    guard(|| {
        let o = &borrow(outcome, "outcome")?.0;
        let dir = text(dir, "dir")?;
        Ok(o.write_to_dir(Path::new(dir))?)
    })
}

/// # Safety
/// `outcome` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cf_outcome_free(outcome: *mut CfOutcome) {
    release(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_codes() {
        let code = |e: Error| Failure::from(e).status;
        assert_eq!(code(Error::Range("x".into())), CfStatus::Range);
        assert_eq!(code(Error::UnknownProfile("p".into())), CfStatus::Parse);
        assert_eq!(code(Error::EmptyKnowledgeBase), CfStatus::Infeasible);
        assert_eq!(code(Error::TooLarge { states: 2, limit: 1 }), CfStatus::Invalid);
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, CfStatus::Panic);
        let mut buf = vec![0 as c_char; cf_last_error_length()];
        let n = unsafe { cf_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }
}
