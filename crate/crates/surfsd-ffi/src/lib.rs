//! C ABI for the surfsd solver.
//!
//! Conventions:
//!
//! * Handles (`sd_config`, `sd_solve_result`) are opaque pointers owned by
//!   the library; free them with the matching `*_free` function. A null
//!   return signals failure.
//! * Functions returning `sd_status` report `SD_STATUS_OK` (0) on
//!   success; error details for the calling thread are retrievable with
//!   `sd_last_error_message`.
//! * All inputs are read-only and copied where needed; the library never
//!   retains caller memory. Handles must not be shared across threads
//!   without external synchronization.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use surfsd::cli::{run_condition, run_convergence, run_layer, run_solve, RunConfig, SolveSummary};

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    /// Configuration could not be read, parsed or validated.
    ConfigError = 2,
    /// Geometry, assembly or solver failure.
    NumericalError = 3,
    /// Null pointer, invalid UTF-8 or an undersized buffer.
    InvalidArgument = 4,
    /// A panic was caught at the boundary (library bug; see message).
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &surfsd::Error) -> SdStatus {
    match err.exit_code() {
        2 => SdStatus::ConfigError,
        _ => SdStatus::NumericalError,
    }
}

/// Copy the last error message of this thread into `buf` (NUL terminated,
/// truncated to `cap`). Returns the full message length in bytes,
/// excluding the terminator; call with `buf = NULL` to query the length.
///
/// # Safety
/// `buf` must be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sd_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque parsed run configuration.
pub struct SdConfig {
    inner: RunConfig,
}

/// Opaque result of a single solve.
pub struct SdSolveResult {
    inner: SolveSummary,
}

/// Scalar metrics of a solve, returned by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SdSolveMetrics {
    /// Background-mesh parameter (maximum tetrahedron diameter).
    pub h: f64,
    /// Number of active degrees of freedom.
    pub n_dofs: usize,
    /// Relative residual reached by the linear solver.
    pub residual: f64,
    /// Krylov iterations (1 for the dense path).
    pub iterations: usize,
    /// Streamline-diffusion and normal-gradient weights actually used.
    pub tau1: f64,
    pub tau2: f64,
    pub beta_inf: f64,
    /// Nonzero when the zero-mean constraint was active.
    pub mean_constraint: bool,
    /// Nonzero when the error norms below are meaningful (an exact
    /// solution was configured).
    pub has_errors: bool,
    pub l2_err: f64,
    pub h1t_err: f64,
    pub sd_err: f64,
    pub ns_err: f64,
    pub triple_err: f64,
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, SdStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(SdStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        SdStatus::InvalidArgument
    })
}

fn guard<T>(what: &str, f: impl FnOnce() -> Result<T, SdStatus>) -> Result<T, SdStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(_) => {
            set_error(&format!("panic inside {what}"));
            Err(SdStatus::Panic)
        }
    }
}

fn parse_config(text: &str) -> Result<*mut SdConfig, SdStatus> {
    match RunConfig::parse_str(text) {
        Ok(inner) => Ok(Box::into_raw(Box::new(SdConfig { inner }))),
        Err(e) => {
            set_error(&e.to_string());
            Err(SdStatus::ConfigError)
        }
    }
}

/// Parse a TOML run configuration from a file. Returns null on failure
/// (see `sd_last_error_message`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_config_load(path: *const c_char) -> *mut SdConfig {
    guard("sd_config_load", || {
        let path = cstr(path, "path")?;
        match RunConfig::load(Path::new(path)) {
            Ok(inner) => Ok(Box::into_raw(Box::new(SdConfig { inner }))),
            Err(e) => {
                set_error(&e.to_string());
                Err(SdStatus::ConfigError)
            }
        }
    })
    .unwrap_or(std::ptr::null_mut())
}

/// Parse a TOML run configuration from a string. Returns null on failure.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_config_parse(text: *const c_char) -> *mut SdConfig {
    guard("sd_config_parse", || {
        let text = cstr(text, "text")?;
        parse_config(text)
    })
    .unwrap_or(std::ptr::null_mut())
}

/// Free a configuration handle (null is a no-op).
///
/// # Safety
/// `cfg` must be a pointer returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sd_config_free(cfg: *mut SdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn run_with_config<T>(
    cfg: *const SdConfig,
    out_dir: *const c_char,
    f: impl FnOnce(&RunConfig, &Path) -> Result<T, surfsd::Error>,
) -> Result<T, SdStatus> {
    if cfg.is_null() {
        set_error("config is null");
        return Err(SdStatus::InvalidArgument);
    }
    let out = cstr(out_dir, "out_dir")?;
    f(&(*cfg).inner, Path::new(out)).map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })
}

/// Solve the configured problem, writing the solution surface and the
/// manifest into `out_dir`. Returns a result handle, or null on failure.
///
/// # Safety
/// `cfg` must be a live handle from this library and `out_dir` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_solve_run(
    cfg: *const SdConfig,
    out_dir: *const c_char,
) -> *mut SdSolveResult {
    guard("sd_solve_run", || {
        run_with_config(cfg, out_dir, run_solve)
            .map(|inner| Box::into_raw(Box::new(SdSolveResult { inner })))
    })
    .unwrap_or(std::ptr::null_mut())
}

/// Free a solve-result handle (null is a no-op).
///
/// # Safety
/// `result` must be a pointer returned by this library, freed at most
/// once.
#[no_mangle]
pub unsafe extern "C" fn sd_solve_result_free(result: *mut SdSolveResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Scalar metrics of a completed solve.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sd_solve_get_metrics(
    result: *const SdSolveResult,
    out: *mut SdSolveMetrics,
) -> SdStatus {
    match guard("sd_solve_metrics", || {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return Err(SdStatus::InvalidArgument);
        }
        let s = &(*result).inner;
        let e = s.errors;
        out.write(SdSolveMetrics {
            h: s.h,
            n_dofs: s.n_dofs,
            residual: s.report.final_residual,
            iterations: s.report.iterations,
            tau1: s.params.tau1,
            tau2: s.params.tau2,
            beta_inf: s.params.beta_inf,
            mean_constraint: s.mean_constraint,
            has_errors: e.is_some(),
            l2_err: e.map_or(0.0, |e| e.l2_err),
            h1t_err: e.map_or(0.0, |e| e.h1t_err),
            sd_err: e.map_or(0.0, |e| e.sd_err),
            ns_err: e.map_or(0.0, |e| e.ns_err),
            triple_err: e.map_or(0.0, |e| e.triple_err),
        });
        Ok(SdStatus::Ok)
    }) {
        Ok(s) => s,
        Err(s) => s,
    }
}

/// Number of solution values (active degrees of freedom).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_solve_solution_len(result: *const SdSolveResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.report.solution.len()
}

/// Copy the nodal solution values into a caller buffer of length `len`
/// (must be at least `sd_solve_solution_len`).
///
/// # Safety
/// `result` must be a live handle and `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_solve_solution_copy(
    result: *const SdSolveResult,
    buf: *mut f64,
    len: usize,
) -> SdStatus {
    match guard("sd_solve_solution_copy", || {
        if result.is_null() || buf.is_null() {
            set_error("null argument");
            return Err(SdStatus::InvalidArgument);
        }
        let sol = &(*result).inner.report.solution;
        if len < sol.len() {
            set_error(&format!("buffer holds {len} values, need {}", sol.len()));
            return Err(SdStatus::InvalidArgument);
        }
        std::ptr::copy_nonoverlapping(sol.as_ptr(), buf, sol.len());
        Ok(SdStatus::Ok)
    }) {
        Ok(s) => s,
        Err(s) => s,
    }
}

/// Run the refinement study; writes convergence.csv and the manifest.
///
/// # Safety
/// `cfg` must be a live handle from this library and `out_dir` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_run_convergence(
    cfg: *const SdConfig,
    out_dir: *const c_char,
) -> SdStatus {
    match guard("sd_run_convergence", || {
        run_with_config(cfg, out_dir, |c, o| run_convergence(c, o).map(|_| ()))
        .map(|()| SdStatus::Ok)
    }) {
        Ok(s) => s,
        Err(s) => s,
    }
}

/// Run the condition-number study; writes condition.csv and the manifest.
///
/// # Safety
/// `cfg` must be a live handle from this library and `out_dir` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_run_condition(
    cfg: *const SdConfig,
    out_dir: *const c_char,
) -> SdStatus {
    match guard("sd_run_condition", || {
        run_with_config(cfg, out_dir, |c, o| run_condition(c, o).map(|_| ()))
        .map(|()| SdStatus::Ok)
    }) {
        Ok(s) => s,
        Err(s) => s,
    }
}

/// Run the layer study; writes layer.csv, one VTK per parameter set and
/// the manifest.
///
/// # Safety
/// `cfg` must be a live handle from this library and `out_dir` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_run_layer(cfg: *const SdConfig, out_dir: *const c_char) -> SdStatus {
    match guard("sd_run_layer", || {
        run_with_config(cfg, out_dir, |c, o| run_layer(c, o).map(|_| ()))
            .map(|()| SdStatus::Ok)
    }) {
        Ok(s) => s,
        Err(s) => s,
    }
}
