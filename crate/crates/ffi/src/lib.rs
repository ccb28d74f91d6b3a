//! C interface to the adplan solvers and planner.
//!
//! Every fallible function returns an [`AdplanStatus`]. On failure a message
//! is stored for the calling thread; read it with [`adplan_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use adplan::io::{emit_plan, ConfigMap, RunConfig};
use adplan::model::{Goal, LpProblem, Relation, Sense, TransportationInstance};
use adplan::solver::{solve_simplex, solve_transportation, SolverSettings, Status};
use adplan::Error;
use libc::{c_char, c_int, size_t};

/// Result of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdplanStatus {
    Ok = 0,
    /// The model has no feasible point.
    Infeasible = 1,
    /// The objective is unbounded.
    Unbounded = 2,
    InvalidArgument = 3,
    NullPointer = 4,
    /// Malformed input file.
    Parse = 5,
    Io = 6,
    IterationLimit = 7,
    Internal = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Constraint relation codes for [`adplan_lp_add_constraint`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdplanRelation {
    Le = 0,
    Ge = 1,
    Eq = 2,
}

/// Optimization direction codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdplanSense {
    Maximize = 0,
    Minimize = 1,
}

/// Linear program over non-negative variables.
pub struct AdplanLp {
    problem: LpProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(AdplanStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Infeasible => AdplanStatus::Infeasible,
            Error::Unbounded => AdplanStatus::Unbounded,
            Error::Argument(_) | Error::Domain(_) | Error::Model(_) | Error::Contract(_) => {
                AdplanStatus::InvalidArgument
            }
            Error::Parse { .. } => AdplanStatus::Parse,
            Error::Io(_) => AdplanStatus::Io,
            Error::IterationLimit { .. } => AdplanStatus::IterationLimit,
            Error::Numerical(_) | Error::Internal(_) => AdplanStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AdplanStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AdplanStatus::InvalidArgument, message.into())
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdplanStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(AdplanStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            set_error(String::new());
            AdplanStatus::Ok
        }
        Err(Failure(status, message)) => {
            set_error(message);
            status
        }
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn input<'a>(p: *const f64, n: size_t, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn sense(code: c_int) -> Result<Sense, Failure> {
    match code {
        c if c == AdplanSense::Maximize as c_int => Ok(Sense::Maximize),
        c if c == AdplanSense::Minimize as c_int => Ok(Sense::Minimize),
        c => Err(invalid(format!("unknown sense code {c}"))),
    }
}

fn relation(code: c_int) -> Result<Relation, Failure> {
    match code {
        c if c == AdplanRelation::Le as c_int => Ok(Relation::Le),
        c if c == AdplanRelation::Ge as c_int => Ok(Relation::Ge),
        c if c == AdplanRelation::Eq as c_int => Ok(Relation::Eq),
        c => Err(invalid(format!("unknown relation code {c}"))),
    }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncated to `len` bytes. Returns the buffer size
/// needed for the whole message; 1 means no error is recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn adplan_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adplan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New problem with `num_vars` variables, a zero objective and no
/// constraints. `sense_code` is an [`AdplanSense`] code. Returns null on an
/// invalid sense.
#[no_mangle]
pub extern "C" fn adplan_lp_new(num_vars: size_t, sense_code: c_int) -> *mut AdplanLp {
    let mut lp = ptr::null_mut();
    guard(|| {
        let problem = LpProblem::new(num_vars, sense(sense_code)?);
        lp = Box::into_raw(Box::new(AdplanLp { problem }));
        Ok(())
    });
    lp
}

/// # Safety
/// `lp` must be null or a handle from [`adplan_lp_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_free(lp: *mut AdplanLp) {
    if !lp.is_null() {
        drop(Box::from_raw(lp));
    }
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `lp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_num_vars(lp: *const AdplanLp) -> size_t {
    lp.as_ref().map_or(0, |lp| lp.problem.num_vars())
}

/// Number of constraints, or 0 for a null handle.
///
/// # Safety
/// `lp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_num_constraints(lp: *const AdplanLp) -> size_t {
    lp.as_ref().map_or(0, |lp| lp.problem.rows.len())
}

/// Sets the objective coefficients; `len` must equal the variable count.
///
/// # Safety
/// `lp` must be a live handle and `coeffs` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_set_objective(lp: *mut AdplanLp, coeffs: *const f64, len: size_t) -> AdplanStatus {
    guard(|| {
        let lp = lp.as_mut().ok_or_else(|| null("lp"))?;
        let c = input(coeffs, len, "coeffs")?;
        if c.len() != lp.problem.num_vars() {
            return Err(invalid(format!(
                "objective has {} coefficients for {} variables",
                c.len(),
                lp.problem.num_vars()
            )));
        }
        if !c.iter().all(|v| v.is_finite()) {
            return Err(invalid("objective coefficients must be finite"));
        }
        lp.problem.objective = c.to_vec();
        Ok(())
    })
}

/// Appends the dense row `coeffs · x (relation) rhs`; `relation` is an
/// [`AdplanRelation`] code.
///
/// # Safety
/// `lp` must be a live handle and `coeffs` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_add_constraint(
    lp: *mut AdplanLp,
    coeffs: *const f64,
    len: size_t,
    relation_code: c_int,
    rhs: f64,
) -> AdplanStatus {
    guard(|| {
        let lp = lp.as_mut().ok_or_else(|| null("lp"))?;
        let a = input(coeffs, len, "coeffs")?;
        if a.len() != lp.problem.num_vars() {
            return Err(invalid(format!(
                "row has {} coefficients for {} variables",
                a.len(),
                lp.problem.num_vars()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) || !rhs.is_finite() {
            return Err(invalid("row coefficients and right-hand side must be finite"));
        }
        lp.problem.add_dense_row(a, relation(relation_code)?, rhs);
        Ok(())
    })
}

/// Solves the problem with the two-phase simplex. On [`AdplanStatus::Ok`]
/// writes the optimal point to `values` (if not null; `len` must equal the
/// variable count) and the objective to `objective` (if not null).
/// Infeasible and unbounded problems return their status codes.
///
/// # Safety
/// `lp` must be a live handle; `values` must be null or point to `len`
/// writable values; `objective` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn adplan_lp_solve(
    lp: *const AdplanLp,
    values: *mut f64,
    len: size_t,
    objective: *mut f64,
) -> AdplanStatus {
    guard(|| {
        let lp = lp.as_ref().ok_or_else(|| null("lp"))?;
        if !values.is_null() && len != lp.problem.num_vars() {
            return Err(invalid(format!(
                "output holds {len} values for {} variables",
                lp.problem.num_vars()
            )));
        }
        let sol = solve_simplex(&lp.problem, &SolverSettings::default())?;
        match sol.status {
            Status::Infeasible => return Err(Error::Infeasible.into()),
            Status::Unbounded => return Err(Error::Unbounded.into()),
            Status::Optimal => {}
        }
        if !values.is_null() {
            slice::from_raw_parts_mut(values, len).copy_from_slice(&sol.values);
        }
        if let Some(o) = objective.as_mut() {
            *o = sol.objective;
        }
        Ok(())
    })
}

/// Solves a balanced transportation problem with the stepping-stone method.
/// `values` is the row-major `m × n` matrix of unit costs (or profits for
/// [`AdplanSense::Maximize`]); `flows`, when not null, receives the
/// row-major optimal shipment.
///
/// # Safety
/// `supplies` and `demands` must point to `m` and `n` values, `values` and
/// `flows` (if not null) to `m·n`, and `objective` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn adplan_transport_solve(
    supplies: *const f64,
    m: size_t,
    demands: *const f64,
    n: size_t,
    values: *const f64,
    sense_code: c_int,
    flows: *mut f64,
    objective: *mut f64,
) -> AdplanStatus {
    guard(|| {
        let s = input(supplies, m, "supplies")?;
        let d = input(demands, n, "demands")?;
        let cells = m.checked_mul(n).ok_or_else(|| invalid("m·n overflows"))?;
        let v = input(values, cells, "values")?;
        let goal = match sense(sense_code)? {
            Sense::Maximize => Goal::Maximize,
            Sense::Minimize => Goal::Minimize,
        };
        let rows = if n == 0 { Vec::new() } else { v.chunks(n).map(<[f64]>::to_vec).collect() };
        let t = TransportationInstance::new(s.to_vec(), d.to_vec(), rows, goal)?;
        let sol = solve_transportation(&t, &SolverSettings::default())?;
        if !flows.is_null() {
            slice::from_raw_parts_mut(flows, cells).copy_from_slice(&sol.values);
        }
        if let Some(o) = objective.as_mut() {
            *o = sol.objective;
        }
        Ok(())
    })
}

/// Runs one planning cycle from a `key = value` configuration file and
/// writes the plan CSV. `plan_out`, when not null, overrides the configured
/// output path; `objective`, when not null, receives the planned revenue.
///
/// # Safety
/// `config_path` and `plan_out` must be null or NUL-terminated strings and
/// `objective` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn adplan_plan_files(
    config_path: *const c_char,
    plan_out: *const c_char,
    objective: *mut f64,
) -> AdplanStatus {
    guard(|| {
        let path = PathBuf::from(string(config_path, "config_path")?);
        let mut map = ConfigMap::load(&path)?;
        if !plan_out.is_null() {
            map.set("plan_out", string(plan_out, "plan_out")?, "plan_out");
        }
        let cfg = RunConfig::from_map(&map)?;
        let (plan, diag) = adplan::cli::plan_once(&cfg)?;
        emit_plan(&plan, &cfg.paths.plan_out)?;
        if let Some(o) = objective.as_mut() {
            *o = diag.objective;
        }
        Ok(())
    })
}
