//! C ABI over the gcsync core: opaque handles, status codes, and a
//! thread-local error string.
//!
//! Every function is null-safe and catches panics at the boundary. Pointers
//! returned through `out` parameters are owned by the caller and must be
//! released with the matching `gcs_*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gcsync::cli::ScenarioConfig;
use gcsync::numkit::Mat;
use gcsync::sim::{self, Scenario, SimError, Trajectory};
use gcsync::synthesis::{self, ProtocolGains, SynthesisError};

/// Result of every fallible call. `GCS_STATUS_OK` is zero; anything else
/// leaves a message readable through `gcs_last_error`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GcsStatus {
    Ok = 0,
    /// Null pointer, wrong dimension, or malformed input.
    InvalidArgument = 1,
    /// The scenario text does not parse.
    ParseError = 2,
    /// The design or analysis criteria admit no certificate.
    Infeasible = 3,
    /// The cost budget cannot cover synchronizing the network.
    BudgetTooSmall = 4,
    /// The simulated network left the representable range.
    Diverged = 5,
    /// Unexpected internal failure.
    InternalError = 6,
}

/// A parsed scenario: model, topology, weights, budget, run settings.
pub struct GcsScenario(ScenarioConfig);

/// A protocol gain pair.
pub struct GcsGains(ProtocolGains);

/// A finished closed-loop run.
pub struct GcsTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: GcsStatus, msg: &str) -> GcsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> GcsStatus) -> GcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(GcsStatus::InternalError, "internal panic crossed the boundary"),
    }
}

fn synthesis_status(e: &SynthesisError) -> GcsStatus {
    match e {
        SynthesisError::BudgetTooSmall { .. } => GcsStatus::BudgetTooSmall,
        SynthesisError::Infeasible { .. }
        | SynthesisError::NotConverged { .. }
        | SynthesisError::Lmi(_)
        | SynthesisError::Num(_) => GcsStatus::Infeasible,
        _ => GcsStatus::InvalidArgument,
    }
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> GcsStatus {
    if out.is_null() {
        return fail(GcsStatus::InvalidArgument, "out pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    GcsStatus::Ok
}

unsafe fn scenario_ref<'a>(s: *const GcsScenario) -> Result<&'a ScenarioConfig, GcsStatus> {
    s.as_ref()
        .map(|s| &s.0)
        .ok_or_else(|| fail(GcsStatus::InvalidArgument, "scenario handle is null"))
}

struct Built {
    model: gcsync::synthesis::AgentModel,
    topology: gcsync::topology::Topology,
    weights: gcsync::synthesis::CostWeights,
    x0: Vec<f64>,
    phi0: Option<Vec<f64>>,
}

fn build(cfg: &ScenarioConfig) -> Result<Built, GcsStatus> {
    let err = |e: String| fail(GcsStatus::InvalidArgument, &e);
    Ok(Built {
        model: cfg.build_model().map_err(err)?,
        topology: cfg.build_topology().map_err(err)?,
        weights: cfg.build_weights().map_err(err)?,
        x0: cfg.stacked_initial_states().map_err(err)?,
        phi0: cfg.stacked_protocol_states().map_err(err)?,
    })
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn gcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a scenario from TOML text into a new handle.
///
/// # Safety
/// `toml_text` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gcs_scenario_parse(
    toml_text: *const c_char,
    out: *mut *mut GcsScenario,
) -> GcsStatus {
    guard(|| {
        if toml_text.is_null() {
            return fail(GcsStatus::InvalidArgument, "toml_text is null");
        }
        let text = match CStr::from_ptr(toml_text).to_str() {
            Ok(t) => t,
            Err(_) => return fail(GcsStatus::InvalidArgument, "toml_text is not UTF-8"),
        };
        match ScenarioConfig::parse(text) {
            Ok(cfg) => write_out(out, GcsScenario(cfg)),
            Err(e) => fail(GcsStatus::ParseError, &e),
        }
    })
}

/// Releases a scenario handle. Null is ignored.
///
/// # Safety
/// `s` must come from `gcs_scenario_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gcs_scenario_free(s: *mut GcsScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Reports agent count, per-agent state dimension, input dimension, and the
/// configured budget. Any output pointer may be null to skip that field.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_scenario_info(
    s: *const GcsScenario,
    agents: *mut u32,
    state_dim: *mut u32,
    input_dim: *mut u32,
    budget: *mut f64,
) -> GcsStatus {
    guard(|| {
        let cfg = match scenario_ref(s) {
            Ok(c) => c,
            Err(st) => return st,
        };
        if !agents.is_null() {
            *agents = cfg.topology.agents as u32;
        }
        if !state_dim.is_null() {
            *state_dim = cfg.model.n as u32;
        }
        if !input_dim.is_null() {
            *input_dim = cfg.model.m as u32;
        }
        if !budget.is_null() {
            *budget = cfg.budget;
        }
        GcsStatus::Ok
    })
}

/// Replaces the scenario's cost budget.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_scenario_set_budget(s: *mut GcsScenario, budget: f64) -> GcsStatus {
    guard(|| match s.as_mut() {
        Some(s) if budget.is_finite() && budget > 0.0 => {
            s.0.budget = budget;
            GcsStatus::Ok
        }
        Some(_) => fail(GcsStatus::InvalidArgument, "budget must be positive and finite"),
        None => fail(GcsStatus::InvalidArgument, "scenario handle is null"),
    })
}

/// Replaces the integration step and horizon used by `gcs_simulate`.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_scenario_set_sim(
    s: *mut GcsScenario,
    dt: f64,
    horizon: f64,
) -> GcsStatus {
    guard(|| match s.as_mut() {
        Some(s) if dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite() => {
            s.0.sim.dt = dt;
            s.0.sim.horizon = horizon;
            GcsStatus::Ok
        }
        Some(_) => fail(GcsStatus::InvalidArgument, "dt and horizon must be positive"),
        None => fail(GcsStatus::InvalidArgument, "scenario handle is null"),
    })
}

/// Designs certified protocol gains for the scenario under its budget.
/// On success `out` receives a new gains handle.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gcs_design(s: *const GcsScenario, out: *mut *mut GcsGains) -> GcsStatus {
    guard(|| {
        let cfg = match scenario_ref(s) {
            Ok(c) => c,
            Err(st) => return st,
        };
        let parts = match build(cfg) {
            Ok(p) => p,
            Err(st) => return st,
        };
        let report = match synthesis::design(
            &parts.model,
            &parts.topology,
            &parts.weights,
            &parts.x0,
            cfg.budget,
            &cfg.solver_options(),
        ) {
            Ok(r) => r,
            Err(e) => return fail(synthesis_status(&e), &e.to_string()),
        };
        if !report.certified {
            return fail(GcsStatus::Infeasible, "designed gains failed certification");
        }
        write_out(out, GcsGains(report.gains))
    })
}

/// Builds a gains handle from row-major matrices: `ku` drives the inputs
/// from the protocol state, `kphi` injects the measured output error.
///
/// # Safety
/// `ku` must point to `ku_rows * ku_cols` doubles and `kphi` to
/// `kphi_rows * kphi_cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gcs_gains_from_data(
    ku_rows: u32,
    ku_cols: u32,
    ku: *const f64,
    kphi_rows: u32,
    kphi_cols: u32,
    kphi: *const f64,
    out: *mut *mut GcsGains,
) -> GcsStatus {
    guard(|| {
        if ku.is_null() || kphi.is_null() {
            return fail(GcsStatus::InvalidArgument, "gain data pointer is null");
        }
        let grab = |rows: u32, cols: u32, ptr: *const f64| -> Result<Mat, GcsStatus> {
            let len = rows as usize * cols as usize;
            if len == 0 {
                return Err(fail(GcsStatus::InvalidArgument, "gain matrices cannot be empty"));
            }
            let data = std::slice::from_raw_parts(ptr, len).to_vec();
            Mat::from_row_major(rows as usize, cols as usize, data)
                .map_err(|e| fail(GcsStatus::InvalidArgument, &e.to_string()))
        };
        let ku = match grab(ku_rows, ku_cols, ku) {
            Ok(m) => m,
            Err(st) => return st,
        };
        let kphi = match grab(kphi_rows, kphi_cols, kphi) {
            Ok(m) => m,
            Err(st) => return st,
        };
        write_out(out, GcsGains(ProtocolGains { ku, kphi }))
    })
}

/// Reports the dimensions of both gain matrices. Output pointers may be
/// null to skip fields.
///
/// # Safety
/// `g` must be a live gains handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_gains_dims(
    g: *const GcsGains,
    ku_rows: *mut u32,
    ku_cols: *mut u32,
    kphi_rows: *mut u32,
    kphi_cols: *mut u32,
) -> GcsStatus {
    guard(|| {
        let g = match g.as_ref() {
            Some(g) => g,
            None => return fail(GcsStatus::InvalidArgument, "gains handle is null"),
        };
        if !ku_rows.is_null() {
            *ku_rows = g.0.ku.rows() as u32;
        }
        if !ku_cols.is_null() {
            *ku_cols = g.0.ku.cols() as u32;
        }
        if !kphi_rows.is_null() {
            *kphi_rows = g.0.kphi.rows() as u32;
        }
        if !kphi_cols.is_null() {
            *kphi_cols = g.0.kphi.cols() as u32;
        }
        GcsStatus::Ok
    })
}

/// Copies both gain matrices out in row-major order. Each buffer length
/// must exactly match rows x cols of that matrix.
///
/// # Safety
/// `g` must be live; `ku_out` and `kphi_out` must point to writable buffers
/// of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gcs_gains_copy(
    g: *const GcsGains,
    ku_out: *mut f64,
    ku_len: usize,
    kphi_out: *mut f64,
    kphi_len: usize,
) -> GcsStatus {
    guard(|| {
        let g = match g.as_ref() {
            Some(g) => g,
            None => return fail(GcsStatus::InvalidArgument, "gains handle is null"),
        };
        if ku_out.is_null() || kphi_out.is_null() {
            return fail(GcsStatus::InvalidArgument, "output buffer is null");
        }
        let copy = |m: &Mat, out: *mut f64, len: usize, what: &str| -> Result<(), GcsStatus> {
            if len != m.rows() * m.cols() {
                return Err(fail(
                    GcsStatus::InvalidArgument,
                    &format!("{what} buffer holds {len}, need {}", m.rows() * m.cols()),
                ));
            }
            let out = std::slice::from_raw_parts_mut(out, len);
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    out[i * m.cols() + j] = m.get(i, j);
                }
            }
            Ok(())
        };
        if let Err(st) = copy(&g.0.ku, ku_out, ku_len, "ku") {
            return st;
        }
        if let Err(st) = copy(&g.0.kphi, kphi_out, kphi_len, "kphi") {
            return st;
        }
        GcsStatus::Ok
    })
}

/// Releases a gains handle. Null is ignored.
///
/// # Safety
/// `g` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gcs_gains_free(g: *mut GcsGains) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Checks the gains against the scenario's criteria. On `GCS_STATUS_OK`
/// the guaranteed cost bound is stored in `cost_bound` (if non-null).
///
/// # Safety
/// `s` and `g` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn gcs_analyze(
    s: *const GcsScenario,
    g: *const GcsGains,
    cost_bound: *mut f64,
) -> GcsStatus {
    guard(|| {
        let cfg = match scenario_ref(s) {
            Ok(c) => c,
            Err(st) => return st,
        };
        let g = match g.as_ref() {
            Some(g) => g,
            None => return fail(GcsStatus::InvalidArgument, "gains handle is null"),
        };
        let parts = match build(cfg) {
            Ok(p) => p,
            Err(st) => return st,
        };
        match synthesis::analyze_with(
            &parts.model,
            &parts.topology,
            &parts.weights,
            &g.0,
            &parts.x0,
            cfg.budget,
            &cfg.solver_options(),
        ) {
            Ok(cert) => {
                if !cost_bound.is_null() {
                    *cost_bound = cert.cost_bound;
                }
                GcsStatus::Ok
            }
            Err(e) => fail(synthesis_status(&e), &e.to_string()),
        }
    })
}

/// Integrates the closed loop with the scenario's step and horizon.
/// `GCS_STATUS_DIVERGED` means the states left the representable range.
///
/// # Safety
/// `s` and `g` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gcs_simulate(
    s: *const GcsScenario,
    g: *const GcsGains,
    out: *mut *mut GcsTrajectory,
) -> GcsStatus {
    guard(|| {
        let cfg = match scenario_ref(s) {
            Ok(c) => c,
            Err(st) => return st,
        };
        let g = match g.as_ref() {
            Some(g) => g,
            None => return fail(GcsStatus::InvalidArgument, "gains handle is null"),
        };
        let parts = match build(cfg) {
            Ok(p) => p,
            Err(st) => return st,
        };
        let scenario = match Scenario::new(
            parts.model,
            parts.topology,
            parts.weights,
            g.0.clone(),
            parts.x0,
            parts.phi0,
            cfg.sim.dt,
            cfg.sim.horizon,
        ) {
            Ok(sc) => sc,
            Err(e) => return fail(GcsStatus::InvalidArgument, &e.to_string()),
        };
        match sim::integrate(&scenario) {
            Ok(t) => write_out(out, GcsTrajectory(t)),
            Err(e @ SimError::NumericalBlowup { .. }) => fail(GcsStatus::Diverged, &e.to_string()),
            Err(e) => fail(GcsStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Number of stored samples, including the initial condition. Zero for a
/// null handle.
///
/// # Safety
/// `t` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_samples(t: *const GcsTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.0.times.len())
}

/// Reports agent count and per-agent state dimension of a trajectory.
///
/// # Safety
/// `t` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_dims(
    t: *const GcsTrajectory,
    agents: *mut u32,
    state_dim: *mut u32,
) -> GcsStatus {
    guard(|| {
        let t = match t.as_ref() {
            Some(t) => t,
            None => return fail(GcsStatus::InvalidArgument, "trajectory handle is null"),
        };
        if !agents.is_null() {
            *agents = t.0.n_agents as u32;
        }
        if !state_dim.is_null() {
            *state_dim = t.0.state_dim as u32;
        }
        GcsStatus::Ok
    })
}

/// Reads the time stamp and running cost of sample `index`. Either output
/// pointer may be null.
///
/// # Safety
/// `t` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_sample(
    t: *const GcsTrajectory,
    index: usize,
    time: *mut f64,
    cost: *mut f64,
) -> GcsStatus {
    guard(|| {
        let t = match t.as_ref() {
            Some(t) => t,
            None => return fail(GcsStatus::InvalidArgument, "trajectory handle is null"),
        };
        if index >= t.0.times.len() {
            return fail(
                GcsStatus::InvalidArgument,
                &format!("sample {index} out of range 0..{}", t.0.times.len()),
            );
        }
        if !time.is_null() {
            *time = t.0.times[index];
        }
        if !cost.is_null() {
            *cost = t.0.cost_running[index];
        }
        GcsStatus::Ok
    })
}

/// Copies the stacked agent states of sample `index`; `len` must equal
/// agents x state_dim.
///
/// # Safety
/// `t` must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_states(
    t: *const GcsTrajectory,
    index: usize,
    out: *mut f64,
    len: usize,
) -> GcsStatus {
    guard(|| {
        let t = match t.as_ref() {
            Some(t) => t,
            None => return fail(GcsStatus::InvalidArgument, "trajectory handle is null"),
        };
        if out.is_null() {
            return fail(GcsStatus::InvalidArgument, "output buffer is null");
        }
        if index >= t.0.states.len() {
            return fail(
                GcsStatus::InvalidArgument,
                &format!("sample {index} out of range 0..{}", t.0.states.len()),
            );
        }
        let states = &t.0.states[index];
        if len != states.len() {
            return fail(
                GcsStatus::InvalidArgument,
                &format!("state buffer holds {len}, need {}", states.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(states);
        GcsStatus::Ok
    })
}

/// Accumulated quadratic cost at the final sample.
///
/// # Safety
/// `t` must be a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_final_cost(
    t: *const GcsTrajectory,
    out: *mut f64,
) -> GcsStatus {
    guard(|| {
        let t = match t.as_ref() {
            Some(t) => t,
            None => return fail(GcsStatus::InvalidArgument, "trajectory handle is null"),
        };
        if out.is_null() {
            return fail(GcsStatus::InvalidArgument, "out pointer is null");
        }
        *out = t.0.final_cost();
        GcsStatus::Ok
    })
}

/// Releases a trajectory handle. Null is ignored.
///
/// # Safety
/// `t` must come from `gcs_simulate` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gcs_trajectory_free(t: *mut GcsTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
