//! C interface: opaque planner and result handles, status codes, and a
//! per-thread error message.
//!
//! Every function returns a [`TpStatus`]; on failure the message is available
//! from [`tp_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use throwplan::brt::MlpClassifier;
use throwplan::flight::BrtDataset;
use throwplan::hedgehog::VelocityHedgehog;
use throwplan::kinematics::{forward_position, ArmModel, JointVector, Vec3, NUM_JOINTS};
use throwplan::planner::{Planner, PlannerError, ThrowConfiguration, ThrowQuery};
use throwplan::sim::{throw_and_fly, SimConfig};
use throwplan::trajectory::BoundaryState;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    NoSolution = 4,
    OutOfRange = 5,
    Internal = 6,
}

/// Loaded planner. Safe to share between threads for planning.
pub struct TpPlanner {
    inner: Planner,
}

/// Configurations returned by one planning call.
pub struct TpPlanResult {
    plans: Vec<ThrowConfiguration>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TpThrowConfig {
    pub q: [f64; 7],
    pub qd: [f64; 7],
    /// Arm base origin, world frame.
    pub base: [f64; 3],
    pub base_yaw: f64,
    pub release: [f64; 3],
    pub velocity: [f64; 3],
    pub phi: f64,
    pub gamma: f64,
    pub f_brt: f64,
    /// Smallest joint or tube margin; positive when strictly feasible.
    pub min_margin: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TpSimOutcome {
    pub success: bool,
    pub landing_point: [f64; 3],
    pub flight_time: f64,
    pub miss_distance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: TpStatus, msg: impl Into<String>) -> TpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TpStatus) -> TpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TpStatus::Internal, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, TpStatus> {
    if p.is_null() {
        return Err(fail(TpStatus::NullPointer, format!("{what} is null")));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(
            TpStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )),
    }
}

unsafe fn vec3_arg(p: *const f64) -> Vec3 {
    let s = std::slice::from_raw_parts(p, 3);
    Vec3::new(s[0], s[1], s[2])
}

/// Message for the last failure on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release point of the default arm at joint angles `q` (7 values) into `out_xyz`.
///
/// # Safety
/// `q` must point to 7 doubles and `out_xyz` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tp_arm_forward(q: *const f64, out_xyz: *mut f64) -> TpStatus {
    guard(|| {
        if q.is_null() || out_xyz.is_null() {
            return fail(TpStatus::NullPointer, "null argument");
        }
        let q = JointVector::from_column_slice(std::slice::from_raw_parts(q, NUM_JOINTS));
        if q.iter().any(|v| !v.is_finite()) {
            return fail(TpStatus::InvalidArgument, "non-finite joint angle");
        }
        let p = forward_position(&ArmModel::panda(), &q);
        std::slice::from_raw_parts_mut(out_xyz, 3).copy_from_slice(p.as_slice());
        TpStatus::Ok
    })
}

/// Loads a planner from the artifacts written by the command-line tool.
/// `arm_path` may be null for the bundled arm.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_planner_load(
    hedgehog_path: *const c_char,
    brt_path: *const c_char,
    model_path: *const c_char,
    arm_path: *const c_char,
    out: *mut *mut TpPlanner,
) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return fail(TpStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let paths = (|| {
            Ok::<_, TpStatus>((
                path_arg(hedgehog_path, "hedgehog_path")?,
                path_arg(brt_path, "brt_path")?,
                path_arg(model_path, "model_path")?,
            ))
        })();
        let (hp, bp, mp) = match paths {
            Ok(p) => p,
            Err(s) => return s,
        };
        let arm = if arm_path.is_null() {
            ArmModel::panda()
        } else {
            let ap = match path_arg(arm_path, "arm_path") {
                Ok(p) => p,
                Err(s) => return s,
            };
            match ArmModel::load(&ap) {
                Ok(a) => a,
                Err(e) => return fail(TpStatus::Io, format!("{}: {e}", ap.display())),
            }
        };
        let hedgehog = match VelocityHedgehog::read(&hp) {
            Ok(h) => h,
            Err(e) => return fail(TpStatus::Io, format!("{}: {e}", hp.display())),
        };
        let data = match BrtDataset::read(&bp) {
            Ok(d) => d,
            Err(e) => return fail(TpStatus::Io, format!("{}: {e}", bp.display())),
        };
        let model = match MlpClassifier::load(&mp) {
            Ok(m) => m,
            Err(e) => return fail(TpStatus::Io, format!("{}: {e}", mp.display())),
        };
        let planner = Planner::new(
            arm,
            hedgehog,
            &data.positives,
            Box::new(model),
            data.meta.flight,
            data.meta.target_set,
        );
        *out = Box::into_raw(Box::new(TpPlanner { inner: planner }));
        TpStatus::Ok
    })
}

/// # Safety
/// `planner` must be null or a handle from [`tp_planner_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_planner_free(planner: *mut TpPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Plans configurations throwing into a box at `target` from a base at `base`
/// (3 doubles each). `limit` caps the number of results; 0 means no cap.
///
/// # Safety
/// `planner` must be a live handle, `target` and `base` must point to 3 doubles
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_planner_plan(
    planner: *const TpPlanner,
    target: *const f64,
    base: *const f64,
    limit: usize,
    out: *mut *mut TpPlanResult,
) -> TpStatus {
    guard(|| {
        if planner.is_null() || target.is_null() || base.is_null() || out.is_null() {
            return fail(TpStatus::NullPointer, "null argument");
        }
        *out = std::ptr::null_mut();
        let query = ThrowQuery::new(vec3_arg(target), vec3_arg(base));
        let limit = (limit > 0).then_some(limit);
        match (*planner).inner.plan(&query, limit) {
            Ok(plans) => {
                *out = Box::into_raw(Box::new(TpPlanResult { plans }));
                TpStatus::Ok
            }
            Err(PlannerError::NoSolution) => {
                fail(TpStatus::NoSolution, PlannerError::NoSolution.to_string())
            }
            Err(e @ PlannerError::InvalidQuery(_)) => {
                fail(TpStatus::InvalidArgument, e.to_string())
            }
            Err(e) => fail(TpStatus::Internal, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be null or a handle from [`tp_planner_plan`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_result_free(result: *mut TpPlanResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of configurations in `result`; 0 for null.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_result_len(result: *const TpPlanResult) -> usize {
    if result.is_null() {
        0
    } else {
        (*result).plans.len()
    }
}

fn to_c(cfg: &ThrowConfiguration) -> TpThrowConfig {
    let mut c = TpThrowConfig::default();
    c.q.copy_from_slice(cfg.q.as_slice());
    c.qd.copy_from_slice(cfg.qd.as_slice());
    c.base.copy_from_slice(cfg.base.as_slice());
    c.release.copy_from_slice(cfg.release.as_slice());
    c.velocity.copy_from_slice(cfg.velocity.as_slice());
    c.base_yaw = cfg.base_yaw;
    c.phi = cfg.phi;
    c.gamma = cfg.gamma;
    c.f_brt = cfg.f_brt;
    c.min_margin = cfg.margins.min();
    c
}

/// Copies configuration `index` into `out`.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_result_get(
    result: *const TpPlanResult,
    index: usize,
    out: *mut TpThrowConfig,
) -> TpStatus {
    guard(|| {
        if result.is_null() || out.is_null() {
            return fail(TpStatus::NullPointer, "null argument");
        }
        let plans = &(&*result).plans;
        match plans.get(index) {
            Some(cfg) => {
                *out = to_c(cfg);
                TpStatus::Ok
            }
            None => fail(
                TpStatus::OutOfRange,
                format!("index {index} out of range ({} results)", plans.len()),
            ),
        }
    })
}

/// Moves the arm from rest at `start_q` (7 doubles) to configuration `index`,
/// releases the ball and simulates its flight into the target box.
///
/// # Safety
/// Handles must be live, `start_q` must point to 7 doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_result_simulate(
    planner: *const TpPlanner,
    result: *const TpPlanResult,
    index: usize,
    start_q: *const f64,
    out: *mut TpSimOutcome,
) -> TpStatus {
    guard(|| {
        if planner.is_null() || result.is_null() || start_q.is_null() || out.is_null() {
            return fail(TpStatus::NullPointer, "null argument");
        }
        let Some(cfg) = (&*result).plans.get(index) else {
            return fail(TpStatus::OutOfRange, format!("index {index} out of range"));
        };
        let start = BoundaryState {
            q: JointVector::from_column_slice(std::slice::from_raw_parts(start_q, NUM_JOINTS)),
            qd: JointVector::zeros(),
        };
        match throw_and_fly(&(*planner).inner, &start, cfg, &SimConfig::default()) {
            Ok(r) => {
                let mut o = TpSimOutcome {
                    success: r.success,
                    flight_time: r.flight_time,
                    miss_distance: r.miss_distance,
                    ..Default::default()
                };
                o.landing_point.copy_from_slice(r.landing_point.as_slice());
                *out = o;
                TpStatus::Ok
            }
            Err(e) => fail(TpStatus::InvalidArgument, e.to_string()),
        }
    })
}
