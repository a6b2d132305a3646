use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use tempfile::TempDir;
use throwplan::brt::{train, TrainConfig};
use throwplan::flight::{BrtDataset, FlightParams, GenerationConfig, LandingTargetSet};
use throwplan::hedgehog::{generate_hedgehog, HedgehogGrids, DEFAULT_SIGMA_MIN, DEFAULT_SPEED_CAP};
use throwplan::kinematics::{forward_position, ArmModel, JointVector};
use throwplan::sim::home_state;
use throwplan_ffi::*;

struct Fixture {
    _dir: TempDir,
    hedgehog: CString,
    brt: CString,
    model: CString,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = |n: &str| dir.path().join(n);
        let ds = BrtDataset::generate(
            &LandingTargetSet::default(),
            &GenerationConfig::default(),
            &FlightParams::default(),
            1,
        )
        .unwrap();
        ds.write(&path("brt.csv")).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 1,
            ..Default::default()
        };
        let (model, _) = train(&ds, &cfg).unwrap();
        model.save(&path("model.json")).unwrap();
        let arm = ArmModel::panda();
        let h = generate_hedgehog(
            &arm,
            20_000,
            3,
            DEFAULT_SIGMA_MIN,
            &HedgehogGrids::default(),
            DEFAULT_SPEED_CAP,
        )
        .unwrap();
        h.write(&path("hedgehog.bin")).unwrap();
        let c = |p: PathBuf| CString::new(p.to_str().unwrap()).unwrap();
        Fixture {
            hedgehog: c(path("hedgehog.bin")),
            brt: c(path("brt.csv")),
            model: c(path("model.json")),
            _dir: dir,
        }
    })
}

fn load() -> *mut TpPlanner {
    let f = fixture();
    let mut p = ptr::null_mut();
    let s = unsafe {
        tp_planner_load(
            f.hedgehog.as_ptr(),
            f.brt.as_ptr(),
            f.model.as_ptr(),
            ptr::null(),
            &mut p,
        )
    };
    assert_eq!(s, TpStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    let p = tp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn forward_matches_library() {
    let q = [0.1, -0.5, 0.3, -2.0, 0.2, 1.8, 0.7];
    let mut out = [0.0; 3];
    assert_eq!(
        unsafe { tp_arm_forward(q.as_ptr(), out.as_mut_ptr()) },
        TpStatus::Ok
    );
    let expect = forward_position(&ArmModel::panda(), &JointVector::from_column_slice(&q));
    assert_eq!(out, [expect.x, expect.y, expect.z]);
    assert!(tp_last_error().is_null());
}

#[test]
fn null_and_invalid_arguments() {
    let mut out = [0.0; 3];
    assert_eq!(
        unsafe { tp_arm_forward(ptr::null(), out.as_mut_ptr()) },
        TpStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let q = [f64::NAN; 7];
    assert_eq!(
        unsafe { tp_arm_forward(q.as_ptr(), out.as_mut_ptr()) },
        TpStatus::InvalidArgument
    );
    assert_eq!(unsafe { tp_result_len(ptr::null()) }, 0);
    unsafe {
        tp_planner_free(ptr::null_mut());
        tp_result_free(ptr::null_mut());
    }
}

#[test]
fn missing_artifact_is_io_error() {
    let f = fixture();
    let bad = CString::new("/nonexistent/hedgehog.bin").unwrap();
    let mut p = ptr::null_mut();
    let s = unsafe {
        tp_planner_load(
            bad.as_ptr(),
            f.brt.as_ptr(),
            f.model.as_ptr(),
            ptr::null(),
            &mut p,
        )
    };
    assert_eq!(s, TpStatus::Io);
    assert!(p.is_null());
    assert!(last_error().contains("/nonexistent/hedgehog.bin"));
}

#[test]
fn plan_get_and_simulate() {
    let planner = load();
    let target = [2.0, 0.0, 0.0];
    let base = [0.0; 3];
    let mut res = ptr::null_mut();
    assert_eq!(
        unsafe { tp_planner_plan(planner, target.as_ptr(), base.as_ptr(), 5, &mut res) },
        TpStatus::Ok
    );
    let n = unsafe { tp_result_len(res) };
    assert!((1..=5).contains(&n), "{n} results");
    let mut cfg = TpThrowConfig::default();
    assert_eq!(unsafe { tp_result_get(res, 0, &mut cfg) }, TpStatus::Ok);
    assert!(cfg.min_margin > 0.0);
    let e = forward_position(&ArmModel::panda(), &JointVector::from_column_slice(&cfg.q));
    let c = cfg.base_yaw.cos();
    let s = cfg.base_yaw.sin();
    let world = [
        cfg.base[0] + c * e.x - s * e.y,
        cfg.base[1] + s * e.x + c * e.y,
        cfg.base[2] + e.z,
    ];
    for (w, r) in world.iter().zip(&cfg.release) {
        assert!((w - r).abs() < 1e-9);
    }
    assert_eq!(
        unsafe { tp_result_get(res, n, &mut cfg) },
        TpStatus::OutOfRange
    );
    assert!(last_error().contains("out of range"));

    let start: Vec<f64> = home_state().q.iter().copied().collect();
    let mut outcome = TpSimOutcome::default();
    assert_eq!(
        unsafe { tp_result_simulate(planner, res, 0, start.as_ptr(), &mut outcome) },
        TpStatus::Ok
    );
    assert!(outcome.success, "{outcome:?}");
    unsafe {
        tp_result_free(res);
        tp_planner_free(planner);
    }
}

#[test]
fn unreachable_target_reports_no_solution() {
    let planner = load();
    let target = [2.0, 0.0, 6.0];
    let base = [0.0; 3];
    let mut res = ptr::null_mut();
    let s = unsafe { tp_planner_plan(planner, target.as_ptr(), base.as_ptr(), 0, &mut res) };
    assert_eq!(s, TpStatus::NoSolution);
    assert!(res.is_null());
    let same = [0.0; 3];
    let s = unsafe { tp_planner_plan(planner, same.as_ptr(), base.as_ptr(), 0, &mut res) };
    assert_eq!(s, TpStatus::InvalidArgument);
    unsafe { tp_planner_free(planner) };
}

#[test]
fn planner_is_shareable_across_threads() {
    struct Shared(*mut TpPlanner);
    unsafe impl Sync for Shared {}
    let planner = Shared(load());
    let counts: Vec<usize> = std::thread::scope(|s| {
        let handles: Vec<_> = [-0.2, 0.0, 0.2]
            .into_iter()
            .map(|z| {
                let p = &planner;
                s.spawn(move || {
                    let target = [2.0, 0.0, z];
                    let base = [0.0; 3];
                    let mut res = ptr::null_mut();
                    let st = unsafe {
                        tp_planner_plan(p.0, target.as_ptr(), base.as_ptr(), 0, &mut res)
                    };
                    assert_eq!(st, TpStatus::Ok);
                    let n = unsafe { tp_result_len(res) };
                    unsafe { tp_result_free(res) };
                    n
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(counts.iter().all(|&n| n > 0));
    unsafe { tp_planner_free(planner.0) };
}

#[test]
fn header_declares_api_and_compiles() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/throwplan.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tp_planner_load",
        "tp_planner_plan",
        "tp_planner_free",
        "tp_result_get",
        "tp_result_simulate",
        "tp_last_error",
        "typedef struct TpPlanner TpPlanner;",
        "TP_STATUS_NO_SOLUTION = 4",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"throwplan.h\"\nint main(void) { TpPlanner *p = 0; tp_planner_free(p); return TP_STATUS_OK; }\n",
    )
    .unwrap();
    let inc = header.parent().unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(inc)
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler; header syntax not checked"),
    }
}
