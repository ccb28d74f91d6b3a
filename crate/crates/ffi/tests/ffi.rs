use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use adplan_ffi::*;
use libc::c_int;

fn last_error() -> String {
    let mut buf = vec![0 as libc::c_char; 256];
    let need = unsafe { adplan_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(need >= 1);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn t1_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/t1/t1.conf")
}

#[test]
fn lp_round_trip() {
    unsafe {
        let lp = adplan_lp_new(2, AdplanSense::Maximize as c_int);
        assert!(!lp.is_null());
        assert_eq!(adplan_lp_set_objective(lp, [3.0, 2.0].as_ptr(), 2), AdplanStatus::Ok);
        let le = AdplanRelation::Le as c_int;
        assert_eq!(adplan_lp_add_constraint(lp, [1.0, 1.0].as_ptr(), 2, le, 4.0), AdplanStatus::Ok);
        assert_eq!(adplan_lp_add_constraint(lp, [1.0, 3.0].as_ptr(), 2, le, 6.0), AdplanStatus::Ok);
        assert_eq!(adplan_lp_add_constraint(lp, [1.0, 0.0].as_ptr(), 2, le, 3.0), AdplanStatus::Ok);
        assert_eq!(adplan_lp_num_vars(lp), 2);
        assert_eq!(adplan_lp_num_constraints(lp), 3);
        let mut x = [0.0; 2];
        let mut obj = 0.0;
        assert_eq!(adplan_lp_solve(lp, x.as_mut_ptr(), 2, &mut obj), AdplanStatus::Ok);
        assert!((obj - 11.0).abs() < 1e-9, "{obj}");
        assert!((x[0] - 3.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9, "{x:?}");
        assert_eq!(last_error(), "");
        adplan_lp_free(lp);
    }
}

#[test]
fn lp_statuses() {
    unsafe {
        let lp = adplan_lp_new(1, AdplanSense::Minimize as c_int);
        adplan_lp_set_objective(lp, [1.0].as_ptr(), 1);
        adplan_lp_add_constraint(lp, [1.0].as_ptr(), 1, AdplanRelation::Ge as c_int, 2.0);
        adplan_lp_add_constraint(lp, [1.0].as_ptr(), 1, AdplanRelation::Le as c_int, 1.0);
        assert_eq!(adplan_lp_solve(lp, ptr::null_mut(), 0, ptr::null_mut()), AdplanStatus::Infeasible);
        assert!(last_error().contains("infeasible"));
        adplan_lp_free(lp);

        let lp = adplan_lp_new(1, AdplanSense::Maximize as c_int);
        adplan_lp_set_objective(lp, [1.0].as_ptr(), 1);
        assert_eq!(adplan_lp_solve(lp, ptr::null_mut(), 0, ptr::null_mut()), AdplanStatus::Unbounded);
        adplan_lp_free(lp);
    }
}

#[test]
fn invalid_arguments_are_reported() {
    unsafe {
        assert!(adplan_lp_new(2, 7).is_null());
        assert!(last_error().contains("sense"));
        let lp = adplan_lp_new(2, AdplanSense::Maximize as c_int);
        assert_eq!(adplan_lp_set_objective(lp, [1.0].as_ptr(), 1), AdplanStatus::InvalidArgument);
        assert_eq!(adplan_lp_set_objective(lp, ptr::null(), 2), AdplanStatus::NullPointer);
        assert_eq!(
            adplan_lp_add_constraint(lp, [1.0, 1.0].as_ptr(), 2, 9, 1.0),
            AdplanStatus::InvalidArgument
        );
        assert_eq!(
            adplan_lp_add_constraint(lp, [f64::NAN, 1.0].as_ptr(), 2, 0, 1.0),
            AdplanStatus::InvalidArgument
        );
        let mut x = [0.0; 3];
        assert_eq!(adplan_lp_solve(lp, x.as_mut_ptr(), 3, ptr::null_mut()), AdplanStatus::InvalidArgument);
        adplan_lp_free(lp);
        assert_eq!(adplan_lp_solve(ptr::null(), ptr::null_mut(), 0, ptr::null_mut()), AdplanStatus::NullPointer);
        assert_eq!(adplan_lp_num_vars(ptr::null()), 0);
        adplan_lp_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates() {
    unsafe {
        assert!(adplan_lp_new(1, -1).is_null());
        let full = adplan_last_error(ptr::null_mut(), 0);
        let mut buf = [0x7f as libc::c_char; 5];
        assert_eq!(adplan_last_error(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 4);
    }
}

#[test]
fn errors_are_per_thread() {
    assert!(adplan_lp_new(1, 5).is_null());
    std::thread::spawn(|| assert_eq!(last_error(), "")).join().unwrap();
    assert!(!last_error().is_empty());
}

#[test]
fn transportation_worked_example() {
    let supplies = [3.0, 2.0];
    let demands = [2.0, 3.0];
    let costs = [1.0, 2.0, 3.0, 1.0];
    let mut flows = [0.0; 4];
    let mut obj = 0.0;
    let status = unsafe {
        adplan_transport_solve(
            supplies.as_ptr(),
            2,
            demands.as_ptr(),
            2,
            costs.as_ptr(),
            AdplanSense::Minimize as c_int,
            flows.as_mut_ptr(),
            &mut obj,
        )
    };
    assert_eq!(status, AdplanStatus::Ok, "{}", last_error());
    assert_eq!(obj, 6.0);
    assert_eq!(flows, [2.0, 1.0, 0.0, 2.0]);
}

#[test]
fn transportation_rejects_bad_shapes() {
    let status = unsafe {
        adplan_transport_solve(
            [1.0].as_ptr(),
            1,
            [1.0].as_ptr(),
            1,
            ptr::null(),
            0,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, AdplanStatus::NullPointer);
}

#[test]
fn plans_the_t1_fixture() {
    let dir = tempfile::TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let conf = CString::new(t1_conf().to_str().unwrap()).unwrap();
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    let mut obj = 0.0;
    let status = unsafe { adplan_plan_files(conf.as_ptr(), out_c.as_ptr(), &mut obj) };
    assert_eq!(status, AdplanStatus::Ok, "{}", last_error());
    assert_eq!(obj, 10.0);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/t1/plan.golden.csv");
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(golden).unwrap());

    let missing = CString::new("/nonexistent/adplan.conf").unwrap();
    assert_eq!(
        unsafe { adplan_plan_files(missing.as_ptr(), ptr::null(), ptr::null_mut()) },
        AdplanStatus::Io
    );
    assert_eq!(
        unsafe { adplan_plan_files(ptr::null(), ptr::null(), ptr::null_mut()) },
        AdplanStatus::NullPointer
    );
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(adplan_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Directory holding the built static library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib = artifact_dir().join("libadplan_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::TempDir::new().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "adplan.h"

int main(void) {
    AdplanLp *lp = adplan_lp_new(2, ADPLAN_SENSE_MAXIMIZE);
    double c[2] = {1.0, 1.0};
    double row[2] = {1.0, 2.0};
    double x[2];
    double obj = 0.0;
    char msg[128];
    if (!lp) return 10;
    if (adplan_lp_set_objective(lp, c, 2) != ADPLAN_STATUS_OK) return 11;
    if (adplan_lp_add_constraint(lp, row, 2, ADPLAN_RELATION_LE, 4.0) != ADPLAN_STATUS_OK) return 12;
    if (adplan_lp_add_constraint(lp, c, 2, 7, 4.0) != ADPLAN_STATUS_INVALID_ARGUMENT) return 13;
    if (adplan_last_error(msg, sizeof msg) < 2) return 14;
    if (adplan_lp_solve(lp, x, 2, &obj) != ADPLAN_STATUS_OK) return 15;
    adplan_lp_free(lp);
    printf("%.6f %.6f %.6f\n", obj, x[0], x[1]);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("demo");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler not found");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "4.000000 4.000000 0.000000\n");
}
