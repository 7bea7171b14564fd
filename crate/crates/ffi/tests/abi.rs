use std::ffi::{CStr, CString};
use std::ptr;

use mtpshift_ffi::*;

fn last_error() -> String {
    let p = mtp_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { mtp_string_free(p) };
    s
}

#[test]
fn bounded_shift_round_trip() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mtp_shift_bounded_new(1.0, 2.0, 4.79, &mut h) }, MtpStatus::Ok);
    let mut out = 0.0;
    for (a, want) in [(0.0, 2.0), (2.79, 4.79), (3.0, 4.0), (3.79, 4.79), (4.5, 4.5)] {
        assert_eq!(unsafe { mtp_shift_apply(h, a, &mut out) }, MtpStatus::Ok);
        assert_eq!(out, want, "a = {a}");
    }
    let a = [0.5, 3.5, 4.0];
    let mut o = [0.0; 3];
    assert_eq!(unsafe { mtp_shift_apply_array(h, a.as_ptr(), 3, o.as_mut_ptr()) }, MtpStatus::Ok);
    assert_eq!(o, [2.5, 4.5, 4.0]);
    assert_eq!(unsafe { mtp_shift_apply(h, -1.0, &mut out) }, MtpStatus::Domain);
    assert!(last_error().contains("domain"));
    unsafe { mtp_shift_free(h) };
}

#[test]
fn invalid_arguments_and_nulls() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mtp_shift_bounded_new(2.0, 1.0, 4.79, &mut h) }, MtpStatus::Domain);
    assert!(h.is_null());
    assert_eq!(unsafe { mtp_shift_bounded_new(1.0, 2.0, 4.79, ptr::null_mut()) }, MtpStatus::NullPointer);
    assert_eq!(unsafe { mtp_shift_apply(ptr::null(), 1.0, &mut 0.0) }, MtpStatus::NullPointer);
    assert!(last_error().contains("null"));
    // Null handles are accepted by the destructors.
    unsafe {
        mtp_shift_free(ptr::null_mut());
        mtp_delay_policy_free(ptr::null_mut());
        mtp_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut x = 0.0;
    assert_eq!(unsafe { mtp_compute_rate(1, 0, &mut x) }, MtpStatus::UndefinedRate);
    assert_eq!(unsafe { mtp_compute_rate(5, 200_000, &mut x) }, MtpStatus::Ok);
    assert_eq!(x, 2.5);
    assert!(mtp_last_error_message().is_null());
}

#[test]
fn delay_policy() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { mtp_delay_policy_new(5, 2, &mut p) }, MtpStatus::Ok);
    let a = [0u8, 1, 1, 1, 1];
    let mut o = [9u8; 5];
    assert_eq!(unsafe { mtp_apply_delay(p, a.as_ptr(), 5, o.as_mut_ptr()) }, MtpStatus::Ok);
    assert_eq!(o, [0, 0, 0, 1, 1]);
    let bad = [1u8, 0, 1, 1, 1];
    assert_eq!(unsafe { mtp_apply_delay(p, bad.as_ptr(), 5, o.as_mut_ptr()) }, MtpStatus::Domain);
    assert_eq!(o, [0, 0, 0, 1, 1]);
    assert_eq!(unsafe { mtp_delay_policy_new(0, 2, &mut ptr::null_mut()) }, MtpStatus::Domain);
    unsafe { mtp_delay_policy_free(p) };
}

#[test]
fn interval_and_cluster_se() {
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { mtp_confidence_interval(0.28, 0.051, 0.05, &mut lo, &mut hi) }, MtpStatus::Ok);
    assert_eq!(((lo * 100.0).round() / 100.0, (hi * 100.0).round() / 100.0), (0.18, 0.38));

    let ic = [1.0, -1.0, 2.0, -2.0];
    let cl = [0u64, 0, 1, 1];
    let mut out = MtpInterval::default();
    assert_eq!(unsafe { mtp_cluster_robust_se(ic.as_ptr(), cl.as_ptr(), 4, 0.5, 0.05, &mut out) }, MtpStatus::Ok);
    // Cluster sums are zero.
    assert_eq!(out.se, 0.0);
    assert_eq!(out.n_clusters, 2);
    let one = [0u64; 4];
    assert_eq!(
        unsafe { mtp_cluster_robust_se(ic.as_ptr(), one.as_ptr(), 4, 0.5, 0.05, &mut out) },
        MtpStatus::SingleCluster
    );
}

#[test]
fn estimate_json_reports_config_errors() {
    let cfg = CString::new("[estimate]\nkind = \"POINT_SHIFT\"\nbogus = 1\n").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { mtp_estimate_json(cfg.as_ptr(), &mut out) }, MtpStatus::InvalidArgument);
    assert!(out.is_null());
    let missing = CString::new("[estimate]\npanel = \"/nonexistent/panel.csv\"\nkind = \"POINT_SHIFT\"\n").unwrap();
    assert_eq!(unsafe { mtp_estimate_json(missing.as_ptr(), &mut out) }, MtpStatus::Io);
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mtp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mtpshift.h")).unwrap();
    for f in [
        "mtp_shift_bounded_new",
        "mtp_shift_apply_array",
        "mtp_apply_delay",
        "mtp_cluster_robust_se",
        "mtp_confidence_interval",
        "mtp_compute_rate",
        "mtp_estimate_json",
        "mtp_last_error_message",
        "mtp_string_free",
        "typedef struct MtpShift MtpShift",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile_dir();
    let src = dir.join("use.c");
    std::fs::write(
        &src,
        "#include \"mtpshift.h\"\nint main(void) { MtpShift *s = 0; double o; return mtp_shift_apply(s, 1.0, &o) == MTP_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("mtpshift-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
