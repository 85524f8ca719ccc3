use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use shadowpipe_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { sp_string_free(p) };
    s
}

struct Handles {
    data: *mut SpDataset,
    session: *mut SpSession,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            sp_session_free(self.session);
            sp_dataset_free(self.data);
        }
    }
}

fn open(plan: &str) -> Handles {
    let mut data = ptr::null_mut();
    assert_eq!(unsafe { sp_dataset_generate(42, &mut data) }, SpStatus::Ok);
    let mut session = ptr::null_mut();
    let plan = cstr(plan);
    assert_eq!(unsafe { sp_session_open(data, plan.as_ptr(), &mut session) }, SpStatus::Ok);
    Handles { data, session }
}

#[test]
fn session_round_trip_through_the_c_abi() {
    let h = open("rag");
    let mut acc = 0.0;
    assert_eq!(unsafe { sp_session_accuracy(h.session, &mut acc) }, SpStatus::Ok);
    assert!(acc > 0.0 && acc < 1.0);

    let shadows = cstr("slices");
    assert_eq!(unsafe { sp_session_analyze(h.session, shadows.as_ptr()) }, SpStatus::Ok);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sp_session_suggestions_json(h.session, &mut out) }, SpStatus::Ok);
    let list: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    let id = list[0]["id"].as_str().unwrap().to_string();
    assert_eq!(list[0]["status"], "ready");

    let cid = cstr(&id);
    let mut applied = ptr::null_mut();
    assert_eq!(unsafe { sp_session_apply(h.session, cid.as_ptr(), &mut applied) }, SpStatus::Ok);
    let applied: serde_json::Value = serde_json::from_str(&take(applied)).unwrap();
    assert_eq!(applied["suggestion"]["status"], "applied");

    let mut after = 0.0;
    assert_eq!(unsafe { sp_session_accuracy(h.session, &mut after) }, SpStatus::Ok);
    assert!(after > acc);

    // a second apply of the same suggestion is refused
    assert_eq!(
        unsafe { sp_session_apply(h.session, cid.as_ptr(), ptr::null_mut()) },
        SpStatus::NotReady
    );
}

#[test]
fn errors_map_to_status_codes() {
    let h = open("train");
    let unknown = cstr("slices-0000");
    assert_eq!(unsafe { sp_session_dismiss(h.session, unknown.as_ptr()) }, SpStatus::NotFound);
    assert!(last_error().contains("slices-0000"));

    let bad = cstr("{\"nodes\": [], \"outputs\": [\"x\"]}");
    assert_eq!(
        unsafe { sp_session_update_plan(h.session, bad.as_ptr(), ptr::null_mut()) },
        SpStatus::InvalidPlan
    );
    let shadows = cstr("nonsense");
    assert_eq!(
        unsafe { sp_session_analyze(h.session, shadows.as_ptr()) },
        SpStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sp_session_analyze(ptr::null_mut(), shadows.as_ptr()) },
        SpStatus::NullArgument
    );
    let mut acc = 0.0;
    assert_eq!(unsafe { sp_session_accuracy(h.session, ptr::null_mut()) }, SpStatus::NullArgument);
    assert_eq!(unsafe { sp_session_accuracy(h.session, &mut acc) }, SpStatus::Ok);

    let missing = cstr("/nonexistent/corpus");
    let mut data = ptr::null_mut();
    assert_eq!(unsafe { sp_dataset_load(missing.as_ptr(), &mut data) }, SpStatus::Io);
    assert!(data.is_null());
}

#[test]
fn plan_edit_reports_maintenance() {
    let h = open("rag");
    let plan = shadowpipe::plan::rag_plan();
    let mut text = plan.to_json();
    assert!(text.contains("lost (interest|motivation)"));
    text = text.replace("lost (interest|motivation)", "lost (all )?(interest|motivation)");
    let ctext = cstr(&text);
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sp_session_update_plan(h.session, ctext.as_ptr(), &mut out) },
        SpStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(report["policy"]["enabled"], true);
    assert!(report["invocations"].get("embed").is_none());
}

#[test]
fn status_names_are_stable() {
    let name = |s| unsafe { CStr::from_ptr(sp_status_name(s)) }.to_str().unwrap();
    assert_eq!(name(SpStatus::Ok), "ok");
    assert_eq!(name(SpStatus::Stale), "stale");
    assert_eq!(SpStatus::Panic as i32, 10);
}

#[test]
fn freeing_null_is_a_no_op() {
    unsafe {
        sp_dataset_free(ptr::null_mut());
        sp_session_free(ptr::null_mut());
        sp_string_free(ptr::null_mut());
    }
}

/// Compiles a small C program against the generated header and links it
/// with the static library when a C compiler is available.
#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = crate_dir.join("include");
    assert!(header_dir.join("shadowpipe.h").exists());
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "shadowpipe.h"
int main(void) {
    SpDataset *data = NULL;
    SpSession *session = NULL;
    double acc = 0.0;
    if (sp_dataset_generate(42, &data) != SP_STATUS_OK) return 1;
    if (sp_session_open(data, "train", &session) != SP_STATUS_OK) return 2;
    if (sp_session_accuracy(session, &acc) != SP_STATUS_OK) return 3;
    if (sp_session_dismiss(session, "missing") != SP_STATUS_NOT_FOUND) return 4;
    if (sp_last_error() == NULL) return 5;
    printf("%.3f\n", acc);
    sp_session_free(session);
    sp_dataset_free(data);
    return 0;
}
"#,
    )
    .unwrap();

    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .status()
        .unwrap();
    assert!(syntax.success(), "header does not compile as C99");

    let Some(lib) = static_lib() else {
        eprintln!("static library not found next to the test binary; skipping link step");
        return;
    };
    let exe = tmp.path().join("smoke");
    let link = Command::new(&cc)
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(link.success(), "linking against {} failed", lib.display());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status.code());
    let acc: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(acc > 0.0 && acc < 1.0);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.to_path_buf(), deps.parent()?.to_path_buf()]
        .into_iter()
        .map(|d| d.join("libshadowpipe_ffi.a"))
        .find(|p| p.exists())
}
