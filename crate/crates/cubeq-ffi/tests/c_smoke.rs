//! Compiles and runs a small C program against the generated header and the
//! cdylib, proving the ABI surface is consumable outside Rust.

use std::path::PathBuf;
use std::process::Command;

const C_MAIN: &str = r#"
#include <stdio.h>
#include <math.h>
#include "cubeq.h"

int main(void) {
    CubeqForm *form = NULL;
    CubeqStatus st = cubeq_form_parse_json(
        "{\"n\":1,\"terms\":[{\"e\":[3],\"c\":1}]}", &form);
    if (st != CUBEQ_STATUS_OK) return 10;
    if (cubeq_form_arity(form) != 2) return 11;

    int64_t m[2] = {0, 0};
    CubeqQValue q;
    st = cubeq_q_eval(form, m, 2, 5, CUBEQ_METHOD_AUTO, &q);
    if (st != CUBEQ_STATUS_OK) return 12;
    if (sqrt(q.re * q.re + q.im * q.im) > 1e-9) return 13; /* Q(0,5) = 0 */

    uint64_t count = 0;
    if (cubeq_point_count(form, 5, &count) != CUBEQ_STATUS_OK || count != 5) return 14;

    int32_t jac = 0;
    if (cubeq_jacobi(3, 7, &jac) != CUBEQ_STATUS_OK || jac != -1) return 15;
    if (cubeq_jacobi(3, 8, &jac) != CUBEQ_STATUS_INVALID_ARGUMENT) return 16;

    char msg[128];
    if (cubeq_last_error(msg, sizeof msg) == 0) return 17;

    if (fabs(cubeq_weight_gamma(0.0) - exp(-2.0)) > 1e-15) return 18;

    cubeq_form_free(form);
    printf("c-smoke-ok\n");
    return 0;
}
"#;

fn target_debug_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("CARGO_TARGET_DIR") {
        return PathBuf::from(dir).join("debug");
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/debug")
}

#[test]
fn c_consumer_compiles_and_runs() {
    let cc = which_cc();
    let Some(cc) = cc else {
        eprintln!("no C compiler found; skipping the C smoke test");
        return;
    };
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    // under `cargo test` the cdylib lands in deps/, under `cargo build` at
    // the profile root; accept either
    let base = target_debug_dir();
    let libdir = [base.clone(), base.join("deps")]
        .into_iter()
        .find(|d| d.join("libcubeq_ffi.so").exists() || d.join("libcubeq_ffi.a").exists())
        .unwrap_or_else(|| panic!("cdylib not found under {}", base.display()));

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    std::fs::write(&src, C_MAIN).unwrap();
    let exe = work.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&libdir)
        .arg("-lcubeq_ffi")
        .arg("-lm")
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("run C compiler");
    assert!(status.success(), "C compilation failed");

    let out = Command::new(&exe).output().expect("run C smoke binary");
    assert!(
        out.status.success(),
        "C smoke binary exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "c-smoke-ok");
}

fn which_cc() -> Option<String> {
    for cand in ["cc", "gcc", "clang"] {
        if Command::new(cand)
            .arg("--version")
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
        {
            return Some(cand.to_string());
        }
    }
    None
}
