//! Compiles and runs a small C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "robust_coreset.h"

int main(void) {
    double xs[40];
    for (int i = 0; i < 20; i++) { xs[2 * i] = i % 2 ? 5.0 + 0.01 * i : 0.01 * i; xs[2 * i + 1] = 0.0; }
    RcDataset *ds = NULL;
    RcModel *m = NULL;
    if (rc_dataset_new(20, 2, xs, NULL, NULL, NULL, &ds) != RC_STATUS_OK) return 1;
    if (rc_model_from_json("{\"kind\":\"kmeans\",\"k\":2}", 2, &m) != RC_STATUS_OK) return 2;
    double theta[4], loss;
    if (rc_solve(m, ds, 1.0, 0, theta, 4, &loss) != RC_STATUS_OK) return 3;
    if (rc_model_from_json("[", 2, &m) != RC_STATUS_INVALID_ARGUMENT) return 4;
    char msg[64];
    rc_last_error(msg, sizeof msg);
    printf("%.6f %s\n", loss, msg);
    rc_model_free(m);
    rc_dataset_free(ds);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("librobust_coreset_ffi.a");
    if !have_cc() {
        eprintln!("skipping: no C compiler");
        return;
    }
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let line = String::from_utf8(run.stdout).unwrap();
    let (loss, msg) = line.trim().split_once(' ').unwrap();
    assert!(loss.parse::<f64>().unwrap() >= 0.0);
    assert!(msg.starts_with("bad JSON"));
}
