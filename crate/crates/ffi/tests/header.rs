//! The committed C header must declare exactly the exported functions, and
//! a C program built against it must link and run.

use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut names = Vec::new();
    let mut lines = src.lines();
    while let Some(l) = lines.next() {
        if l.trim() == "#[no_mangle]" {
            let sig = lines.next().unwrap();
            let after = sig.split("fn ").nth(1).unwrap();
            names.push(after.split('(').next().unwrap().to_string());
        }
    }
    names
}

fn header() -> String {
    std::fs::read_to_string(crate_dir().join("include/frrc.h")).unwrap()
}

fn declared_functions(h: &str) -> Vec<String> {
    h.lines()
        .filter(|l| !l.starts_with(' ') && !l.starts_with('#') && l.contains("frrc_") && l.contains('('))
        .map(|l| {
            let before = l.split('(').next().unwrap();
            before.rsplit([' ', '*']).next().unwrap().to_string()
        })
        .collect()
}

#[test]
fn header_declares_every_export() {
    let mut exported = exported_functions();
    let mut declared = declared_functions(&header());
    exported.sort();
    declared.sort();
    assert!(!exported.is_empty());
    assert_eq!(exported, declared);
}

#[test]
fn status_values_match() {
    let h = header();
    for (name, v) in [
        ("OK", frrc_ffi::FrrcStatus::Ok),
        ("NULL_POINTER", frrc_ffi::FrrcStatus::NullPointer),
        ("INVALID_ARGUMENT", frrc_ffi::FrrcStatus::InvalidArgument),
        ("DATA", frrc_ffi::FrrcStatus::Data),
        ("NUMERIC", frrc_ffi::FrrcStatus::Numeric),
        ("BUFFER_TOO_SMALL", frrc_ffi::FrrcStatus::BufferTooSmall),
        ("INTERNAL", frrc_ffi::FrrcStatus::Internal),
    ] {
        let line = format!("FRRC_STATUS_{name} = {},", v as i32);
        assert!(h.contains(&line), "missing {line}");
    }
}

/// Directory holding the library artefacts of this build.
fn artefact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "frrc.h"

int main(void) {
    size_t s[2] = {0, 5}, e[2] = {4, 9};
    double gt[10];
    if (frrc_ground_truth(s, e, 2, 10, gt, 10) != FRRC_STATUS_OK) return 1;
    double sum = 0;
    for (int i = 0; i < 10; i++) sum += gt[i];
    if (fabs(sum - 2.0) > 1e-9) return 2;

    double t[2] = {10, 5}, p[2] = {8, 5}, mae, obo;
    if (frrc_evaluate_counts(t, p, 2, &mae, &obo) != FRRC_STATUS_OK) return 3;
    if (fabs(mae - 0.1) > 1e-15 || obo != 0.5) return 4;

    FrrcModel *m = NULL;
    if (frrc_model_load("/nonexistent/model.frrc", &m) != FRRC_STATUS_DATA) return 5;
    if (frrc_last_error() == NULL || m != NULL) return 6;
    frrc_model_free(NULL);
    printf("ok %s\n", frrc_version());
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let lib = artefact_dir().join("libfrrc_ffi.a");
    if !have_cc() || !lib.exists() {
        eprintln!("skipping: no C compiler or {} missing", lib.display());
        return;
    }
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("frrc_smoke.c");
    let bin = tmp.join("frrc_smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
