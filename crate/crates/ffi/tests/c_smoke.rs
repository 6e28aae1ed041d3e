//! Compiles a small C program against the generated header and the shared
//! library. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "profilecp.h"

int main(void) {
    PcpOntology *o = NULL;
    if (pcp_ontology_default(&o) != PCP_STATUS_OK) return 10;
    PcpProfile *a = NULL, *b = NULL;
    if (pcp_profile_from_names(o, "Circuit,Sum,Element,Minimum", &a) != PCP_STATUS_OK) return 11;
    if (pcp_profile_from_names(o, "Circuit,Element", &b) != PCP_STATUS_OK) return 12;
    double j = 0.0;
    if (pcp_jaccard(a, b, &j) != PCP_STATUS_OK || j != 0.5) return 13;
    PcpProfile *bad = NULL;
    if (pcp_profile_from_names(o, "Nope", &bad) != PCP_STATUS_INVALID_INPUT) return 14;
    if (strstr(pcp_last_error_message(), "Nope") == NULL) return 15;
    char *s = NULL;
    if (pcp_profile_render(b, &s) != PCP_STATUS_OK) return 16;
    printf("%s|%zu\n", s, pcp_predicted_node_count(3, 2, 2) == 9 ? (size_t)9 : (size_t)0);
    pcp_string_free(s);
    pcp_profile_free(a);
    pcp_profile_free(b);
    pcp_ontology_free(o);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib_dir = target_dir();
    if !lib_dir.join("libprofilecp_ffi.so").exists() {
        eprintln!("shared library not built; skipping");
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lprofilecp_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "Circuit, Element|9");
}
