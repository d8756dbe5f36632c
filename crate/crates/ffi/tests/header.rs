//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include "cep.h"
#include <math.h>
#include <stdio.h>

int main(void) {
    CepQuadrature *rule = NULL;
    if (cep_gauss_hermite_new(7, &rule) != CEP_STATUS_OK) return 1;
    double nodes[7], weights[7], total = 0.0;
    if (cep_gauss_hermite_copy(rule, nodes, weights, 7) != CEP_STATUS_OK) return 2;
    for (int i = 0; i < 7; i++) total += weights[i];
    cep_gauss_hermite_free(rule);
    if (fabs(total - 1.0) > 1e-12) return 3;

    if (cep_gauss_hermite_new(0, &rule) != CEP_STATUS_INVALID_ARGUMENT) return 4;
    char buf[256];
    if (cep_last_error_copy(buf, sizeof buf) == 0) return 5;

    double x[] = {1.0, 0.5, -1.0, -0.2, 0.8, 0.1, -0.7, 0.3};
    double y[] = {1.0, 0.0, 1.0, 0.0};
    CepFitOptions opts = cep_fit_options_default();
    CepRegressionFit *fit = NULL;
    if (cep_regression_fit(x, y, 4, 2, CEP_LINK_PROBIT, CEP_METHOD_EP, &opts, &fit) != CEP_STATUS_OK) return 6;
    double means[2], vars[2];
    if (cep_regression_posterior(fit, means, vars, 2) != CEP_STATUS_OK) return 7;
    cep_regression_free(fit);
    printf("%f %f\n", means[0], vars[0]);
    return means[0] > 0.0 && vars[0] > 0.0 && vars[0] < 1.0 ? 0 : 8;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("cep.h").exists(), "header was not generated");
    let lib = target_dir().join("libcep_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping link step", lib.display());
        return;
    }
    let dir = std::env::temp_dir().join(format!("cep-ffi-c-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    let bin = dir.join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn header_parses_as_cxx() {
    let Some(cc) = compiler() else { return };
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(&cc)
        .args(["-x", "c++", "-fsyntax-only", "-Wall", "-Werror"])
        .arg(include.join("cep.h"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
