//! Compiles and runs a C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "govid.h"

static double sphere(const double *x, size_t dim, void *user) {
    (void)user;
    double s = 0.0;
    for (size_t i = 0; i < dim; ++i) s += x[i] * x[i];
    return s;
}

int main(void) {
    GovidModel *m = NULL;
    if (govid_model_new(GOVID_MODEL_KIND_GGOV1, 0.001, &m) != GOVID_STATUS_OK) return 1;
    double v = 0.0;
    if (govid_model_get_param(m, "K_turb", &v) != GOVID_STATUS_OK || v != 0.31) return 2;
    if (govid_model_set_param(m, "nope", 1.0) != GOVID_STATUS_UNKNOWN_PARAMETER) return 3;
    if (govid_last_error() == NULL) return 4;
    govid_model_free(m);

    double lo[3] = {-1, -1, -1}, hi[3] = {1, 1, 1}, best[3];
    GovidCsConfig cfg = govid_cs_default_config();
    cfg.stop_threshold = 0.0;
    GovidCsResult res;
    if (govid_cs_minimize(3, lo, hi, &cfg, sphere, NULL, best, &res) != GOVID_STATUS_OK) return 5;
    printf("%.3e\n", res.best_fitness);
    return res.best_fitness < 1e-2 ? 0 : 6;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    // `cargo test` leaves the fresh archive in deps/; `cargo build` uplifts
    // a copy one level up that may be older
    let lib = [deps.join("libgovid_ffi.a"), deps.parent().unwrap().join("libgovid_ffi.a")]
        .into_iter()
        .filter(|p| p.exists())
        .max_by_key(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
        .expect("static library built next to the test binary");
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    let bin = work.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .status()
        .expect("a C compiler");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stdout));
}
