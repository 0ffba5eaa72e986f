//! End-to-end tests of the `fra` binary and the batch runner surfaces.

use fra_cli::imageio::{load_image, load_matrix, save_image};
use fra_core::synth::{banded_image, smooth_image};
use std::path::Path;
use std::process::Command;

fn fra() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fra"))
}

fn write_pair(dir: &Path, idx: u64) {
    let s = smooth_image(32, 32, 3, 500 + idx);
    let t = smooth_image(32, 32, 3, 600 + idx);
    save_image(&dir.join(format!("s{idx}.ppm")), &s).unwrap();
    save_image(&dir.join(format!("t{idx}.ppm")), &t).unwrap();
}

#[test]
fn attack_with_zero_iterations_round_trips_the_source() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    let out = fra()
        .current_dir(dir.path())
        .args([
            "attack",
            "--attack-iters",
            "0",
            "--pair",
            "s0.ppm,t0.ppm",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // With zero iterations the adversarial image is the source, so the saved
    // file equals the source file content bit for bit (same quantizer).
    let source_bytes = std::fs::read(dir.path().join("s0.ppm")).unwrap();
    let adv_bytes = std::fs::read(dir.path().join("out/adv_0000.ppm")).unwrap();
    assert_eq!(source_bytes, adv_bytes);
}

#[test]
fn attack_writes_all_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    write_pair(dir.path(), 1);
    let config = "\
[attack]
iters = 8

[pair]
source = s0.ppm
target = t0.ppm

[pair]
source = s1.ppm
target = t1.ppm

[defense]
kind = gaussian
";
    std::fs::write(dir.path().join("run.conf"), config).unwrap();
    for out_name in ["out-a", "out-b"] {
        let out = fra()
            .current_dir(dir.path())
            .args([
                "attack",
                "--config",
                "run.conf",
                "--run-output-dir",
                out_name,
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in [
        "metrics.csv",
        "summary.csv",
        "adv_0000.ppm",
        "adv_0001.ppm",
        "pair_0000.trace",
    ] {
        let a = std::fs::read(dir.path().join("out-a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("out-b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical invocations");
    }
    // Defended rows are present alongside the undefended ones.
    let metrics = std::fs::read_to_string(dir.path().join("out-a/metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.contains(",gaussian,")));
    assert!(metrics.lines().any(|l| l.contains(",none,")));
}

#[test]
fn frat_pairs_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = smooth_image(16, 16, 3, 1);
    let t = smooth_image(16, 16, 3, 2);
    save_image(&dir.path().join("s.frat"), &s).unwrap();
    save_image(&dir.path().join("t.frat"), &t).unwrap();
    let config = "\
[attack]
iters = 0
theta = 2
n = 2

[encoder]
kind = linear-patch
patch-size = 2
embed-dim = 8
seed = 4
input = 16x16x3

[holdout]
kind = linear-patch
patch-size = 8
embed-dim = 16
seed = 9
input = 16x16x3

[pair]
source = s.frat
target = t.frat
";
    std::fs::write(dir.path().join("c.conf"), config).unwrap();
    let out = fra()
        .current_dir(dir.path())
        .args(["attack", "--config", "c.conf", "--run-output-dir", "out"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let adv = load_image(&dir.path().join("out/adv_0000.frat")).unwrap();
    assert_eq!(adv, s);
}

#[test]
fn print_effective_config_reflects_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.conf"),
        "[attack]\nepsilon = 8/255\n[run]\noutput-dir = from-file\n",
    )
    .unwrap();
    // File overrides defaults; env overrides file; flags override env.
    let out = fra()
        .current_dir(dir.path())
        .args(["attack", "--config", "c.conf", "--print-effective-config"])
        .env("FRA_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(&format!("epsilon = {}", 8.0 / 255.0)));
    assert!(text.contains("output-dir = from-env"));

    let out = fra()
        .current_dir(dir.path())
        .args([
            "attack",
            "--config",
            "c.conf",
            "--run-output-dir",
            "from-flag",
            "--attack-epsilon",
            "4/255",
            "--print-effective-config",
        ])
        .env("FRA_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(&format!("epsilon = {}", 4.0 / 255.0)));
    assert!(text.contains("output-dir = from-flag"));
}

#[test]
fn config_errors_name_the_key_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "[attack]\nepsilon = 0\n").unwrap();
    let out = fra()
        .current_dir(dir.path())
        .args(["attack", "--config", "bad.conf"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epsilon") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_pairs_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = fra()
        .current_dir(dir.path())
        .args(["attack", "--run-output-dir", "out"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no pairs"));
}

#[test]
fn defend_eval_emits_defended_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    let out = fra()
        .current_dir(dir.path())
        .args([
            "attack",
            "--attack-iters",
            "4",
            "--pair",
            "s0.ppm,t0.ppm",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = fra()
        .current_dir(dir.path())
        .args([
            "defend-eval",
            "--pair",
            "s0.ppm,t0.ppm",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(dir.path().join("out/defended-metrics.csv")).unwrap();
    for kind in ["jpeg-like", "gaussian", "center-crop"] {
        assert!(
            metrics.lines().any(|l| l.contains(&format!(",{kind},"))),
            "{kind} missing"
        );
    }
}

#[test]
fn energy_map_supports_nondefault_band_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let img = banded_image(32, 32, 3, 77);
    save_image(&dir.path().join("img.ppm"), &img).unwrap();
    let out = fra()
        .current_dir(dir.path())
        .args([
            "energy-map",
            "--image",
            "img.ppm",
            "--theta",
            "20",
            "--n",
            "5",
            "--output",
            "map.frat",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let map = load_matrix(&dir.path().join("map.frat")).unwrap();
    // Default encoder 0 has a 2-pixel patch grid on 32x32 input.
    assert_eq!((map.rows(), map.cols()), (16, 16));
    assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn selfcheck_passes_and_prints_one_line_per_check() {
    let out = fra().args(["selfcheck"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let pass_lines = text.lines().filter(|l| l.starts_with("PASS ")).count();
    assert!(pass_lines >= 8, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn failing_pairs_are_recorded_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    let out = fra()
        .current_dir(dir.path())
        .args([
            "attack",
            "--attack-iters",
            "2",
            "--pair",
            "missing.ppm,t0.ppm",
            "--pair",
            "s0.ppm,t0.ppm",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    // Partial failure: nonzero exit, but the good pair still completed.
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("1 pairs completed, 1 failed"), "{text}");
    assert!(dir.path().join("out/adv_0001.ppm").exists());
    assert!(!dir.path().join("out/adv_0000.ppm").exists());
    let failures = std::fs::read_to_string(dir.path().join("out/failures.txt")).unwrap();
    assert!(failures.contains("pair 0"));
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("1,")));
    assert!(!metrics.lines().any(|l| l.starts_with("0,")));
}

#[test]
fn sweeping_a_categorical_key_works() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    let out = fra()
        .current_dir(dir.path())
        .args([
            "sweep",
            "--attack-iters",
            "3",
            "--pair",
            "s0.ppm,t0.ppm",
            "--sweep-key",
            "attack.optimizer",
            "--sweep-values",
            "fgsm, mi-fgsm, pgd-adam",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.path().join("out/sweep-summary.csv")).unwrap();
    for optimizer in ["fgsm", "mi-fgsm", "pgd-adam"] {
        assert!(
            summary
                .lines()
                .any(|l| l.contains(&format!(",{optimizer},"))),
            "{optimizer}"
        );
    }
}

#[test]
fn sweep_requires_a_key() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 0);
    let out = fra()
        .current_dir(dir.path())
        .args([
            "sweep",
            "--pair",
            "s0.ppm,t0.ppm",
            "--run-output-dir",
            "out",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep"));
}
