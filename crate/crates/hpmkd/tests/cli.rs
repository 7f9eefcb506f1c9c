//! End-to-end checks of the binary: experiment files, flags, report
//! bundles, determinism, history accounting, and exit codes.

use std::path::Path;
use std::process::Command;

fn hpmkd_in(dir: &Path) -> Command {
    // Run inside the test's tempdir so default artifacts (for example the
    // history file) never land in the repository.
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hpmkd"));
    cmd.current_dir(dir);
    cmd
}

fn write_experiment(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let base = "\
dataset = synth
synth.n = 600
synth.classes = 4
synth.dim = 8
synth.spread = 1.5
teacher.count = 2
teacher.hidden = 48,24
teacher.epochs = 8
student.hidden = 8
config = manual
config.t0 = 4.0
config.alpha = 0.5
config.lr = 0.05
config.epochs = 6
train.batch_size = 64
workers = 2
master_seed = 42
reps = 3
";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

#[test]
fn run_writes_bundle_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(dir.path(), "demo.exp", "");
    let out = dir.path().join("out");
    let status = hpmkd_in(dir.path())
        .arg("run")
        .arg(&exp)
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "summary.txt",
        "metrics.txt",
        "timing.txt",
        "attention.log",
        "chain.txt",
        "embeddings.bin",
        "embeddings.labels",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("mean ± std"));
}

#[test]
fn identical_runs_have_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(dir.path(), "det.exp", "");
    for out in ["a", "b"] {
        let status = hpmkd_in(dir.path())
            .arg("run")
            .arg(&exp)
            .arg("--output")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir.path().join("a/metrics.txt")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.txt")).unwrap();
    assert_eq!(a, b, "metrics.txt must be byte-identical across reruns");
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(dir.path(), "workers.exp", "");
    for (out, workers) in [("w1", "1"), ("w4", "4")] {
        let status = hpmkd_in(dir.path())
            .arg("run")
            .arg(&exp)
            .arg("--workers")
            .arg(workers)
            .arg("--output")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read_to_string(dir.path().join("w1/metrics.txt")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("w4/metrics.txt")).unwrap();
    // Workers are echoed into the metrics; everything else must agree.
    let strip = |s: &str| -> String {
        s.lines()
            .filter(|l| !l.starts_with("workers="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b), "results depend on worker count");
}

#[test]
fn one_history_record_per_repetition() {
    let dir = tempfile::tempdir().unwrap();
    // Overlapping clusters keep per-repetition accuracies distinct;
    // identical entries would deduplicate by design.
    let exp = write_experiment(
        dir.path(),
        "hist.exp",
        "synth.n = 1200\nsynth.spread = 3.0\nmaster_seed = 7\n",
    );
    let history = dir.path().join("history.txt");
    let status = hpmkd_in(dir.path())
        .arg("run")
        .arg(&exp)
        .arg("--history-file")
        .arg(&history)
        .arg("--output")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    let lines = std::fs::read_to_string(&history).unwrap();
    assert_eq!(
        lines.lines().count(),
        3,
        "expected one history record per repetition"
    );
}

#[test]
fn validation_failure_exits_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.exp");
    std::fs::write(&path, "teacher.count = many\nreps = 0\n").unwrap();
    let output = hpmkd_in(dir.path()).arg("run").arg(&path).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("teacher.count"), "{stderr}");
    assert!(stderr.contains("reps"), "{stderr}");
}

#[test]
fn diverging_run_reports_failure_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // A huge learning rate makes training blow up into non-finite
    // gradients, which must surface as per-repetition failures.
    let exp = write_experiment(dir.path(), "explode.exp", "teacher.lr = 1e9\n");
    let output = hpmkd_in(dir.path())
        .arg("run")
        .arg(&exp)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "want exit 2 for failed reps");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("FAILED rep"), "{stdout}");
}

#[test]
fn ablate_flag_overrides_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let exp = write_experiment(dir.path(), "ab.exp", "");
    let out = dir.path().join("out");
    let status = hpmkd_in(dir.path())
        .arg("run")
        .arg(&exp)
        .arg("--ablate")
        .arg("prog_chain,meta_temp")
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(metrics.contains("ablation=prog_chain,meta_temp"), "{metrics}");
    // No chain: exactly teacher + student stages.
    assert!(metrics.contains("rep0.stages=2"), "{metrics}");
}

#[test]
fn unknown_suite_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = hpmkd_in(dir.path())
        .arg("suite")
        .arg("nonsense")
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown suite"), "{stderr}");
}

#[test]
fn robustness_suite_emits_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    // Cheap but large enough that the 100:1 cell keeps two or more
    // samples in the smallest class after the validation carve.
    let exp = write_experiment(
        dir.path(),
        "rob.exp",
        "reps = 1\nsynth.n = 1000\nteacher.epochs = 4\nconfig.epochs = 3\n",
    );
    let out = dir.path().join("rob-out");
    let output = hpmkd_in(dir.path())
        .arg("suite")
        .arg("robustness")
        .arg("--experiment")
        .arg(&exp)
        .arg("--cache-dir")
        .arg(dir.path().join("cache"))
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let table = std::fs::read_to_string(out.join("suite.txt")).unwrap();
    for noise in ["0.0", "0.1", "0.2", "0.3"] {
        for imb in ["1", "10", "50", "100"] {
            assert!(
                table.contains(&format!("noise{noise}_imb{imb}")),
                "missing grid cell noise{noise} imb{imb} in:\n{table}"
            );
        }
    }
}
