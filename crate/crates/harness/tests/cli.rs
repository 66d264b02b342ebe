//! Drives the `overlap` binary: run, compare and report, exit codes and
//! output-root handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_RUN: &str = "\
# tiny second-moment run
version = 1
experiment = custom
n = 24
ensemble = goe
sigma_w = 0.5
realizations = 120
master_seed = 4
rows = 6, 12, 18
";

fn overlap(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_overlap"));
    cmd.args(args).env_remove("OVERLAP_OUTPUT_ROOT");
    if let Some(r) = root {
        cmd.env("OVERLAP_OUTPUT_ROOT", r);
    }
    cmd.output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, body).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn semicircle_run_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/semicircle.conf");
    let out = tmp.path().join("semi");
    let o = overlap(&["run", path_str(&config), "--output", path_str(&out)], None);
    let stdout = text(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", text(&o.stderr));
    assert!(stdout.contains("PASS  semicircle_center"), "{stdout}");
    assert!(stdout.contains("overall: PASS"));
    for f in ["config.txt", "report.csv", "summary.json", "solution_s0.csv", "semicircle_s0.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let again = overlap(&["report", path_str(&out)], None);
    assert_eq!(again.status.code(), Some(0));
    assert!(text(&again.stdout).contains("semicircle_profile"));
}

#[test]
fn reruns_and_thread_counts_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (dir, threads) in dirs.iter().zip(["1", "1", "2"]) {
        let o = overlap(&["run", path_str(&config), "--output", path_str(dir), "--threads", threads], None);
        assert!(matches!(o.status.code(), Some(0 | 1)), "{}", text(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy() == "mc_second_s0.csv"));
    for name in &names {
        let reference = std::fs::read(dirs[0].join(name)).unwrap();
        for other in &dirs[1..] {
            assert_eq!(reference, std::fs::read(other.join(name)).unwrap(), "{name:?} differs");
        }
    }
}

#[test]
fn seed_override_changes_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    overlap(&["run", path_str(&config), "--output", path_str(&a)], None);
    overlap(&["run", path_str(&config), "--output", path_str(&b), "--seed", "5"], None);
    let ca = std::fs::read_to_string(a.join("config.txt")).unwrap();
    let cb = std::fs::read_to_string(b.join("config.txt")).unwrap();
    assert!(cb.contains("master_seed = 5"));
    assert_ne!(ca, cb);
}

#[test]
fn compare_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let out = tmp.path().join("run");
    overlap(&["run", path_str(&config), "--output", path_str(&out)], None);
    let mc = out.join("mc_second_s0.csv");

    let same = overlap(&["compare", path_str(&mc), path_str(&mc)], None);
    assert_eq!(same.status.code(), Some(0), "{}", text(&same.stdout));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "n,m,i,q,value,mode\n0,0,0,0,1.0,x\n").unwrap();
    let mismatch = overlap(&["compare", path_str(&mc), path_str(&bad)], None);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(text(&mismatch.stderr).contains("\"q\""), "{}", text(&mismatch.stderr));
}

#[test]
fn report_on_empty_directory_lists_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = overlap(&["report", path_str(tmp.path())], None);
    assert_eq!(o.status.code(), Some(2));
    let err = text(&o.stderr);
    for f in ["config.txt", "report.csv", "summary.json"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{SMALL_RUN}colour = blue\n"));
    let o = overlap(&["run", path_str(&config)], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("colour"), "{}", text(&o.stderr));
}

#[test]
fn relative_output_lands_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let root = tmp.path().join("root");
    let o = overlap(&["run", path_str(&config), "--output", "nested/run"], Some(&root));
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", text(&o.stderr));
    assert!(root.join("nested/run/summary.json").is_file());
}
