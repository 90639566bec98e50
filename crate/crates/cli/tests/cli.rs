use std::path::Path;
use std::process::{Command, Output};

fn vucal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vucal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn init_toy_then_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = vucal(
        &[
            "init-toy",
            "--out",
            "toy",
            "--seed",
            "1",
            "--questions",
            "30",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let cfg = "toy/config.json";
    let o = vucal(&["ingest-check", "--config", cfg], d);
    assert!(stdout(&o).contains("30 records ok"), "{o:?}");
    for stage in ["sample", "score", "extract-vuf", "cosine"] {
        let o = vucal(&[stage, "--config", cfg], d);
        assert!(o.status.success(), "{stage}: {o:?}");
    }
    let o = vucal(&["pca", "--config", cfg], d);
    assert!(stdout(&o).starts_with("pca: layer 2"), "{o:?}");
}

#[test]
fn run_all_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(vucal(&["init-toy", "--out", "toy", "--questions", "30"], d)
        .status
        .success());
    let a = vucal(&["run-all", "--config", "toy/config.json", "--out", "a"], d);
    let b = vucal(&["run-all", "--config", "toy/config.json", "--out", "b"], d);
    assert!(a.status.success(), "{a:?}");
    assert_eq!(stdout(&a), stdout(&b));
    let mut names: Vec<_> = std::fs::read_dir(d.join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in names {
        let pa = d.join("a").join(&n);
        if pa.is_file() {
            assert_eq!(
                std::fs::read(&pa).unwrap(),
                std::fs::read(d.join("b").join(&n)).unwrap()
            );
        }
    }
}

#[test]
fn missing_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = vucal(&["run-all", "--config", "absent.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vucal(&["frobnicate"], dir.path());
    assert!(!o.status.success());
}
