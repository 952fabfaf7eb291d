use std::path::Path;
use std::process::{Command, Output};

fn wavelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavelab")).args(args).output().expect("binary runs")
}

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_checksummed_outputs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ids");
    let o = wavelab(&["run", &example("identities.cfg"), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let listed = stdout(&o);
    assert!(!listed.is_empty());
    for line in listed.lines() {
        let (sum, path) = line.split_once("  ").unwrap();
        assert_eq!(sum.len(), 64);
        assert!(out.join(path).exists(), "{path}");
    }
    assert!(out.join("manifest.json").exists());

    let v = wavelab(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));

    let first = listed.lines().next().unwrap().split_once("  ").unwrap().1;
    std::fs::write(out.join(first), "tampered").unwrap();
    let v = wavelab(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&v.stderr).contains(first));
}

#[test]
fn parallel_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = wavelab(&[
            "channels",
            "-c",
            &example("channels_random.cfg"),
            "--set",
            "count=8",
            "--set",
            "T=3",
            "--set",
            "dims=3,5",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let a = run("a");
    let b = run("b");
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn invalid_configs_exit_with_one() {
    let cases: [&[&str]; 4] = [
        &["shoot", "--set", "ell=0"],
        &["shoot", "--set", "ell=1", "--set", "no.such.key=3"],
        &["shoot", "-c", &example("identities.cfg")],
        &["run", "/nonexistent/config.cfg"],
    ];
    for args in cases {
        let o = wavelab(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config"));
    }
}

#[test]
fn runtime_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("coarse");
    // too coarse a sampling for the plug-back residual bound
    let o = wavelab(&[
        "shoot", "--set", "ell=4", "--set", "n=3", "--set", "sample_step=0.01", "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("residual"));
    assert!(!out.join("manifest.json").exists());

    let v = wavelab(&["verify", dir.path().to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(2));
}

#[test]
fn unusable_output_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let o = wavelab(&["run", &example("identities.cfg"), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wavelab"))
        .args(["tabulate-coefficients", "--set", "dims=3..7", "--set", "output.dir=tab"])
        .env("WAVELAB_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("tab").join("manifest.json").exists());
}
