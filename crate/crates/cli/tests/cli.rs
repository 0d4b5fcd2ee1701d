use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cachescope"));
    // keep the caller's environment from leaking into the config
    for (k, _) in std::env::vars() {
        if k.starts_with("CACHESCOPE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, kind: &str, seed: u64) -> PathBuf {
    let p = dir.join(format!("{kind}-{seed}.trace"));
    let o = run(bin().args(["gen", "--kind", kind, "--seed", &seed.to_string(), "-o"]).arg(&p));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

fn structured(dir: &Path, cmd: &str, trace: &Path) -> PathBuf {
    let p = dir.join(format!("{}.{cmd}.json", trace.file_stem().unwrap().to_string_lossy()));
    let o = run(bin().args([cmd, "--format", "structured", "-o"]).arg(&p).arg(trace));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn gen_is_deterministic() {
    let d = TempDir::new().unwrap();
    let a = std::fs::read(gen(d.path(), "true-sharing", 4)).unwrap();
    let b = run(bin().args(["gen", "--kind", "true-sharing", "--seed", "4"])).stdout;
    assert_eq!(a, b);
    let c = std::fs::read(gen(d.path(), "true-sharing", 5)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn gen_rejects_impossible_geometry() {
    let o = run(bin().args(["gen", "--kind", "conflict-stride", "--lines", "8", "--assoc", "8"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn baseline_has_no_issues() {
    let d = TempDir::new().unwrap();
    let t = gen(d.path(), "baseline", 1);
    let o = run(bin().arg("profile").arg(&t));
    assert!(o.status.success());
    assert!(text(&o).contains("no significant issues"));
}

#[test]
fn profile_reads_stdin() {
    let d = TempDir::new().unwrap();
    let t = gen(d.path(), "false-sharing", 1);
    let o = run(bin()
        .args(["profile", "-"])
        .stdin(std::fs::File::open(&t).unwrap()));
    assert!(o.status.success());
    assert!(text(&o).contains("AppFalseSharing"));
}

#[test]
fn compare_matches_and_names_mislabels() {
    let d = TempDir::new().unwrap();
    let t = gen(d.path(), "conflict-stride", 1);
    let rep = structured(d.path(), "profile", &t);
    let orc = structured(d.path(), "oracle", &t);
    let o = run(bin().arg("compare").arg(&rep).arg(&orc));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("1/1 matched"));

    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&rep).unwrap()).unwrap();
    v["issues"][0]["miss_type"] = "AppCapacity".into();
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_vec(&v).unwrap()).unwrap();
    let o = run(bin().arg("compare").arg(&bad).arg(&orc));
    assert_eq!(o.status.code(), Some(1));
    let out = text(&o);
    assert!(out.contains("ConflictStride"), "{out}");
    assert!(out.contains("mislabeled: expected AppConflict, reported AppCapacity"), "{out}");
}

#[test]
fn compare_refuses_mismatched_traces() {
    let d = TempDir::new().unwrap();
    let a = gen(d.path(), "true-sharing", 1);
    let b = gen(d.path(), "true-sharing", 2);
    let rep = structured(d.path(), "profile", &a);
    let orc = structured(d.path(), "oracle", &b);
    let o = run(bin().arg("compare").arg(&rep).arg(&orc));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trace id mismatch"));
}

fn config_of(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    v["config"].clone()
}

#[test]
fn config_precedence() {
    let d = TempDir::new().unwrap();
    let t = gen(d.path(), "baseline", 1);
    let file = d.path().join("run.conf");
    std::fs::write(&file, "# tuning\nload_period = 3000\nwindow = 500\nexpiry_events = 9000\n").unwrap();
    let profile = || {
        let mut c = bin();
        c.args(["profile", "--format", "structured"]).arg(&t);
        c
    };

    let c = config_of(&run(profile().arg("--config").arg(&file)));
    assert_eq!(c["sampler"]["load_period"], 3000);
    assert_eq!(c["window_size"], 500);

    // env beats file, flags beat env
    let c = config_of(&run(profile()
        .env("CACHESCOPE_CONFIG", &file)
        .env("CACHESCOPE_LOAD_PERIOD", "4000")
        .env("CACHESCOPE_WINDOW", "700")
        .args(["--window", "900", "--set", "expiry-events=12345"])));
    assert_eq!(c["sampler"]["load_period"], 4000);
    assert_eq!(c["window_size"], 900);
    assert_eq!(c["breakpoint"]["expiry_events"], 12345);
}

#[test]
fn bad_config_is_an_error() {
    let d = TempDir::new().unwrap();
    let t = gen(d.path(), "baseline", 1);
    for args in [["--set", "no_such_key=1"], ["--set", "window_ratio=-1"]] {
        let o = run(bin().arg("profile").arg(&t).args(args));
        assert_eq!(o.status.code(), Some(2));
    }
    let o = run(bin().args(["profile", "/nonexistent/trace"]));
    assert_eq!(o.status.code(), Some(2));
}
