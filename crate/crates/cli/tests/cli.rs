use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
system = "kdv"
seed = 3
noise = [0.1, 0.2]

[grid]
boundary = "periodic"
x = { min = -1.0, max = 1.0, n = 64 }
t = { min = 0.0, max = 1.0, n = 21 }

[bmu]
steps = 40

[propagate]
draws = 30
"#;

const POPULATION: &str = r#"
system = "kdv"
seed = 5

[grid]
boundary = "periodic"
x = { min = -1.0, max = 1.0, n = 64 }
t = { min = 0.0, max = 1.0, n = 21 }

[population]
size = 3
std = [0.05, 0.0002]
max_noise = 0.3

[hbi.sampler]
steps = 20
"#;

fn pesbl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pesbl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

/// simulate, learn, bmu, propagate and diagnose on the small config.
fn pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::write(dir.join("run.toml"), SMALL).unwrap();
    let cfg = ["--config", "run.toml", "--out", "out"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = cfg.iter().chain(extra).copied().collect();
        pesbl(dir, &args)
    };
    let o = run(&["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["learn", "out/noisy_0.10.txt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["bmu", "out/noisy_0.10.txt", "--model", "out/model.toml"]);
    assert!([0, 4].contains(&code(&o)), "{}", stderr(&o));
    let o = run(&[
        "propagate",
        "out/noisy_0.10.txt",
        "--posterior",
        "out/posterior.toml",
        "--trace",
        "out/bmu_trace.csv",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["diagnose", "out/posterior.toml", "out/posterior.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    files(&dir.join("out"))
}

#[test]
fn pipeline_writes_every_stage_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(dir.path());
    let names: Vec<&str> = out.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "bmu_trace.csv",
            "clean.txt",
            "envelope.csv",
            "envelope.toml",
            "ll_trace.csv",
            "manifest.toml",
            "model.toml",
            "noisy_0.10.txt",
            "noisy_0.20.txt",
            "posterior.toml",
            "shift.toml",
        ]
    );
    let envelope = String::from_utf8(out["envelope.toml"].clone()).unwrap();
    assert!(envelope.contains("\"posterior.toml\" = \"sha256:"));
    assert!(envelope.contains("draws = 30"));
    let rows = String::from_utf8(out["envelope.csv"].clone()).unwrap();
    assert_eq!(rows.lines().next(), Some("coordinate,mean,std,truth"));
    // Periodic evidence keeps every second grid point.
    assert_eq!(rows.lines().count(), 1 + 32);
}

#[test]
fn same_config_reproduces_every_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn seed_override_changes_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    for (seed, out) in [("3", "a"), ("4", "b")] {
        let o = pesbl(
            dir.path(),
            &[
                "--config", "run.toml", "--seed", seed, "--out", out, "simulate",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "clean.txt"), read("b", "clean.txt"));
    assert_ne!(read("a", "noisy_0.10.txt"), read("b", "noisy_0.10.txt"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = pesbl(p, &["--config", "absent.toml", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.toml"));

    fs::write(p.join("typo.toml"), "sytem = \"kdv\"\n").unwrap();
    let o = pesbl(p, &["--config", "typo.toml", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sytem"), "{}", stderr(&o));

    fs::write(p.join("neg.toml"), "noise = [-0.1]\n").unwrap();
    let o = pesbl(p, &["--config", "neg.toml", "simulate"]);
    assert_eq!(code(&o), 2);

    let o = pesbl(p, &["--out", "o", "learn", "nowhere.txt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.txt"));

    let o = pesbl(p, &["verify", "--only", "99"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn population_manifest_feeds_hierarchical_inference() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("pop.toml"), POPULATION).unwrap();
    let cfg = ["--config", "pop.toml", "--out", "out"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = cfg.iter().chain(extra).copied().collect();
        pesbl(p, &args)
    };
    let o = run(&["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(p.join("out/manifest.toml")).unwrap();
    assert_eq!(manifest.matches("[[datasets]]").count(), 3);
    let o = run(&["learn", "out/population_00.txt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["hbi", "out/manifest.toml", "--model", "out/model.toml"]);
    assert!([0, 4].contains(&code(&o)), "{}", stderr(&o));
    for k in 0..3 {
        assert!(p.join(format!("out/test_{k:02}.toml")).exists());
    }
    let report = fs::read_to_string(p.join("out/hbi.toml")).unwrap();
    assert!(report.contains("\"population_02.txt\" = \"sha256:"));
}

#[test]
fn verify_runs_a_selected_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let o = pesbl(dir.path(), &["verify", "--only", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("criterion  8 PASS"), "{text}");
    assert_eq!(text.matches("[ok]").count(), 5);
}
