use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STRONG_MODEL: &str = r#"
[model]
detuning = 0.245
rabi = 0.05
gamma = 0.05

[[model.modes]]
energy = 2.0
coupling = 0.7
damping = 2.0
truncation = 4
"#;

const CORRELATOR: &str = r#"
[correlator]
final_time = 80.0
initial = "excited"
measure = "sigma-plus"
events = [
  { kind = "sandwich", time = 5.0, left = "sigma-minus", right = "identity" },
  { kind = "sandwich", time = 40.0, left = "sigma-plus", right = "sigma-plus" },
]
"#;

fn scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn nmcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmcorr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn correlator_scenario(tolerances: &str) -> String {
    format!(
        "task = \"correlator\"\nengines = [\"oracle\", \"factorized\"]\n{STRONG_MODEL}\n[numerics]\ndt = 0.1\nt_max = 60.0\n{tolerances}\n{CORRELATOR}"
    )
}

#[test]
fn run_writes_artifacts_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "c.toml", &correlator_scenario(""));
    let out_dir = dir.path().join("out");
    let out = nmcorr(&["run", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "manifest.json",
        "timing.csv",
        "correlator_oracle.csv",
        "correlator_factorized.csv",
    ] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["task"], "correlator");
    assert_eq!(manifest["inputs_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["maps"]["tau_c"].as_f64().unwrap() > 20.0);
    let timing = fs::read_to_string(out_dir.join("timing.csv")).unwrap();
    assert!(timing.starts_with("engine,wall_time_s,temporal_volume_ps"));
}

#[test]
fn engine_disagreement_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let ladder = "[numerics.tolerances]\nmap = 1e-10\ncorrelator = 1e-30\nobservable = 1e-6\n";
    let cfg = scenario(dir.path(), "c.toml", &correlator_scenario(ladder));
    let out = nmcorr(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = correlator_scenario("").replace("t_max = 60.0", "t_max = 60.0\ntmax = 60.0");
    let cfg = scenario(dir.path(), "c.toml", &body);
    let out = nmcorr(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tmax"));
}

#[test]
fn unphysical_parameter_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = correlator_scenario("").replace("gamma = 0.05", "gamma = -0.05");
    let cfg = scenario(dir.path(), "c.toml", &body);
    let out = nmcorr(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let out = nmcorr(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn oversized_embedding_hits_the_resource_cap() {
    let dir = tempfile::tempdir().unwrap();
    let body = correlator_scenario("").replace("truncation = 4", "truncation = 20");
    let cfg = scenario(dir.path(), "c.toml", &body);
    let out = nmcorr(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn identical_runs_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "c.toml", &correlator_scenario(""));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = nmcorr(&[
            "run",
            cfg.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--threads",
            "1",
        ]);
        assert_eq!(code(&out), 0);
    }
    for file in ["correlator_oracle.csv", "correlator_factorized.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn cached_maps_are_reused_with_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "c.toml", &correlator_scenario(""));
    let cache = dir.path().join("cache");
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    for out_dir in [&first, &second] {
        let out = nmcorr(&[
            "run",
            cfg.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--cache-dir",
            cache.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let file = "correlator_factorized.csv";
    assert_eq!(
        fs::read(first.join(file)).unwrap(),
        fs::read(second.join(file)).unwrap()
    );
}

#[test]
fn seed_flag_controls_random_events() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "task = \"correlator\"\nengines = [\"factorized\"]\n{STRONG_MODEL}\n[numerics]\ndt = 0.1\nt_max = 60.0\n\n[correlator]\nfinal_time = 120.0\nrandom = {{ count = 3 }}\n"
    );
    let cfg = scenario(dir.path(), "r.toml", &body);
    let read = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = nmcorr(&[
            "run",
            cfg.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("correlator_factorized.csv")).unwrap()
    };
    assert_eq!(read("11", "a"), read("11", "b"));
    assert_ne!(read("11", "c"), read("12", "d"));
}

#[test]
fn bench_with_one_engine_has_no_comparison_column() {
    let dir = tempfile::tempdir().unwrap();
    let body = correlator_scenario("").replace(r#"["oracle", "factorized"]"#, r#"["factorized"]"#)
        + "\n[bench]\nrepeats = 1\n";
    let cfg = scenario(dir.path(), "b.toml", &body);
    let out_dir = dir.path().join("o");
    let out = nmcorr(&[
        "bench",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(!table.lines().next().unwrap().contains("speedup"));
}

#[test]
fn bench_reports_speedup_against_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let body = correlator_scenario("") + "\n[bench]\nrepeats = 1\n";
    let cfg = scenario(dir.path(), "b.toml", &body);
    let out_dir = dir.path().join("o");
    let out = nmcorr(&[
        "bench",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let table = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    assert!(table.lines().next().unwrap().contains("speedup"));
    assert_eq!(table.lines().count(), 3);
}
