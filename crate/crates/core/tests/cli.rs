use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fmscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmscale")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SEARCH: &str = r#"
seeds = [0, 1, 2]

[target]
preset = "two_component_2d"

[stepper]
method = "dmfm_ode"
n_steps = 20

[search]
algorithm = "noise_search"
scaling_factors = [1, 2, 4]
"#;

#[test]
fn search_is_byte_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "search.toml", SEARCH);
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "8", "8"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let o = fmscale(&["search", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(fs::read(out.join("search_runs.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[1], csvs[2]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn manifest_replays_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "search.toml", SEARCH);
    let first = tmp.path().join("first");
    assert!(fmscale(&["search", "--config", &cfg, "--out", first.to_str().unwrap()]).status.success());
    let manifest = first.join("manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "search");
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "search_runs.csv"));

    let second = tmp.path().join("second");
    let o = fmscale(&["search", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(first.join("search_runs.csv")).unwrap(), fs::read(second.join("search_runs.csv")).unwrap());
}

#[test]
fn sample_writes_one_row_per_particle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "sample.toml",
        "seeds = [4, 5]\n[target]\npreset = \"single_gaussian\"\nmean = [1.0, -1.0, 0.5]\nvariance = 0.3\n\
         [stepper]\nmethod = \"sde\"\nn_steps = 10\n[sample]\nn_groups = 3\ngroup_size = 2\n",
    );
    let out = tmp.path().join("o");
    let o = fmscale(&["sample", "--config", &cfg, "--out", out.to_str().unwrap(), "--emit", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x_1,x_2,x_3,group_id,seed");
    assert_eq!(lines.count(), 2 * 3 * 2);
}

#[test]
fn config_errors_exit_with_two_and_name_the_location() {
    let tmp = TempDir::new().unwrap();
    let missing = write(tmp.path(), "a.toml", "seeds = [0]\n[stepper]\nn_steps = 20\n");
    let o = fmscale(&["sample", "--config", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target"), "{}", String::from_utf8_lossy(&o.stderr));

    let typo = write(tmp.path(), "b.toml", "[target]\npreset = \"two_component_2d\"\n[stepper]\nn_stepz = 20\n");
    let o = fmscale(&["sample", "--config", &typo]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("n_stepz") && err.contains("4:"), "{err}");

    let o = fmscale(&["sample"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fmscale(&["bogus-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_math_exit_code_follows_the_suites() {
    let tmp = TempDir::new().unwrap();
    let ok = write(tmp.path(), "ok.toml", "[target]\npreset = \"two_component_2d\"\n[verify]\nn_probes = 200\n");
    let out = tmp.path().join("ok");
    let o = fmscale(&["verify-math", "--config", &ok, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("verify_report.json").exists());

    let bad = write(
        tmp.path(),
        "bad.toml",
        "[target]\npreset = \"two_component_2d\"\n[verify]\nn_probes = 200\nunprojected = true\n",
    );
    let out = tmp.path().join("bad");
    let o = fmscale(&["verify-math", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL continuity"));
}
