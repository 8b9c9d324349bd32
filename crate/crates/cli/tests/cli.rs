use std::fs;
use std::path::Path;
use std::process::Command;

use iscap_cli::{run_spec, ExperimentSpec, MethodKind, RunOptions};

fn spec(text: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml(text, Path::new("inline.toml")).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

const SWEEP: &str = r#"
trials = 3
seed = 10
methods = ["zf", "round_robin"]
[sweep]
axis = "power_uw"
values = [0, 0.5, 1, 2, 4]
"#;

#[test]
fn five_points_three_seeds_two_methods_give_thirty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_owned()),
        ..RunOptions::default()
    };
    let summary = run_spec(&spec(SWEEP), &opts).unwrap();
    assert_eq!(summary.outcomes.len(), 30);
    assert_eq!(summary.exit_code(), 0);

    let results = read(dir.path(), "results.csv");
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);
    assert_eq!(
        results.lines().next().unwrap(),
        "axis,axis_value,seed,method,norm_error,matching_error,min_rate,min_er_power,status,iterations"
    );
    // canonical order: point, then seed, then method
    assert!(rows[0].starts_with("power_uw,0,10,zf,"));
    assert!(rows[1].starts_with("power_uw,0,10,round_robin,"));
    assert!(rows[2].starts_with("power_uw,0,11,zf,"));
    assert!(rows[29].starts_with("power_uw,4,12,round_robin,"));

    let plot = read(dir.path(), "plot/error_vs_axis.csv");
    assert_eq!(plot.lines().count(), 1 + 10);
    assert_eq!(read(dir.path(), "bounds.csv").lines().count(), 1 + 5);
    assert!(dir.path().join("beampattern/point4_zf.csv").exists());
    assert!(dir.path().join("timing/results.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let text = r#"
trials = 2
methods = ["sca", "zf", "time_switching"]
[sweep]
axis = "rate_kbps"
values = [0, 240]
"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec(text);
    for (dir, workers) in [(&a, 1), (&b, 3)] {
        let opts = RunOptions {
            out: Some(dir.path().to_owned()),
            workers: Some(workers),
            sense: true,
            ..RunOptions::default()
        };
        run_spec(&s, &opts).unwrap();
    }
    for name in [
        "results.csv",
        "bounds.csv",
        "failures.csv",
        "sensing.csv",
        "plot/error_vs_axis.csv",
        "plot/beampattern_point1.csv",
        "beampattern/point0_sca.csv",
        "sensing/point1_zf.csv",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn infeasible_points_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    // one watt at the ER is far beyond reach
    let text = "methods = [\"sca\", \"zf\"]\n[sweep]\naxis = \"power_uw\"\nvalues = [1, 1000000]\n";
    let opts = RunOptions {
        out: Some(dir.path().to_owned()),
        methods: Some(vec![MethodKind::Sca]),
        ..RunOptions::default()
    };
    let summary = run_spec(&spec(text), &opts).unwrap();
    assert_eq!(summary.outcomes.len(), 2);
    assert_eq!(summary.exit_code(), 0);
    let results = read(dir.path(), "results.csv");
    assert!(results.lines().nth(1).unwrap().contains(",sca,"));
    assert!(results.lines().nth(1).unwrap().contains(",optimal,"), "{results}");
    assert!(results.lines().nth(2).unwrap().contains(",infeasible,"), "{results}");
    let plot = read(dir.path(), "plot/error_vs_axis.csv");
    let last = plot.lines().last().unwrap();
    assert!(last.ends_with(",0,1,all_failed"), "{last}");
    assert!(last.contains(",sca,,,,,"), "{last}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_iscap");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "trials = 1\n[scenario]\nn_tx = -4\n").unwrap();
    let out = Command::new(bin).arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");

    let good = dir.path().join("good.toml");
    fs::write(&good, "methods = [\"zf\"]\n").unwrap();
    let out = Command::new(bin)
        .args(["run", good.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let results = read(&dir.path().join("out"), "results.csv");
    assert!(results.lines().nth(1).unwrap().starts_with("none,,0,zf,"));
}
