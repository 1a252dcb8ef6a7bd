use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.m"))
}

fn gridbatch(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridbatch"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GRIDBATCH_WORKERS")
        .output()
        .unwrap()
}

fn results(out: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(out.join("results.csv")).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn case2() -> String {
    fixture("case2").display().to_string()
}

#[test]
fn run_two_bus_writes_one_converged_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridbatch(&["run", &case2()], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = results(dir.path());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "converged");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status_counts"]["converged"], 1);
}

#[test]
fn islanding_outage_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("outages.txt");
    std::fs::write(&list, "# the only line\n1\n").unwrap();
    let o = gridbatch(
        &["contingency", &case2(), "--outages", list.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = results(dir.path());
    assert_eq!(
        (rows[0][1].as_str(), rows[0][4].as_str()),
        ("islanded", "1")
    );
}

#[test]
fn malformed_case_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.m");
    let text = std::fs::read_to_string(fixture("case2"))
        .unwrap()
        .replace("60\t25", "6x0\t25");
    std::fs::write(&bad, text).unwrap();
    let o = gridbatch(&["run", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 10"), "{err}");
}

#[test]
fn unsolvable_load_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.csv");
    std::fs::write(&scenario, "bus:2:p\n60\n50000\n").unwrap();
    let o = gridbatch(
        &["run", &case2(), "--scenario", scenario.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let rows = results(dir.path());
    assert_eq!(rows[0][1], "converged");
    assert_ne!(rows[1][1], "converged");
}

#[test]
fn bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        gridbatch(&["run", &case2(), "--tol", "-1"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        gridbatch(&["run", &case2(), "--ordering", "rcm"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        gridbatch(&["run", "/nonexistent/case.m"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn montecarlo_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.csv");
    std::fs::write(
        &spec,
        "bus,quantity,dist,a,b\n*,p,normal,1.0,0.1\n*,q,uniform,0.9,1.1\n",
    )
    .unwrap();
    let case = fixture("case30").display().to_string();
    let args = [
        "montecarlo",
        &case,
        "--spec",
        spec.to_str().unwrap(),
        "--tasks",
        "300",
        "--seed",
        "5",
        "--voltages",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(gridbatch(&args, &a).status.code(), Some(0));
    assert_eq!(gridbatch(&args, &b).status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("results.csv")).unwrap(),
        std::fs::read(b.join("results.csv")).unwrap()
    );
}

#[test]
fn workers_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gridbatch"))
        .args(["run", &case2(), "--emit", "json", "--out"])
        .arg(dir.path())
        .env("GRIDBATCH_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["workers"], 3);
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn bench_reports_every_phase_and_stable_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case14").display().to_string();
    let args = [
        "bench",
        &case,
        "--tasks",
        "200",
        "--sweep-widths",
        "1,4",
        "--sweep-workers",
        "1,2",
        "--sweep-scatter",
        "direct,copy",
    ];
    let read = |d: &Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(d.join("bench.json")).unwrap()).unwrap()
    };
    assert_eq!(
        gridbatch(&args, &dir.path().join("a")).status.code(),
        Some(0)
    );
    assert_eq!(
        gridbatch(&args, &dir.path().join("b")).status.code(),
        Some(0)
    );
    let (a, b) = (read(&dir.path().join("a")), read(&dir.path().join("b")));
    let runs = a["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 8);
    for phase in [
        "init",
        "scatter",
        "npm",
        "jacobian",
        "refactorize",
        "fsbs",
        "flows",
    ] {
        assert!(runs[0]["phases"][phase].as_f64().unwrap() >= 0.0, "{phase}");
    }
    let sums = |v: &serde_json::Value| {
        v["runs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["checksum"].clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(sums(&a), sums(&b));
    // widths, worker counts and scatter paths do not change results
    assert!(sums(&a).iter().all(|c| *c == sums(&a)[0]));
}

#[test]
fn inspect_emits_level_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case30").display().to_string();
    let o = gridbatch(&["inspect", &case], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("53x53"), "{stdout}");
    let mut r = csv::Reader::from_path(dir.path().join("levels.csv")).unwrap();
    let total: usize = r
        .records()
        .map(|rec| rec.unwrap()[1].parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 53);
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("structure.json")).unwrap()).unwrap();
    assert_eq!(
        s["fill_in"].as_u64().unwrap() + s["jacobian_nnz"].as_u64().unwrap(),
        s["lu_nnz"].as_u64().unwrap()
    );
}
