use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use delaycea::report::{Report, Status};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delaycea"))
        .current_dir(dir)
        .env_remove("DELAYCEA_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const GOLDEN_ARGS: [&str; 20] = [
    "cea",
    "--input",
    "fixture.csv",
    "--eta",
    "5",
    "--scenario",
    "dly",
    "--a",
    "0.5",
    "--costs",
    "115,330",
    "--theta",
    "1352",
    "--theta-grid",
    "0:2000:500",
    "--eta-grid",
    "3,4,5",
    "--precision",
    "6",
    "--threads=2",
];

#[test]
fn golden_reports_are_reproduced() {
    let dir = fixtures();
    let mut args = GOLDEN_ARGS.to_vec();
    args.extend(["--format", "jsonl"]);
    let o = run_in(&dir, &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden = std::fs::read_to_string(dir.join("cea_dly.jsonl")).unwrap();
    assert_eq!(stdout(&o), golden);

    let o = run_in(&dir, &GOLDEN_ARGS);
    assert_eq!(o.status.code(), Some(0));
    let golden = std::fs::read_to_string(dir.join("cea_dly.txt")).unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn golden_icer_agrees_with_hand_computation() {
    let text = std::fs::read_to_string(fixtures().join("cea_dly.jsonl")).unwrap();
    let report = Report::from_jsonl(&text).unwrap();
    let tail = |g: usize| {
        report
            .rmst
            .iter()
            .find(|r| r.group == g)
            .and_then(|r| r.tail_estimate)
            .unwrap()
    };
    let (t1, t2) = (tail(1), tail(2));
    let (c1, c2) = (115.0, 330.0);
    let icer = (c2 * t2 - c1 * t1) / (t2 - t1);
    let row = report.cea.iter().find(|r| r.measure == "icer").unwrap();
    assert!((row.estimate.unwrap() - icer).abs() < 1e-9 * icer.abs());
    let inb = report.cea.iter().find(|r| r.measure == "inb").unwrap();
    let expected = 1352.0 * (t2 - t1) - (c2 * t2 - c1 * t1);
    assert!((inb.estimate.unwrap() - expected).abs() < 1e-9);
    // The last point of the ICER-vs-η curve sits at the analysis horizon.
    let last = report
        .curves
        .iter()
        .rfind(|c| c.curve == "icer_vs_eta")
        .unwrap();
    assert_eq!(last.x, Some(5.0));
    assert_eq!(last.estimate, row.estimate);
}

#[test]
fn jsonl_round_trip_is_exact() {
    let text = std::fs::read_to_string(fixtures().join("cea_dly.jsonl")).unwrap();
    let report = Report::from_jsonl(&text).unwrap();
    assert_eq!(report.to_jsonl(), text);
    assert_eq!(Report::from_jsonl(&report.to_jsonl()).unwrap(), report);
}

#[test]
fn series_and_out_files_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r.jsonl");
    let series = tmp.path().join("s.csv");
    let mut args = GOLDEN_ARGS.to_vec();
    let (out_s, series_s) = (out.to_str().unwrap(), series.to_str().unwrap());
    args.extend(["--format", "jsonl", "--out", out_s, "--series", series_s]);
    let o = run_in(&fixtures(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let report = Report::from_jsonl(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let csv = std::fs::read_to_string(&series).unwrap();
    assert_eq!(csv.lines().count(), report.curves.len() + 1);
}

#[test]
fn scenario_parameter_mismatch_is_a_usage_error() {
    let o = run_in(
        &fixtures(),
        &[
            "rmst",
            "--input",
            "fixture.csv",
            "--eta",
            "5",
            "--scenario",
            "strt",
            "--a",
            "0.5",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--r"), "{}", stderr(&o));

    let o = run_in(
        &fixtures(),
        &[
            "rmst",
            "--input",
            "fixture.csv",
            "--scenario",
            "dly",
            "--a",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(1));

    let o = run_in(&fixtures(), &["rmst", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run_in(&fixtures(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn cea_requires_a_cost_for_every_group() {
    let o = run_in(
        &fixtures(),
        &[
            "cea",
            "--input",
            "fixture.csv",
            "--eta",
            "5",
            "--scenario",
            "dly",
            "--a",
            "0.5",
            "--costs",
            "115",
            "--theta",
            "1000",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_rows_are_reported_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = "id,entry,exit,event,group,delay,x\n\
               a,0,1.5,1,1,0,1\n\
               b,0,abc,1,1,0,0\n\
               c,0,2,1,1,0,1\n\
               d,1,0.5,0,1,0,1\n";
    std::fs::write(tmp.path().join("bad.csv"), csv).unwrap();
    let o = run_in(tmp.path(), &["fit", "--input", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("2 malformed row(s)"), "{err}");
    assert!(err.contains("line 3"), "{err}");

    let o = run_in(tmp.path(), &["fit", "--input", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn estimation_failure_exits_2_and_still_writes_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,entry,exit,event,group,delay,x\n");
    for i in 0..10 {
        csv.push_str(&format!(
            "s{i},0,{},0,{},0,{}\n",
            1.0 + i as f64,
            1 + i % 2,
            i % 3
        ));
    }
    std::fs::write(tmp.path().join("none.csv"), csv).unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "rmst",
            "--input",
            "none.csv",
            "--eta",
            "5",
            "--scenario",
            "strt",
            "--r",
            "0",
            "--format",
            "jsonl",
            "--out",
            "rep.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report =
        Report::from_jsonl(&std::fs::read_to_string(tmp.path().join("rep.jsonl")).unwrap())
            .unwrap();
    assert_eq!(report.meta.status, Status::Failed);
    assert!(!report.errors.is_empty());
}

/// Rewrites a counting-process file as one row per subject.
fn to_raw(counting: &str) -> String {
    let mut subjects: BTreeMap<String, (f64, String, Option<f64>, String)> = BTreeMap::new();
    for line in counting.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let exit: f64 = f[2].parse().unwrap();
        let e =
            subjects
                .entry(f[0].to_string())
                .or_insert((0.0, "0".into(), None, f[6].to_string()));
        if f[4] == "2" {
            e.2 = Some(f[5].parse().unwrap());
        }
        if exit >= e.0 {
            e.0 = exit;
            e.1 = f[3].to_string();
        }
    }
    let mut out = String::from("id,time,event,switch_time,x\n");
    for (id, (t, ev, sw, x)) in subjects {
        let sw = sw.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{id},{t},{ev},{sw},{x}\n"));
    }
    out
}

#[test]
fn raw_histories_give_the_same_analysis_as_counting_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let counting = std::fs::read_to_string(fixtures().join("fixture.csv")).unwrap();
    std::fs::write(tmp.path().join("raw.csv"), to_raw(&counting)).unwrap();
    std::fs::copy(
        fixtures().join("fixture.csv"),
        tmp.path().join("counting.csv"),
    )
    .unwrap();
    let run = |input: &str, shape: &str| {
        let o = run_in(
            tmp.path(),
            &[
                "rmst",
                "--input",
                input,
                "--shape",
                shape,
                "--eta",
                "5",
                "--scenario",
                "dly",
                "--a",
                "0.5",
                "--format",
                "jsonl",
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        Report::from_jsonl(&stdout(&o)).unwrap()
    };
    let a = run("counting.csv", "counting");
    let b = run("raw.csv", "raw");
    assert_eq!(
        a.fit.as_ref().unwrap().records,
        b.fit.as_ref().unwrap().records
    );
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((x.estimate.unwrap() - y.estimate.unwrap()).abs() < 1e-12);
    }
    for (x, y) in a.rmst.iter().zip(&b.rmst) {
        assert!((x.estimate.unwrap() - y.estimate.unwrap()).abs() < 1e-12);
        assert!((x.se.unwrap() - y.se.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::copy(
        fixtures().join("fixture.csv"),
        tmp.path().join("fixture.csv"),
    )
    .unwrap();
    std::fs::write(
        tmp.path().join("a.toml"),
        "input = \"fixture.csv\"\neta = 5.0\nscenario = \"dly\"\na = 0.5\n\
         costs = [115.0, 330.0]\ntheta = 1352.0\n",
    )
    .unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "cea", "--config", "a.toml", "--theta", "900", "--format", "jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = Report::from_jsonl(&stdout(&o)).unwrap();
    let inb = report.cea.iter().find(|r| r.measure == "inb").unwrap();
    assert_eq!(inb.theta, Some(900.0));
}

#[test]
fn simulate_is_reproducible_and_emits_data() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--n",
        "300",
        "--replicates",
        "3",
        "--seed",
        "5",
        "--delay-fraction",
        "0.5",
        "--scenario",
        "strt,dly",
        "--format",
        "jsonl",
        "--emit-data",
        "d.csv",
    ];
    let a = run_in(tmp.path(), &args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let data_a = std::fs::read_to_string(tmp.path().join("d.csv")).unwrap();
    let b = run_in(tmp.path(), &args);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(
        data_a,
        std::fs::read_to_string(tmp.path().join("d.csv")).unwrap()
    );
    let report = Report::from_jsonl(&stdout(&a)).unwrap();
    assert_eq!(report.study.as_ref().unwrap().replicates, 3);
    assert_eq!(
        report
            .study_rows
            .iter()
            .filter(|r| r.scenario == "dly")
            .count(),
        4
    );
    // The emitted data set analyses cleanly.
    let o = run_in(tmp.path(), &["fit", "--input", "d.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
