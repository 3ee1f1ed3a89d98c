use std::path::Path;
use std::process::{Command, Output};

use mtgp_cli::config::{ModelFamily, RunConfig};
use mtgp_cli::model_file::ModelFile;
use mtgp_cli::table::parse_task_data;
use mtgp_cli::{load_model, train_model};

fn mtgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtgp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUICK: &str = r#"{"max_iterations": 150, "num_restarts": 1}"#;

fn config(model: &str) -> String {
    format!(r#"{{"model": "{model}", "training": {QUICK}}}"#)
}

fn two_task_csv() -> String {
    let mut s = String::from("x1,x2,task,y\n");
    for i in 0..9 {
        let x = i as f64 / 8.0;
        let z = 1.0 - x * x;
        s.push_str(&format!(
            "{x:?},{z:?},{},{:?}\n",
            i % 2,
            (4.0 * x).sin() + 0.5 * z + (i % 2) as f64
        ));
    }
    s
}

fn setup(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

#[test]
fn non_contiguous_tasks_exit_with_validation_error() {
    let dir = setup(&[("d.csv", "x1,task,y\n0.1,0,1\n0.5,2,2\n")]);
    let o = mtgp(dir.path(), &["train", "--data", "d.csv", "--model", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("task 1 is missing"), "{}", stderr(&o));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = setup(&[
        ("d.csv", &two_task_csv()),
        ("c.json", r#"{"model": "mtgp-slfm", "lenghtscale": 2}"#),
    ]);
    let o = mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--config", "c.json", "--model", "m.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lenghtscale"));
}

#[test]
fn gp_family_rejects_multi_task_data() {
    let dir = setup(&[("d.csv", &two_task_csv()), ("c.json", &config("gp"))]);
    let o = mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--config", "c.json", "--model", "m.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("single-task"));
}

#[test]
fn every_family_trains_predicts_and_reloads() {
    let dataset = parse_task_data(two_task_csv().as_bytes()).unwrap();
    for family in ["mtgp-slfm", "mtgp-lmc", "mtgp-independent"] {
        let dir = setup(&[
            ("d.csv", &two_task_csv()),
            ("c.json", &config(family)),
            ("q.csv", "label,x2,x1,task\na,0.5,0.25,1\nb,0.1,0.9,0\n"),
        ]);
        let o = mtgp(
            dir.path(),
            &[
                "train",
                "--data",
                "d.csv",
                "--config",
                "c.json",
                "--model",
                "m.json",
                "--out",
                "metrics.json",
                "--trace",
                "t.jsonl",
            ],
        );
        assert!(o.status.success(), "{family}: {}", stderr(&o));
        let metrics: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert!(metrics["log_marginal_likelihood"].as_f64().unwrap().is_finite());
        let trace = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
        assert!(trace.lines().count() > 100);

        let o = mtgp(dir.path(), &["predict", "--model", "m.json", "--data", "q.csv"]);
        assert!(o.status.success(), "{family}: {}", stderr(&o));
        let out = String::from_utf8(o.stdout).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "label,x2,x1,task,mean,stddev");
        assert!(lines[1].starts_with("a,0.5,0.25,1,"));
        for l in &lines[1..] {
            let sd: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
            assert!(sd >= 0.0 && sd.is_finite());
        }

        let mut cfg: RunConfig = serde_json::from_str(&config(family)).unwrap();
        cfg.validate().unwrap();
        cfg.training.record_trace = false;
        let trained = train_model(&cfg, &dataset).unwrap();
        let loaded = load_model(&dir.path().join("m.json")).unwrap();
        assert_eq!(
            trained.model.log_marginal_likelihood(),
            loaded.log_marginal_likelihood(),
            "{family}"
        );
    }
}

#[test]
fn single_task_gp_round_trip_without_task_column_in_query() {
    let mut data = String::from("x1,task,y\n");
    for i in 0..8 {
        let x = i as f64 / 7.0;
        data.push_str(&format!("{x:?},0,{:?}\n", (5.0 * x).cos()));
    }
    let dir = setup(&[("d.csv", &data), ("q.csv", "x1\n0.3\n0.6\n")]);
    let o = mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--model", "m.json", "--seed", "3"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(metrics["model"], "gp");
    let o = mtgp(
        dir.path(),
        &["predict", "--model", "m.json", "--data", "q.csv", "--out", "p.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let p = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(p.lines().count(), 3);
    let mean: f64 = p.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((mean - 1.5f64.cos()).abs() < 0.1, "{mean}");
}

#[test]
fn empty_query_gives_header_only() {
    let dir = setup(&[
        ("d.csv", &two_task_csv()),
        ("c.json", &config("mtgp-slfm")),
        ("q.csv", "x1,x2,task\n"),
    ]);
    assert!(mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--config", "c.json", "--model", "m.json"]
    )
    .status
    .success());
    let o = mtgp(dir.path(), &["predict", "--model", "m.json", "--data", "q.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "x1,x2,task,mean,stddev\n");
}

#[test]
fn query_task_out_of_range_is_rejected() {
    let dir = setup(&[
        ("d.csv", &two_task_csv()),
        ("c.json", &config("mtgp-slfm")),
        ("q.csv", "x1,x2,task\n0.1,0.2,5\n"),
    ]);
    assert!(mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--config", "c.json", "--model", "m.json"]
    )
    .status
    .success());
    let o = mtgp(dir.path(), &["predict", "--model", "m.json", "--data", "q.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("task 5"));
}

#[test]
fn damaged_model_files_are_rejected() {
    let dir = setup(&[
        ("d.csv", &two_task_csv()),
        ("c.json", &config("mtgp-slfm")),
        ("q.csv", "x1,x2,task\n0.1,0.2,0\n"),
    ]);
    assert!(mtgp(
        dir.path(),
        &["train", "--data", "d.csv", "--config", "c.json", "--model", "m.json"]
    )
    .status
    .success());
    let text = std::fs::read_to_string(dir.path().join("m.json")).unwrap();
    let file = ModelFile::parse(&text).unwrap();

    let future = text.replace("\"schema_version\": 1", "\"schema_version\": 7");
    std::fs::write(dir.path().join("future.json"), future).unwrap();
    let o = mtgp(dir.path(), &["predict", "--model", "future.json", "--data", "q.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version 7"));

    let mut tampered = file.clone();
    tampered.dataset.tasks[0].targets[0].0 += 1.0;
    std::fs::write(dir.path().join("t.json"), tampered.to_json()).unwrap();
    let o = mtgp(dir.path(), &["predict", "--model", "t.json", "--data", "q.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fingerprint"));

    let mut wrong_family = file;
    wrong_family.family = ModelFamily::MtgpLmc;
    assert!(wrong_family.load_model().is_err());
}

#[test]
fn benchmark_flags_override_the_study() {
    let dir = setup(&[(
        "s.json",
        r#"{"n_test": 20, "training": {"max_iterations": 100, "num_restarts": 1}}"#,
    )]);
    let o = mtgp(
        dir.path(),
        &[
            "benchmark",
            "--config",
            "s.json",
            "--out",
            "out",
            "--correlations",
            "0.89",
            "--sizes",
            "5,10",
            "--replicates",
            "2",
            "--seed",
            "4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("% Improvement"));
    let out = dir.path().join("out");
    let study = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(study.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregates"].as_array().unwrap().len(), 1);
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(std::fs::read_to_string(out.join("table.txt")).unwrap(), table);
    assert_eq!(
        std::fs::read_to_string(out.join("predictions.csv"))
            .unwrap()
            .lines()
            .count(),
        21
    );
    assert_eq!(
        std::fs::read_to_string(out.join("training_points.csv"))
            .unwrap()
            .lines()
            .count(),
        16
    );
}

#[test]
fn bad_benchmark_flags_exit_with_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mtgp(dir.path(), &["benchmark", "--sizes", "5;7"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mtgp(dir.path(), &["benchmark", "--correlations", "high"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_reports_each_verification() {
    let dir = tempfile::tempdir().unwrap();
    let o = mtgp(dir.path(), &["check", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 9);
    let o = mtgp(dir.path(), &["check", "--inject-fault", "flip-gradient-sign"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("FAIL gp_gradient_finite_difference"));
}
