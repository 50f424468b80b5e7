use std::process::{Command, Output};

use gw_invasion::{run, Error, Experiment, ExperimentConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gw-invasion")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn survival_csv_schema_and_seed_header() {
    let o = bin(&["survival", "--p-grid", "0.6:0.8:0.1", "--seed", "17", "--emit", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("# gw-invasion"));
    assert!(out.lines().next().unwrap().contains("seed=17"));
    let data: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "p,g,g_prime");
    assert_eq!(data.len(), 4);
    // g(0.6) = 0.2 / 0.36 on the binary tree, to 12 digits.
    assert_eq!(data[1], "0.6,0.555555555556,3.7037037037");
}

#[test]
fn invade_and_backbone_columns() {
    let o = bin(&["invade", "--steps", "50", "--seed", "4"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let data: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "step,nodeid,depth,u_weight");
    assert_eq!(data.len(), 52);
    let o = bin(&["backbone", "--steps", "2000", "--seed", "4", "--emit", "csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("\nn,h_n,h_star_n,beta_lower,beta_upper\n"));
}

#[test]
fn reruns_are_byte_identical() {
    for args in [
        &["pivot-chain", "--n", "30", "--replicates", "40", "--joint", "--seed", "3"][..],
        &["lpe", "--replicates", "500", "--seed", "3", "--emit", "json"][..],
        &["kl", "--replicates", "2", "--n-max", "2", "--q-replicates", "20", "--seed", "3"][..],
    ] {
        let a = bin(args);
        let mut with_threads = args.to_vec();
        with_threads.extend(["--threads", "3"]);
        let b = bin(&with_threads);
        assert!(a.status.code().unwrap() <= 1 && b.status.code().unwrap() <= 1);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn thm1_check_reports_margin() {
    let o = bin(&["thm1-check", "--p", "inf", "--p1", "0.001", "--mu", "2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("p,p1,mu,q,margin,holds"));
    assert!(out.trim_end().ends_with("true"));
}

#[test]
fn failing_verdict_sets_exit_code() {
    // Far too few replicates for the KS tolerance to hold.
    let o = bin(&["exp-limit", "--n", "20", "--replicates", "3", "--tol", "0.0001"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("# verdict FAIL"));
}

#[test]
fn config_errors_are_actionable() {
    let o = bin(&["pivot-chain", "--replicates", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("replicates must be a positive integer"), "{err}");

    let cfg = "experiment = kl\nreplicates = 0\n".parse::<ExperimentConfig>();
    assert!(matches!(cfg, Err(Error::Config(_))));
    assert!(matches!("experiment = bogus".parse::<ExperimentConfig>(), Err(Error::Config(_))));
    let o = bin(&["survival", "--dist", "family = cauchy"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["survival", "--set", "steps=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("does not apply to survival"));
}

#[test]
fn run_reads_config_files() {
    let dir = std::env::temp_dir().join(format!("gw-invasion-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("dd.cfg");
    let out = dir.join("dd.json");
    std::fs::write(&cfg, "experiment = dual-decay\ndist = family = deterministic, b = 3\nseed = 5\nn_grid = [10, 40]\nreplicates = 300\nformat = json\n").unwrap();
    let o = bin(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.code().unwrap() <= 1);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["seed"], 5);
    assert_eq!(json["config"]["dist"], "family = deterministic, b = 3");
    assert_eq!(json["tables"][0]["columns"][0], "n");
    assert_eq!(json["tables"][0]["rows"].as_array().unwrap().len(), 2);
    assert!(json["verdicts"][0]["tolerance"].is_number());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validate_all_lists_every_criterion() {
    let mut cfg = ExperimentConfig::new(Experiment::ValidateAll);
    cfg.set("scale", "0.005").unwrap();
    let report = run(&cfg).unwrap();
    for id in 1..=12 {
        let id = id.to_string();
        assert!(
            report.verdicts.iter().any(|v| v.id == id || v.id.strip_suffix(char::is_alphabetic) == Some(id.as_str())),
            "criterion {id} missing"
        );
    }
    assert!(report.verdicts.iter().all(|v| v.tolerance.is_finite()));
    assert_eq!(report.tables[0].name, "criteria");
}
