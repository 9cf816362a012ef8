use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alap-stein")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn al_cdf_and_cf() {
    let o = run(&["al", "--a", "0", "--b", "1", "--op", "cdf", "--x", "0"]);
    assert!(o.status.success());
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 0.5).abs() < 1e-15);
    let o = run(&["al", "--a", "0.5", "--op", "cf", "--t", "0"]);
    assert_eq!(stdout(&o).trim(), "1,0");
}

#[test]
fn al_sampling_is_seeded() {
    let a = run(&["al", "--a", "-0.3", "--op", "sample", "--n", "5", "--seed", "9"]);
    let b = run(&["al", "--a", "-0.3", "--op", "sample", "--n", "5", "--seed", "9"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 5);
}

#[test]
fn stein_solution_vanishes_at_zero() {
    let o = run(&["stein", "--a", "0.5", "--h", "indicator:0.3", "--x", "0"]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["f"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["mean_h"].as_f64().unwrap() > 0.0);
}

#[test]
fn equilibrium_of_rademacher() {
    let o = run(&["equilibrium", "--base", "rademacher", "--op", "density", "--w", "0.25"]);
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 0.75).abs() < 1e-10);
    let o = run(&["equilibrium", "--base", "rademacher", "--op", "moment", "--r", "2"]);
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 1.0 / 6.0).abs() < 1e-14);
}

#[test]
fn equilibrium_without_law_is_an_error() {
    let o = run(&["equilibrium", "--base", "shifted_rademacher:0.1", "--op", "sample"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no equilibrium law"));
}

#[test]
fn bound_reports_hypotheses() {
    let o = run(&["bound", "--formula", "wb", "--params", "a=0.5,sigma2=1,p=0.01,rho3=1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
    let o = run(&["bound", "--formula", "kb", "--params", "a=2,sigma2=1,p=0.5,sup_inv_dist=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["bound", "--formula", "nope", "--params", "a=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metric_reads_sample_file() {
    let dir = std::env::temp_dir().join(format!("alap-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("w.txt");
    let o = run(&["al", "--a", "0.2", "--op", "sample", "--n", "2000", "--seed", "4"]);
    std::fs::write(&path, format!("w\n{}", stdout(&o))).unwrap();
    let o = run(&["metric", "--samples", path.to_str().unwrap(), "--ref", "al:0,0.2,1", "--kind", "ks"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["value"].as_f64().unwrap() < v["confidence_radius"].as_f64().unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn experiment_writes_csv() {
    let dir = std::env::temp_dir().join(format!("alap-exp-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"scenario":"randstd","a":[0.0],"n":[30],"samples_per_cell":5000,"seed":2,"metrics":["ks","w1"],"bootstrap":20,"timing":false}"#,
    )
    .unwrap();
    let out = dir.join("r.csv");
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("scenario,"));
    assert!(text.contains("5.11") && text.contains("5.12"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn selfcheck_passes() {
    let o = run(&["selfcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}
