use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn t1() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/t1")
}

fn adplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adplan"))
        .args(args)
        .env_remove("ADPLAN_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn conf() -> String {
    t1().join("t1.conf").display().to_string()
}

#[test]
fn validate_reports_the_inputs() {
    let o = adplan(&["--config", &conf(), "validate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("campaigns 2 (1 unbounded)"), "{s}");
    assert!(s.contains("history 4 records"), "{s}");
}

#[test]
fn t1_plan_matches_the_golden_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let o = adplan(&["--config", &conf(), "plan", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("objective 10\n"));
    assert_eq!(fs::read(&out).unwrap(), fs::read(t1().join("plan.golden.csv")).unwrap());
}

#[test]
fn config_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_adplan"))
        .args(["plan", "--out", out.to_str().unwrap()])
        .env("ADPLAN_CONFIG", conf())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(t1().join("plan.golden.csv")).unwrap());
}

#[test]
fn infeasible_model_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let strict = [
        "--set",
        "lasting=true",
        "--set",
        "lasting_min=100",
        "--set",
        "overflow=true",
        "--set",
        "overflow_fraction=0",
    ];
    let c = conf();
    let mut args = vec!["--config", c.as_str()];
    args.extend(strict);
    args.extend(["--set", "relax_secondary=false", "plan", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&adplan(&args)), 1);
    assert!(!out.exists());

    // Relaxing drops the secondary rows and recovers the primary optimum.
    let pos = args.iter().position(|a| *a == "relax_secondary=false").unwrap();
    args[pos] = "relax_secondary=true";
    let o = adplan(&args);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("secondary rows dropped"));
}

#[test]
fn input_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("history.csv");
    fs::write(
        &bad,
        "timestamp_utc,location_id,campaign_id,creative_id,impressions,profit\n\
         2010-03-25T00:00:00Z,L1,1,1,-1,3.0\n",
    )
    .unwrap();
    let o = adplan(&["--config", &conf(), "validate", "--history", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("history.csv:2:"), "{err}");

    assert_eq!(code(&adplan(&["--config", &conf(), "--set", "nonsense=1", "validate"])), 2);
    assert_eq!(code(&adplan(&["--config", &conf(), "--set", "gamma=2", "validate"])), 2);
    assert_eq!(code(&adplan(&["--config", "/nonexistent/x.conf", "validate"])), 2);
    assert_eq!(code(&adplan(&["validate"])), 2);
    assert_eq!(code(&adplan(&["frobnicate"])), 2);
}

#[test]
fn project_dumps_every_quad() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("proj.csv");
    let o = adplan(&["--config", &conf(), "project", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "frame,location_id,campaign_id,creative_id,supply,profit,level\n\
         1,L1,1,1,5,1,1\n\
         1,L1,2,1,5,0.5,1\n\
         2,L1,1,1,5,1,1\n\
         2,L1,2,1,5,0.5,1\n"
    );
}

#[test]
fn replay_delivers_against_logged_traffic() {
    let dir = TempDir::new().unwrap();
    let traffic = dir.path().join("traffic.csv");
    fs::write(
        &traffic,
        "timestamp_utc,location_id,campaign_id,creative_id,impressions,profit\n\
         2010-04-01T00:00:00Z,L1,1,1,3,3.0\n\
         2010-04-01T00:00:00Z,L1,2,1,2,1.0\n\
         2010-04-01T01:00:00Z,L1,1,1,3,3.0\n\
         2010-04-01T01:00:00Z,L1,2,1,2,1.0\n",
    )
    .unwrap();
    let report = dir.path().join("report.csv");
    let delivered = dir.path().join("delivered.csv");
    let o = adplan(&[
        "--config",
        &conf(),
        "run",
        "--replay",
        traffic.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--delivered",
        delivered.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "lp-engine");
    assert_eq!(row[2], "10.000000");
    assert_eq!(row[6], "true");
    assert!(fs::read_to_string(&delivered).unwrap().lines().count() > 1);
}

#[test]
fn simulate_and_compare_write_reports() {
    let dir = TempDir::new().unwrap();
    let small = ["--set", "world.days=1", "--set", "world.warmup_days=7"];
    let one = dir.path().join("one.csv");
    let mut args = small.to_vec();
    args.extend(["simulate", "--policy", "greedy", "--seed", "3", "--out", one.to_str().unwrap()]);
    assert_eq!(code(&adplan(&args)), 0);
    let first = fs::read(&one).unwrap();
    assert_eq!(code(&adplan(&args)), 0);
    assert_eq!(fs::read(&one).unwrap(), first);

    let many = dir.path().join("many.csv");
    let mut args = small.to_vec();
    args.extend(["--set", "seeds=1-2", "compare", "--policies", "greedy,uniform", "--out", many.to_str().unwrap()]);
    let o = adplan(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&many).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true,0,0,")), "{text}");
}
