use recurlab::builders::{build_stage, CuttingStackingRecipe};
use recurlab::rational::{frac, q};
use recurlab_cli::commands::parse_correlation_csv;
use recurlab_cli::run_from_args;
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::process::Command;

fn run(args: &[&str]) -> recurlab_cli::Outcome {
    run_from_args(std::iter::once("recurlab").chain(args.iter().copied()))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("recurlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn classify_odometer_halves() {
    let o = run(&["classify", "--recipe", "odometer", "--set", "0/1:1/2", "--horizon", "1"]);
    assert_eq!(o.exit_code, 0, "{}", o.stdout);
    assert_eq!(o.manifest.get("verdict"), Some("strictlyUnderRecurrent"));
    assert_eq!(o.manifest.get("verdict.margin"), Some("1/4"));
}

#[test]
fn correlate_rotation_rows_and_digests() {
    let dir = scratch("correlate");
    let o = run(&["correlate", "--recipe", "rotation2", "--set", "0/1:1/2", "--horizon", "2", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.exit_code, 0, "{}", o.stdout);
    let csv = std::fs::read_to_string(dir.join("correlation.csv")).unwrap();
    let rows = parse_correlation_csv(&csv).unwrap();
    let pos: Vec<(i64, String)> = rows.iter().filter(|r| r.0 > 0).map(|r| (r.0, frac(&r.1))).collect();
    assert_eq!(pos, vec![(1, "0/1".to_string()), (2, "1/2".to_string())]);
    assert!(!csv.contains('.'), "no floating point in CSVs");
    for name in ["correlation.csv", "correlation.svg"] {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let digest = format!("sha256:{}", hex::encode(Sha256::digest(&bytes)));
        assert_eq!(o.manifest.get(&format!("artifact.{name}")), Some(digest.as_str()));
    }
    let svg = std::fs::read_to_string(dir.join("correlation.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    let written = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(written, o.stdout);
    let report = run(&["report", "--csv", dir.join("correlation.csv").to_str().unwrap()]);
    assert_eq!(report.exit_code, 0, "{}", report.stdout);
    assert_eq!(report.manifest.get("rows"), Some("5"));
    assert_eq!(report.manifest.get("margin.min"), Some("-1/4"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn repeated_runs_are_identical() {
    let args = ["correlate", "--recipe", "staircase", "--stage", "4", "--set", "1/7:3/7,1/2:5/9", "--horizon", "30"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
    let timed = run(&["--timing", "build", "--recipe", "chacon", "--stage", "3"]);
    assert!(timed.stdout.contains("timing."));
    assert_eq!(timed.manifest.without_timing().to_text(), run(&["build", "--recipe", "chacon", "--stage", "3"]).stdout);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = scratch("config");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# halves\nrecipe = rotation2\nset = 0/1:1/2\nhorizon = 4\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "correlate", "--horizon", "2"]);
    assert_eq!(o.exit_code, 0, "{}", o.stdout);
    assert_eq!(o.manifest.get("config.recipe"), Some("rotation2"));
    assert_eq!(o.manifest.get("config.horizon"), Some("2"));
    assert_eq!(o.manifest.get("config.stage"), Some("1"));
    std::fs::write(&cfg, "recipe = rotation2\nwindow = 3\n").unwrap();
    let bad = run(&["--config", cfg.to_str().unwrap(), "correlate"]);
    assert_eq!(bad.exit_code, 2);
    assert_eq!(bad.manifest.get("error.kind"), Some("ConfigParse"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn precondition_failures_exit_two() {
    for args in [
        vec!["classify", "--recipe", "nope", "--set", "0/1:1/2"],
        vec!["classify", "--recipe", "odometer", "--set", "1/2:1/3"],
        vec!["classify", "--recipe", "odometer", "--set", "0/1:1/2", "--horizon", "x"],
        vec!["construct-overrec", "--a", "1/3", "--stage", "3"],
        vec!["towerplex", "--eps", "linear:1/2"],
        vec!["frobnicate"],
    ] {
        let o = run(&args);
        assert_eq!(o.exit_code, 2, "{args:?}: {}", o.stdout);
        assert_eq!(o.manifest.get("status"), Some("error"));
        assert_eq!(o.manifest.get("error.class"), Some("precondition"));
    }
}

#[test]
fn construction_without_steps() {
    let o = run(&["construct-overrec", "--stage", "4", "--stages", "0"]);
    assert_eq!(o.exit_code, 0, "{}", o.stdout);
    assert_eq!(o.manifest.get("set.measure"), Some("1/10"));
    assert_eq!(o.manifest.get("low.bound"), Some("13/150"));
    assert_eq!(o.manifest.get("low.bound_exceeds_square"), Some("true"));
    assert_eq!(o.manifest.get("verdict"), Some("none"));
}

#[test]
fn staircase_construction_exhausts_the_stage() {
    let o = run(&["construct-overrec", "--stage", "6"]);
    assert_eq!(o.exit_code, 4, "{}", o.stdout);
    assert_eq!(o.manifest.get("error.class"), Some("stage-exhaustion"));
    assert_eq!(o.manifest.get("error.kind"), Some("NotFoundWithinStage"));
}

#[test]
fn transfer_of_a_given_set() {
    let src = build_stage(&CuttingStackingRecipe::builtin("staircase").unwrap(), 4).unwrap();
    let set = src.column.levels_set(0..27);
    let spec: Vec<String> = set.pieces().iter().map(|p| format!("{}:{}", frac(p.lo()), frac(p.hi()))).collect();
    let spec = spec.join(",");
    let o = run(&["transfer", "--stage", "4", "--set", &spec, "--horizon", "10", "--eps", "1/5"]);
    assert_eq!(o.exit_code, 0, "{}", o.stdout);
    assert_eq!(o.manifest.get("plan.height"), Some("54"));
    assert_eq!(o.manifest.get("plan.approximation_error"), Some("0/1"));
    let measure = recurlab::rational::parse_q(o.manifest.get("transferred.measure").unwrap()).unwrap();
    assert!(measure <= q(1, 2) && measure > q(49, 100));
    assert!(o.manifest.get("verdict").is_some_and(|v| v.contains("ver")));
}

#[test]
fn binary_reports_exit_codes_and_error_records() {
    let bin = env!("CARGO_BIN_EXE_recurlab");
    let ok = Command::new(bin).args(["classify", "--recipe", "odometer", "--set", "0/1:1/2", "--horizon", "1"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("verdict: strictlyUnderRecurrent"));
    let bad = Command::new(bin).args(["build", "--recipe", "odometer", "--stage", "-1"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("error.class: precondition"), "{err}");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("towerplex"));
}
