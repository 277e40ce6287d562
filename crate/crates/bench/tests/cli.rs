use std::path::Path;

use trrb_bench::cli::{read_records, run, EXIT_USAGE};
use trrb_bench::runs::Method;

fn trrb(args: &[&str]) -> i32 {
    run(std::iter::once("trrb").chain(args.iter().copied()))
}

const SMALL: [&str; 4] = ["--mesh-nx", "40", "--mesh-ny", "20"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(args.iter().copied()).collect()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(trrb(&with_small(&["validate", "experiment1"])), 0);
    assert_eq!(trrb(&with_small(&["validate", "experiment2"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(trrb(&["validate", missing.to_str().unwrap()]), 1);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"version\": 1,").unwrap();
    assert_eq!(trrb(&["validate", broken.to_str().unwrap()]), 2);

    let mut cfg = trrb_bench::ProblemConfig::experiment1().with_mesh(Some(40), Some(20));
    cfg.objective.mu_d[0] = -5.0;
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, cfg.to_json()).unwrap();
    assert_eq!(trrb(&["validate", bad.to_str().unwrap()]), 2);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(trrb(&["--help"]), 0);
    assert_eq!(trrb(&["--version"]), 0);
    assert_eq!(trrb(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(trrb(&["optimize", "experiment1", "--method", "simplex"]), EXIT_USAGE);
    assert_eq!(trrb(&["solve-fom", "experiment1"]), EXIT_USAGE);
    assert_eq!(trrb(&["experiment1", "--seeds", "many"]), EXIT_USAGE);
}

#[test]
fn solve_fom_checks_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve.json");
    let mu = "0.05,0.05,0.05,0.5,0.5,50,50,50,50,50,50,50";
    assert_eq!(trrb(&with_small(&["solve-fom", "experiment1", "--mu", mu, "--out", out.to_str().unwrap()])), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["gradient"].as_array().unwrap().len(), 12);
    assert_eq!(v["dofs"], 41 * 21);
    assert_eq!(trrb(&with_small(&["solve-fom", "experiment1", "--mu", "0.05,0.05"])), 2);
    let outside = "5,0.05,0.05,0.5,0.5,50,50,50,50,50,50,50";
    assert_eq!(trrb(&with_small(&["solve-fom", "experiment1", "--mu", outside])), 2);
}

#[test]
fn optimize_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let args = ["optimize", "experiment1", "--method", "trrb-newton-oe", "--seed", "3", "--out", out.to_str().unwrap()];
    assert_eq!(trrb(&with_small(&args)), 0);
    let recs = read_records(&out).unwrap();
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!((r.method, r.seed, r.dofs), (Method::TrrbNewtonOe, 3, 41 * 21));
    assert!(r.summary.converged && r.honours_exit_contract() && r.rows_well_formed());
}

fn count_files(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn experiment2_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp2");
    assert_eq!(trrb(&with_small(&["experiment2", "--seeds", "3", "--out", out.to_str().unwrap()])), 0);
    let recs = read_records(&out.join("records.json")).unwrap();
    assert_eq!(recs.len(), 12);
    for m in Method::ALL {
        assert_eq!(recs.iter().filter(|r| r.method == m).count(), 3, "{m}");
    }
    assert!(recs.iter().all(|r| r.summary.relative_error.is_some()));
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().next().unwrap().contains("speed-up"));
    assert!(out.join("comparison.txt").exists());
    let plots = out.join("plots");
    assert_eq!(count_files(&plots, "dat"), 24);
    assert_eq!(count_files(&plots, "svg"), 2);

    // the records can be compared again later, with or without plots
    let again = dir.path().join("again");
    let records = out.join("records.json");
    let args = ["compare", records.to_str().unwrap(), "--out", again.to_str().unwrap()];
    assert_eq!(trrb(&args), 0);
    assert_eq!(std::fs::read_to_string(again.join("comparison.csv")).unwrap(), csv);
    assert!(!again.join("plots").exists());
}

#[test]
fn compare_rejects_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    assert_eq!(trrb(&["compare", empty.to_str().unwrap()]), 2);
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{\"method\": 3}").unwrap();
    assert_eq!(trrb(&["compare", junk.to_str().unwrap()]), 2);
    assert_eq!(trrb(&["compare"]), EXIT_USAGE);
}
