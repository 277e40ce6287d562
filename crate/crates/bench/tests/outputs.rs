use std::sync::OnceLock;

use proptest::prelude::*;
use trrb_bench::compare::{compare_methods, CSV_HEADER};
use trrb_bench::config::{build_problem, BuiltProblem, ProblemConfig};
use trrb_bench::plot::{emit_plot_data, error_series, error_series_name, inner_series, read_series, ERROR_SVG, INNER_SVG};
use trrb_bench::runs::{random_start, run_method, Method, PhasePlan, RunRecord};
use trrb_bench::BenchError;

fn small() -> &'static BuiltProblem {
    static P: OnceLock<BuiltProblem> = OnceLock::new();
    P.get_or_init(|| build_problem(&ProblemConfig::experiment1().with_mesh(Some(40), Some(20))).unwrap())
}

fn record(method: Method, seed: u64) -> RunRecord {
    let fom = &small().fom;
    let mu0 = random_start(fom, seed);
    let reference = fom.problem().mu_check.clone();
    run_method(fom, method, seed, &mu0, &PhasePlan::single(1e-5), Some(&reference), "experiment1").unwrap()
}

fn pair() -> &'static [RunRecord; 2] {
    static R: OnceLock<[RunRecord; 2]> = OnceLock::new();
    R.get_or_init(|| [record(Method::FomTrNewtonCg, 1), record(Method::TrrbNewtonOe, 1)])
}

#[test]
fn plot_files_for_two_methods_and_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plot_data(pair(), dir.path()).unwrap();
    assert_eq!(written.len(), 6);
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".dat")).count(), 4);
    assert!(names.contains(&ERROR_SVG.to_string()) && names.contains(&INNER_SVG.to_string()));
    let svg = std::fs::read_to_string(dir.path().join(ERROR_SVG)).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("parameter error"));
}

#[test]
fn empty_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("plots");
    assert!(emit_plot_data(&[], &target).unwrap().is_empty());
    assert!(!target.exists());
}

#[test]
fn series_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(pair(), dir.path()).unwrap();
    for r in pair() {
        let back = read_series(&dir.path().join(error_series_name(r.method, r.seed))).unwrap();
        assert_eq!(back, error_series(r));
        assert!(!back.is_empty());
    }
    let inner = inner_series(&pair()[1]);
    assert_eq!(inner.len(), pair()[1].rows.len() - 1);
}

fn with_runtime(r: &RunRecord, seconds: f64) -> RunRecord {
    let mut r = r.clone();
    r.summary.total_seconds = seconds;
    r
}

#[test]
fn speedup_is_the_runtime_ratio() {
    let [base, rb] = pair();
    let same = compare_methods(&[with_runtime(base, 3.0), with_runtime(base, 3.0)]).unwrap();
    assert_eq!(same.methods.len(), 1);
    assert_eq!(same.methods[0].speedup, Some(1.0));

    let t = compare_methods(&[with_runtime(base, 100.0), with_runtime(rb, 50.0)]).unwrap();
    let s: Vec<_> = t.methods.iter().map(|m| (m.method, m.speedup)).collect();
    assert!(s.contains(&(Method::FomTrNewtonCg, Some(1.0))));
    assert!(s.contains(&(Method::TrrbNewtonOe, Some(2.0))));
    assert!(t.note.is_none());
    let csv = t.to_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), CSV_HEADER.len());
}

#[test]
fn missing_baseline_drops_the_speedup_column() {
    let t = compare_methods(&pair()[1..]).unwrap();
    assert!(t.note.is_some() && t.methods[0].speedup.is_none());
    let header = t.to_csv().unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), CSV_HEADER.len() - 1);
    assert!(!header.contains("speed-up"));
    assert!(t.to_text().contains("note:"));
    assert!(matches!(compare_methods(&[]), Err(BenchError::Validation(_))));
}

#[test]
fn summary_statistics() {
    let rb = &pair()[1];
    let t = compare_methods(&[with_runtime(rb, 1.0), with_runtime(rb, 3.0)]).unwrap();
    let m = &t.methods[0];
    assert_eq!((m.runs, m.runtime.avg, m.runtime.min, m.runtime.max), (2, 2.0, 1.0, 3.0));
    assert_eq!(m.iterations.avg, rb.summary.iterations as f64);
    assert_eq!(m.converged, 2);
}

#[test]
fn runs_are_deterministic() {
    let a = record(Method::TrrbNewtonOe, 4);
    let b = record(Method::TrrbNewtonOe, 4);
    assert_eq!(a.mu0, b.mu0);
    assert_eq!(a.summary.mu_final, b.summary.mu_final);
    assert_eq!(a.summary.fom_solves, b.summary.fom_solves);
    let strip = |r: &RunRecord| r.rows.iter().map(|x| (x.k, x.mu.clone(), x.enriched, x.fom_solves)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn records_survive_json() {
    for r in pair() {
        let text = serde_json::to_string(r).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.summary.mu_final, r.summary.mu_final);
        assert_eq!(back.rows.len(), r.rows.len());
    }
}

#[test]
fn invalid_phase_plans_are_rejected() {
    let fom = &small().fom;
    let mu0 = random_start(fom, 0);
    for plan in [
        PhasePlan { tau_foc: 0.0, ..PhasePlan::single(1e-5) },
        PhasePlan { tighten: 1.0, ..PhasePlan::controlled(1e-5, 1e-4) },
        PhasePlan { max_phases: 0, ..PhasePlan::single(1e-5) },
    ] {
        assert!(matches!(run_method(fom, Method::TrrbNewtonOe, 0, &mu0, &plan, None, "x"), Err(BenchError::Validation(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn prop_records_keep_their_contracts(seed in 0u64..10_000, which in 0usize..4) {
        let method = Method::ALL[which];
        let r = record(method, seed);
        let bx = &small().fom.problem().bx;
        prop_assert!(r.honours_exit_contract());
        prop_assert!(r.rows_well_formed());
        prop_assert!(bx.contains(&r.mu0) && bx.contains(&r.summary.mu_final));
        prop_assert!(r.rows.iter().all(|row| bx.contains(&row.mu)));
        prop_assert!(r.rows.windows(2).all(|w| w[0].fom_solves <= w[1].fom_solves));
        prop_assert_eq!(r.rows.last().map(|x| x.k), Some(r.summary.iterations));
        if method.is_reduced() {
            prop_assert!(r.summary.audit.is_some_and(|a| a.all()));
            prop_assert!(r.rows.iter().all(|row| row.j_r.is_none_or(|j| j > 0.0)));
        }
    }
}
