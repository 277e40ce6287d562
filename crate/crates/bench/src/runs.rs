//! Optimization runs and the two experiment procedures.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use trrb_core::estimators::delta_mu_at;
use trrb_core::fom::{second_order_from_hessian, FomSystem, SolveCounts};
use trrb_core::model::EPS_ACTIVE;
use trrb_core::optimizer::{run_fom_tr_newton_cg, run_trrb_from, TrAudit, TrConfig, Termination};
use trrb_core::rom::RomModel;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FomTrNewtonCg,
    TrrbBfgsUe,
    TrrbNewtonUe,
    TrrbNewtonOe,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FomTrNewtonCg, Method::TrrbBfgsUe, Method::TrrbNewtonUe, Method::TrrbNewtonOe];

    pub fn id(self) -> &'static str {
        match self {
            Method::FomTrNewtonCg => "fom-tr-newton-cg",
            Method::TrrbBfgsUe => "trrb-bfgs-ue",
            Method::TrrbNewtonUe => "trrb-newton-ue",
            Method::TrrbNewtonOe => "trrb-newton-oe",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::FomTrNewtonCg => "FOM TR-Newton-CG",
            Method::TrrbBfgsUe => "TR-RB BFGS (UE)",
            Method::TrrbNewtonUe => "TR-RB Newton (UE)",
            Method::TrrbNewtonOe => "TR-RB Newton (OE)",
        }
    }

    pub fn is_reduced(self) -> bool {
        self != Method::FomTrNewtonCg
    }

    pub fn config(self, tau_foc: f64) -> TrConfig {
        match self {
            Method::FomTrNewtonCg | Method::TrrbNewtonOe => TrConfig::newton_oe(tau_foc),
            Method::TrrbNewtonUe => TrConfig::newton_ue(tau_foc),
            Method::TrrbBfgsUe => TrConfig::bfgs_ue(tau_foc),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Uniform draw from the parameter box, reproducible from `seed`.
pub fn random_start(fom: &FomSystem, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let t: Vec<f64> = (0..fom.dim()).map(|_| rng.random::<f64>()).collect();
    fom.problem().bx.from_unit(&t)
}

/// One accepted iterate (k = 0 is the starting point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: usize,
    pub phase: usize,
    /// Wall time since the run started, including earlier Δ_μ evaluations.
    pub seconds: f64,
    pub mu: Vec<f64>,
    /// ‖μ_ref − μ^(k)‖₂ when a reference parameter is known.
    pub mu_error: Option<f64>,
    pub j_h: Option<f64>,
    pub j_r: Option<f64>,
    pub g_h: Option<f64>,
    /// Radius in force after this iterate: TR-RB's δ, or the baseline's step radius.
    pub delta: Option<f64>,
    pub rb_primal: Option<usize>,
    pub rb_dual: Option<usize>,
    /// Cumulative PDE solves (primal, dual, sensitivity) spent by the optimizer.
    pub fom_solves: usize,
    pub enriched: bool,
    pub skipped: bool,
    /// Subproblem iterations for TR-RB, CG iterations for the baseline.
    pub inner_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterControl {
    /// `None` when λ_min ≤ 0 (the bound does not apply).
    pub bound: Option<f64>,
    pub lambda_min: f64,
    /// Wall-time window of the evaluation, on the run clock.
    pub started: f64,
    pub seconds: f64,
    pub fom_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub tau_foc: f64,
    pub termination: Termination,
    /// Iterations accepted in this phase.
    pub iterations: usize,
    pub last_k: usize,
    pub control: Option<ParameterControl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrder {
    pub passed: bool,
    /// `None` when every component is active.
    pub lambda_min_inactive: Option<f64>,
    pub inactive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub iterations: usize,
    pub mu_final: Vec<f64>,
    pub j_h: f64,
    pub g_h: f64,
    pub error: Option<f64>,
    pub relative_error: Option<f64>,
    /// Wall time of the optimizer alone.
    pub optimizer_seconds: f64,
    /// Optimizer plus Δ_μ evaluations.
    pub total_seconds: f64,
    pub fom_solves: usize,
    pub counts: SolveCounts,
    pub rb_dims: Option<(usize, usize)>,
    pub rejections: Option<usize>,
    pub delta_mu: Option<f64>,
    pub lambda_min: Option<f64>,
    pub second_order: Option<SecondOrder>,
    pub audit: Option<TrAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub problem: String,
    pub dofs: usize,
    pub tau_foc: f64,
    pub mu0: Vec<f64>,
    pub reference: Option<Vec<f64>>,
    pub rows: Vec<RunRow>,
    pub phases: Vec<PhaseRecord>,
    pub summary: RunSummary,
}

impl RunRecord {
    /// Exit contract: converged runs meet the tolerance of their last phase.
    pub fn honours_exit_contract(&self) -> bool {
        let tau = self.phases.last().map_or(self.tau_foc, |p| p.tau_foc);
        !self.summary.converged || self.summary.g_h <= tau
    }

    pub fn rows_well_formed(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].k < w[1].k) && self.rows.iter().all(|r| r.seconds >= 0.0)
    }
}

/// What to do after each phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePlan {
    pub tau_foc: f64,
    /// Stop once Δ_μ ≤ tau_mu; infinity runs a single phase without Δ_μ.
    pub tau_mu: f64,
    /// τ_FOC is divided by this between phases.
    pub tighten: f64,
    pub max_phases: usize,
}

impl PhasePlan {
    pub fn single(tau_foc: f64) -> Self {
        Self { tau_foc, tau_mu: f64::INFINITY, tighten: 100.0, max_phases: 1 }
    }

    pub fn controlled(tau_foc: f64, tau_mu: f64) -> Self {
        Self { tau_foc, tau_mu, tighten: 100.0, max_phases: 5 }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Tracker<'a> {
    reference: Option<&'a [f64]>,
    rows: Vec<RunRow>,
    /// Run-clock offset of the current phase.
    offset: f64,
    solves_offset: usize,
    counts: SolveCounts,
    optimizer_seconds: f64,
}

impl Tracker<'_> {
    fn error(&self, mu: &[f64]) -> Option<f64> {
        self.reference.map(|r| distance(r, mu))
    }

    fn next_k(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k + 1)
    }
}

fn add_counts(a: &SolveCounts, b: &SolveCounts) -> SolveCounts {
    SolveCounts {
        primal: a.primal + b.primal,
        dual: a.dual + b.dual,
        sensitivity: a.sensitivity + b.sensitivity,
        riesz: a.riesz + b.riesz,
        factorizations: a.factorizations + b.factorizations,
    }
}

struct PhaseOutcome {
    mu: Vec<f64>,
    termination: Termination,
    diagnostic: Option<String>,
    iterations: usize,
    j_h: f64,
    g_h: f64,
}

fn fom_phase(fom: &FomSystem, cfg: &TrConfig, mu: &[f64], phase: usize, t: &mut Tracker) -> Result<PhaseOutcome> {
    let report = run_fom_tr_newton_cg(fom, cfg, mu)?;
    // An entry describes the iterate an attempt started from; a new iterate
    // appears right after each accepted attempt.
    let first = t.rows.is_empty();
    for (i, h) in report.history.iter().enumerate() {
        let arrived = if i == 0 { first } else { report.history[i - 1].accepted };
        if !arrived {
            continue;
        }
        let inner = if i == 0 { 0 } else { report.history[i - 1].cg_iters };
        let k = t.next_k();
        t.rows.push(RunRow {
            k,
            phase,
            seconds: t.offset + h.seconds,
            mu: h.mu.clone(),
            mu_error: t.error(&h.mu),
            j_h: Some(h.j_h),
            j_r: None,
            g_h: Some(h.g_h),
            delta: Some(h.radius),
            rb_primal: None,
            rb_dual: None,
            fom_solves: t.solves_offset + h.counts.pde_solves(),
            enriched: false,
            skipped: false,
            inner_iters: inner,
        });
    }
    t.counts = add_counts(&t.counts, &report.counts);
    t.optimizer_seconds += report.seconds;
    Ok(PhaseOutcome {
        mu: report.mu_final,
        termination: report.termination,
        diagnostic: None,
        iterations: report.iterations,
        j_h: report.j_h_final,
        g_h: report.g_h_final,
    })
}

struct RbState {
    rom: Option<RomModel>,
    audit: Option<TrAudit>,
    dims: Option<(usize, usize)>,
    rejections: usize,
}

fn rb_phase(
    fom: &FomSystem,
    cfg: &TrConfig,
    mu: &[f64],
    phase: usize,
    t: &mut Tracker,
    st: &mut RbState,
) -> Result<PhaseOutcome> {
    let run = run_trrb_from(fom, cfg, mu, st.rom.as_ref())?;
    let r = &run.report;
    if t.rows.is_empty() {
        let j0 = r.history.first().map(|h| h.j_r);
        let dims = r.history.first().map_or(r.rb_dims, |h| h.rb_dims);
        t.rows.push(RunRow {
            k: 0,
            phase,
            seconds: 0.0,
            mu: mu.to_vec(),
            mu_error: t.error(mu),
            j_h: j0,
            j_r: j0,
            g_h: None,
            delta: Some(cfg.delta0),
            rb_primal: Some(dims.0),
            rb_dual: Some(dims.1),
            fom_solves: 0,
            enriched: true,
            skipped: false,
            inner_iters: 0,
        });
    }
    for h in r.history.iter().filter(|h| h.accepted) {
        let k = t.next_k();
        t.rows.push(RunRow {
            k,
            phase,
            seconds: t.offset + h.seconds,
            mu: h.mu_trial.clone(),
            mu_error: t.error(&h.mu_trial),
            j_h: h.j_h,
            j_r: Some(h.j_r),
            g_h: h.g_h,
            delta: Some(h.delta_next),
            rb_primal: Some(h.rb_dims.0),
            rb_dual: Some(h.rb_dims.1),
            fom_solves: t.solves_offset + h.counts.pde_solves(),
            enriched: h.enriched,
            skipped: h.skip_flag == Some(true) && !h.enriched,
            inner_iters: h.inner_iters,
        });
    }
    t.counts = add_counts(&t.counts, &r.counts);
    t.optimizer_seconds += r.seconds;
    st.audit = Some(match st.audit {
        None => r.audit,
        Some(a) => TrAudit {
            sufficient_decrease: a.sufficient_decrease && r.audit.sufficient_decrease,
            iterate_conditions: a.iterate_conditions && r.audit.iterate_conditions,
            forced_enrichment: a.forced_enrichment && r.audit.forced_enrichment,
            positivity: a.positivity && r.audit.positivity,
            online_subproblems: a.online_subproblems && r.audit.online_subproblems,
        },
    });
    st.dims = Some(r.rb_dims);
    st.rejections += r.rejections;
    let out = PhaseOutcome {
        mu: r.mu_final.clone(),
        termination: r.termination,
        diagnostic: r.diagnostic.clone(),
        iterations: r.iterations,
        j_h: r.j_h_final,
        g_h: r.g_h_final,
    };
    st.rom = Some(run.rom);
    Ok(out)
}

/// Runs `method` from `mu0`, tightening τ_FOC between phases as `plan` says.
/// Solves and time spent on Δ_μ are kept out of the optimizer's tallies.
pub fn run_method(
    fom: &FomSystem,
    method: Method,
    seed: u64,
    mu0: &[f64],
    plan: &PhasePlan,
    reference: Option<&[f64]>,
    problem: &str,
) -> Result<RunRecord> {
    if !(plan.tau_foc > 0.0) || !(plan.tighten > 1.0) || plan.max_phases == 0 || plan.tau_mu.is_nan() {
        return Err(BenchError::Validation(format!("invalid phase plan {plan:?}")));
    }
    fom.clear_cache();
    let clock = Instant::now();
    let mut t = Tracker {
        reference,
        rows: Vec::new(),
        offset: 0.0,
        solves_offset: 0,
        counts: SolveCounts::default(),
        optimizer_seconds: 0.0,
    };
    let mut st = RbState { rom: None, audit: None, dims: None, rejections: 0 };
    let mut phases = Vec::new();
    let mut mu = mu0.to_vec();
    let mut tau = plan.tau_foc;
    let mut last = None;
    for phase in 0..plan.max_phases {
        t.offset = clock.elapsed().as_secs_f64();
        t.solves_offset = t.counts.pde_solves();
        let cfg = method.config(tau);
        let out = if method.is_reduced() {
            rb_phase(fom, &cfg, &mu, phase, &mut t, &mut st)?
        } else {
            fom_phase(fom, &cfg, &mu, phase, &mut t)?
        };
        mu = out.mu.clone();
        let mut rec = PhaseRecord {
            phase,
            tau_foc: tau,
            termination: out.termination,
            iterations: out.iterations,
            last_k: t.rows.last().map_or(0, |r| r.k),
            control: None,
        };
        let wants_control = plan.tau_mu.is_finite() && out.termination.converged();
        if wants_control {
            let started = clock.elapsed().as_secs_f64();
            let before = fom.counts();
            let point = fom.evaluate(&mu)?;
            let b = delta_mu_at(fom, &point)?;
            rec.control = Some(ParameterControl {
                bound: b.bound,
                lambda_min: b.lambda_min,
                started,
                seconds: clock.elapsed().as_secs_f64() - started,
                fom_solves: fom.counts().since(&before).pde_solves(),
            });
        }
        let done = !wants_control || rec.control.as_ref().and_then(|c| c.bound).is_some_and(|b| b <= plan.tau_mu);
        phases.push(rec);
        last = Some(out);
        if done {
            break;
        }
        tau /= plan.tighten;
    }
    let out = last.expect("at least one phase ran");
    let total_seconds = clock.elapsed().as_secs_f64();

    // Terminal second-order check, outside every tally.
    let point = fom.evaluate(&mu)?;
    let h = fom.full_hessian(&point)?;
    let so = second_order_from_hessian(&h, &mu, &fom.problem().bx, EPS_ACTIVE)?;
    let control = phases.last().and_then(|p| p.control.clone());
    let error = reference.map(|r| distance(r, &mu));
    let relative_error = reference.and_then(|r| {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        error.map(|e| if n > 0.0 { e / n } else { e })
    });
    let summary = RunSummary {
        termination: out.termination,
        converged: out.termination.converged(),
        diagnostic: out.diagnostic,
        iterations: t.rows.last().map_or(0, |r| r.k),
        mu_final: mu,
        j_h: out.j_h,
        g_h: out.g_h,
        error,
        relative_error,
        optimizer_seconds: t.optimizer_seconds,
        total_seconds,
        fom_solves: t.counts.pde_solves(),
        counts: t.counts,
        rb_dims: st.dims,
        rejections: method.is_reduced().then_some(st.rejections),
        delta_mu: control.as_ref().and_then(|c| c.bound),
        lambda_min: control.as_ref().map(|c| c.lambda_min),
        second_order: Some(SecondOrder {
            passed: so.passed,
            lambda_min_inactive: so.lambda_min_inactive.is_finite().then_some(so.lambda_min_inactive),
            inactive: so.inactive.len(),
        }),
        audit: st.audit,
    };
    log::info!(
        "{method} seed {seed}: {:?} after {} iterations, g_h = {:.3e}, {} FOM solves, {:.2} s",
        summary.termination,
        summary.iterations,
        summary.g_h,
        summary.fom_solves,
        summary.total_seconds
    );
    Ok(RunRecord {
        method,
        seed,
        problem: problem.to_string(),
        dofs: fom.num_dofs(),
        tau_foc: plan.tau_foc,
        mu0: mu0.to_vec(),
        reference: reference.map(|r| r.to_vec()),
        rows: t.rows,
        phases,
        summary,
    })
}

/// The baseline optimum used as μ̄_h in error curves.
pub fn fom_reference(fom: &FomSystem, tau_foc: f64) -> Result<Vec<f64>> {
    let mut cfg = Method::FomTrNewtonCg.config(tau_foc);
    cfg.k_max = 200;
    let mu0 = fom.problem().mu_check.clone();
    let report = run_fom_tr_newton_cg(fom, &cfg, &mu0)?;
    if !report.termination.converged() {
        return Err(BenchError::Numerical(trrb_core::Error::Aborted(format!(
            "reference optimization stopped with {:?} at g_h = {:e}",
            report.termination, report.g_h_final
        ))));
    }
    fom.clear_cache();
    Ok(report.mu_final)
}

fn sweep(
    fom: &FomSystem,
    methods: &[Method],
    seeds: &[u64],
    plan: &PhasePlan,
    reference: Option<&[f64]>,
    problem: &str,
) -> Result<Vec<RunRecord>> {
    // Seeds run one after another so that each run's solve counters and timings are its own.
    let mut out = Vec::with_capacity(methods.len() * seeds.len());
    for &seed in seeds {
        let mu0 = random_start(fom, seed);
        for &m in methods {
            out.push(run_method(fom, m, seed, &mu0, plan, reference, problem)?);
        }
    }
    Ok(out)
}

/// Both experiments draw their starting points from these seeds.
pub fn seed_list(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

/// Experiment 1: errors against the baseline optimum, with Δ_μ-controlled phases.
pub fn experiment1(
    fom: &FomSystem,
    methods: &[Method],
    seeds: &[u64],
    tau_foc: f64,
    tau_mu: f64,
    reference: &[f64],
    problem: &str,
) -> Result<Vec<RunRecord>> {
    let plan = if tau_mu.is_finite() { PhasePlan::controlled(tau_foc, tau_mu) } else { PhasePlan::single(tau_foc) };
    sweep(fom, methods, seeds, &plan, Some(reference), problem)
}

/// Experiment 2: a single phase, errors against the parameter that generated u^d.
pub fn experiment2(
    fom: &FomSystem,
    methods: &[Method],
    seeds: &[u64],
    tau_foc: f64,
    mu_d: &[f64],
    problem: &str,
) -> Result<Vec<RunRecord>> {
    sweep(fom, methods, seeds, &PhasePlan::single(tau_foc), Some(mu_d), problem)
}
