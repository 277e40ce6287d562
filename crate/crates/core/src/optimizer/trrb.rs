//! The outer trust-region loop on the reduced model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::subproblem::{evaluate_model, projected_bfgs_subproblem, solve_subproblem, SubproblemExit};
use super::{SubproblemSolver, Termination, TrConfig, RHO_GUARD};
use crate::error::{check_len, Error, Result};
use crate::fom::{FomPoint, FomSystem, SolveCounts};
use crate::linalg::norm2;
use crate::model::foc_measure;
use crate::rom::{EnrichmentStrategy, RomModel};

/// Relative slack for audit comparisons of quantities that agree up to rounding.
const AUDIT_SLACK: f64 = 1e-10;

/// Actual over predicted decrease; +∞ when the prediction is below [`RHO_GUARD`].
pub fn rho(jh_k: f64, jh_next: f64, jr_k: f64, jr_next: f64) -> f64 {
    let den = jr_k - jr_next;
    if den.abs() < RHO_GUARD {
        f64::INFINITY
    } else {
        (jh_k - jh_next) / den
    }
}

/// FOM and model quantities at a candidate iterate.
#[derive(Debug, Clone)]
pub struct SkipInputs<'a> {
    pub q: f64,
    pub g_h: f64,
    pub g_r: f64,
    pub grad_h: &'a [f64],
    pub grad_r: &'a [f64],
}

/// True when the current model is trusted at the candidate without a new snapshot.
pub fn skip_enrichment_flag(x: &SkipInputs<'_>, delta_next: f64, cfg: &TrConfig) -> bool {
    let local = x.q <= cfg.beta3 * delta_next;
    let foc_gap = if x.g_r == 0.0 { x.g_h == 0.0 } else { (x.g_h - x.g_r).abs() / x.g_r <= cfg.tau_g() };
    let diff: Vec<f64> = x.grad_h.iter().zip(x.grad_r).map(|(a, b)| a - b).collect();
    let (dn, hn) = (norm2(&diff), norm2(x.grad_h));
    let grad_gap = if hn == 0.0 { dn == 0.0 } else { dn / hn <= cfg.tau_grad.min(cfg.beta3 * delta_next) };
    log::debug!(
        "skip test: q = {:.3e} vs {:.3e}, gradient gap = {:.3e} vs {:.3e}, FOC gap ok = {foc_gap}",
        x.q,
        cfg.beta3 * delta_next,
        if hn == 0.0 { 0.0 } else { dn / hn },
        cfg.tau_grad.min(cfg.beta3 * delta_next)
    );
    local && foc_gap && grad_gap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Certified decrease: Ĵ_r + Δ_Ĵ below the AGC value.
    Sufficient,
    /// Certified failure: Ĵ_r − Δ_Ĵ above the AGC value.
    Necessary,
    /// Bounds inconclusive; decided on FOM values.
    Exact,
    /// The AGC line search itself failed.
    #[default]
    AgcFailure,
}

/// One attempted step from iterate `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub mu_from: Vec<f64>,
    pub mu_trial: Vec<f64>,
    pub delta: f64,
    /// Radius after this step was processed.
    pub delta_next: f64,
    pub branch: Branch,
    pub j_r: f64,
    pub estimate: f64,
    pub q: f64,
    pub j_r_agc: f64,
    pub g_r: f64,
    pub j_h: Option<f64>,
    pub g_h: Option<f64>,
    /// `None` when not computed or guarded; see `rho_guarded`.
    pub rho: Option<f64>,
    pub rho_guarded: bool,
    pub skip_flag: Option<bool>,
    pub prev_skip: bool,
    pub accepted: bool,
    pub enriched: bool,
    pub forced_enrichment: bool,
    pub rb_dims: (usize, usize),
    pub subproblem_exit: Option<SubproblemExit>,
    pub inner_iters: usize,
    pub agc_j: Option<usize>,
    /// Cumulative since the run started.
    pub counts: SolveCounts,
    /// PDE and Riesz solves observed while the subproblem ran.
    pub subproblem_fom_solves: usize,
    /// q and the relative g_h/g_r gap at `mu_from`, with the committed radius.
    pub start_q: f64,
    pub start_foc_gap: Option<f64>,
    pub start_conditions_hold: bool,
    /// Ĵ_r(AGC) minus the updated model's value at the new iterate (accepted steps).
    pub decrease_margin: Option<f64>,
    pub seconds: f64,
}

/// Pass/fail of the run-wide invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrAudit {
    pub sufficient_decrease: bool,
    pub iterate_conditions: bool,
    pub forced_enrichment: bool,
    pub positivity: bool,
    pub online_subproblems: bool,
}

impl TrAudit {
    pub fn all(&self) -> bool {
        self.sufficient_decrease
            && self.iterate_conditions
            && self.forced_enrichment
            && self.positivity
            && self.online_subproblems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrReport {
    pub mu_final: Vec<f64>,
    pub termination: Termination,
    pub diagnostic: Option<String>,
    /// Accepted steps.
    pub iterations: usize,
    pub rejections: usize,
    pub j_h_final: f64,
    pub g_h_final: f64,
    pub rb_dims: (usize, usize),
    pub counts: SolveCounts,
    pub seconds: f64,
    pub audit: TrAudit,
    pub history: Vec<IterationRecord>,
}

/// A finished run together with its last reduced model.
#[derive(Debug, Clone)]
pub struct TrRun {
    pub report: TrReport,
    pub rom: RomModel,
}

struct FomState {
    point: FomPoint,
    value: f64,
    grad: Vec<f64>,
    g: f64,
}

impl FomState {
    fn new(fom: &FomSystem, point: FomPoint) -> Self {
        let value = fom.objective(&point.mu, &point.u);
        let grad = fom.gradient(&point);
        let g = fom.foc_measure(&point.mu, &grad);
        Self { point, value, grad, g }
    }
}

fn foc_gap(g_h: f64, g_r: f64) -> Option<f64> {
    if g_r == 0.0 {
        (g_h == 0.0).then_some(0.0)
    } else {
        Some((g_h - g_r).abs() / g_r)
    }
}

fn enrich(rom: &RomModel, fom: &FomSystem, point: &FomPoint, strategy: EnrichmentStrategy) -> Result<RomModel> {
    Ok(rom.enrich_with(fom, point, strategy)?.0)
}

/// Runs the trust-region loop from `mu0`; the model starts from the
/// Lagrangian snapshot at `mu0`.
///
/// Non-convergence is reported through [`TrReport::termination`]; a
/// non-positive Ĵ_r anywhere aborts with [`Error::Positivity`].
pub fn run_trrb(fom: &FomSystem, cfg: &TrConfig, mu0: &[f64]) -> Result<TrRun> {
    run_trrb_from(fom, cfg, mu0, None)
}

/// As [`run_trrb`], optionally continuing from an earlier model, which then
/// receives the Lagrangian snapshot at `mu0` instead of a fresh model.
pub fn run_trrb_from(fom: &FomSystem, cfg: &TrConfig, mu0: &[f64], rom: Option<&RomModel>) -> Result<TrRun> {
    cfg.validate()?;
    let bx = fom.problem().bx.clone();
    check_len(bx.dim(), mu0.len())?;
    if !bx.contains(mu0) {
        return Err(Error::Argument(format!("starting parameter {mu0:?} lies outside the box")));
    }
    let clock = Instant::now();
    let c0 = fom.counts();
    let mut here = FomState::new(fom, fom.evaluate(mu0)?);
    let mut rom = match rom {
        Some(r) => enrich(r, fom, &here.point, EnrichmentStrategy::Lagrangian)?,
        None => enrich(&RomModel::new(fom)?, fom, &here.point, EnrichmentStrategy::Lagrangian)?,
    };
    let mut delta = cfg.delta0;
    let mut prev_skip = false;
    let (mut k, mut rejections, mut consecutive) = (0usize, 0usize, 0usize);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut diagnostic = None;

    let termination = loop {
        if k >= cfg.k_max {
            break Termination::MaxIterations;
        }
        if delta < cfg.tau_mac {
            diagnostic = Some(format!("radius {delta:e} fell below {:e}", cfg.tau_mac));
            break Termination::RadiusCollapse;
        }
        if consecutive >= cfg.k_sub_max {
            diagnostic = Some(format!("{consecutive} consecutive rejections at k = {k}, radius {delta:e}"));
            log::warn!("{}", diagnostic.as_deref().unwrap_or_default());
            break Termination::RejectionGuard;
        }

        let current = evaluate_model(&rom, &here.point.mu)?;
        let grad_cur = rom.gradient_ncd(&current.point);
        let g_r_cur = foc_measure(&here.point.mu, &grad_cur, &bx);
        let gap = foc_gap(here.g, g_r_cur);
        let mut rec = IterationRecord {
            k,
            mu_from: here.point.mu.clone(),
            delta,
            prev_skip,
            start_q: current.q,
            start_foc_gap: gap,
            start_conditions_hold: current.q <= cfg.beta3 * delta * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE
                && gap.is_some_and(|g| g <= cfg.tau_g()),
            ..Default::default()
        };

        let before = fom.counts();
        let sub = match cfg.subproblem {
            SubproblemSolver::ProjectedNewton => solve_subproblem(&rom, &current, delta, cfg),
            SubproblemSolver::ProjectedBfgs => projected_bfgs_subproblem(&rom, &current, delta, cfg),
        };
        let spent = fom.counts().since(&before);
        rec.subproblem_fom_solves = spent.pde_solves() + spent.riesz;
        let sub = match sub {
            Ok(s) => s,
            Err(Error::LineSearch(msg)) => {
                log::debug!("k = {k}: AGC search failed ({msg}); shrinking the radius");
                rec.mu_trial = here.point.mu.clone();
                delta *= cfg.beta1;
                rejections += 1;
                consecutive += 1;
                rec.delta_next = delta;
                rec.rb_dims = rom.dims();
                rec.counts = fom.counts().since(&c0);
                rec.seconds = clock.elapsed().as_secs_f64();
                history.push(rec);
                continue;
            }
            Err(e) => return Err(e),
        };
        let next = &sub.next;
        let grad_next = rom.gradient_ncd(&next.point);
        let g_r_next = foc_measure(&sub.mu_next, &grad_next, &bx);
        rec.mu_trial = sub.mu_next.clone();
        rec.j_r = next.value;
        rec.estimate = next.estimate;
        rec.q = next.q;
        rec.j_r_agc = sub.agc_value;
        rec.g_r = g_r_next;
        rec.subproblem_exit = Some(sub.exit);
        rec.inner_iters = sub.inner_iters;
        rec.agc_j = Some(sub.agc_j);
        let forced_needed = cfg.beta1 * delta <= cfg.delta_min || prev_skip;

        // Outcome of the branch: Some(new FOM state, new radius, enriched?, skip?) on acceptance.
        let mut accepted: Option<(FomState, f64, bool)> = None;
        let mut converged = false;
        let mut new_rom: Option<RomModel> = None;

        if next.value + next.estimate < sub.agc_value {
            rec.branch = Branch::Sufficient;
            let there = FomState::new(fom, fom.evaluate(&sub.mu_next)?);
            let r = rho(here.value, there.value, current.value, next.value);
            record_rho(&mut rec, r);
            rec.j_h = Some(there.value);
            rec.g_h = Some(there.g);
            if there.g <= cfg.tau_foc {
                converged = true;
                accepted = Some((there, delta, false));
            } else {
                let delta_next = if r >= cfg.eta_rho { delta / cfg.beta1 } else { delta };
                let skip = cfg.skip_enrichment_enabled
                    && skip_enrichment_flag(
                        &SkipInputs { q: next.q, g_h: there.g, g_r: g_r_next, grad_h: &there.grad, grad_r: &grad_next },
                        delta_next,
                        cfg,
                    );
                rec.skip_flag = Some(skip);
                if !skip {
                    new_rom = Some(enrich(&rom, fom, &there.point, cfg.enrichment_strategy)?);
                }
                accepted = Some((there, delta_next, skip));
            }
        } else if next.value - next.estimate > sub.agc_value {
            rec.branch = Branch::Necessary;
            if forced_needed {
                rec.forced_enrichment = true;
                let point = fom.evaluate(&sub.mu_next)?;
                new_rom = Some(enrich(&rom, fom, &point, cfg.enrichment_strategy)?);
            }
        } else {
            rec.branch = Branch::Exact;
            let there = FomState::new(fom, fom.evaluate(&sub.mu_next)?);
            let r = rho(here.value, there.value, current.value, next.value);
            record_rho(&mut rec, r);
            rec.j_h = Some(there.value);
            rec.g_h = Some(there.g);
            let delta_next = delta / cfg.beta1;
            if there.g <= cfg.tau_foc {
                converged = true;
                accepted = Some((there, delta_next, false));
            } else {
                let skip = cfg.skip_enrichment_enabled
                    && skip_enrichment_flag(
                        &SkipInputs { q: next.q, g_h: there.g, g_r: g_r_next, grad_h: &there.grad, grad_r: &grad_next },
                        delta_next,
                        cfg,
                    );
                rec.skip_flag = Some(skip);
                // A skip needs a step: at μ^(k+1) = μ^(k) (the model cannot resolve a
                // decrease) nothing would change and the same iteration would repeat.
                if skip && r >= cfg.eta_rho && sub.mu_next != here.point.mu {
                    accepted = Some((there, delta_next, true));
                } else if there.value <= sub.agc_value {
                    new_rom = Some(enrich(&rom, fom, &there.point, cfg.enrichment_strategy)?);
                    let d = if r < cfg.eta_rho { delta } else { delta_next };
                    accepted = Some((there, d, false));
                } else if forced_needed {
                    rec.forced_enrichment = true;
                    new_rom = Some(enrich(&rom, fom, &there.point, cfg.enrichment_strategy)?);
                }
            }
        }

        rec.enriched = new_rom.is_some();
        if let Some(m) = new_rom {
            rom = m;
        }
        match accepted {
            Some((there, delta_next, skip)) => {
                let updated = if rec.enriched { evaluate_model(&rom, &sub.mu_next)?.value } else { next.value };
                rec.decrease_margin = Some(sub.agc_value - updated);
                rec.accepted = true;
                delta = delta_next;
                prev_skip = skip;
                here = there;
                k += 1;
                consecutive = 0;
            }
            None => {
                delta *= cfg.beta1;
                rejections += 1;
                consecutive += 1;
            }
        }
        rec.delta_next = delta;
        rec.rb_dims = rom.dims();
        rec.counts = fom.counts().since(&c0);
        rec.seconds = clock.elapsed().as_secs_f64();
        history.push(rec);
        if converged {
            break Termination::Converged;
        }
    };

    let audit = audit(&history, cfg);
    let report = TrReport {
        mu_final: here.point.mu.clone(),
        termination,
        diagnostic,
        iterations: k,
        rejections,
        j_h_final: here.value,
        g_h_final: here.g,
        rb_dims: rom.dims(),
        counts: fom.counts().since(&c0),
        seconds: clock.elapsed().as_secs_f64(),
        audit,
        history,
    };
    Ok(TrRun { report, rom })
}

fn record_rho(rec: &mut IterationRecord, r: f64) {
    if r.is_finite() {
        rec.rho = Some(r);
    } else {
        rec.rho_guarded = true;
    }
}

fn audit(history: &[IterationRecord], cfg: &TrConfig) -> TrAudit {
    let sufficient_decrease = history
        .iter()
        .filter_map(|r| r.decrease_margin.map(|m| (m, r.j_r_agc)))
        .all(|(m, agc)| m >= -AUDIT_SLACK * agc.abs());
    let iterate_conditions = history.iter().all(|r| r.start_conditions_hold);
    let forced_enrichment = history
        .iter()
        .filter(|r| !r.accepted && r.branch != Branch::AgcFailure)
        .filter(|r| r.prev_skip || cfg.beta1 * r.delta <= cfg.delta_min)
        .all(|r| r.enriched);
    let online_subproblems = history.iter().all(|r| r.subproblem_fom_solves == 0);
    TrAudit { sufficient_decrease, iterate_conditions, forced_enrichment, positivity: true, online_subproblems }
}
