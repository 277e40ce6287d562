mod common;

use common::{norm, parameter_free_pde, parameter_free_pde_with, random_mus, sub, toy};
use nalgebra::DVector;
use trrb_core::error::Error;
use trrb_core::fom::FomSystem;
use trrb_core::model::foc_measure;
use trrb_core::optimizer::{
    backtrack, compute_agc, evaluate_model, newton_direction, projected_bfgs_subproblem, rho, run_fom_tr_newton_cg,
    run_trrb, skip_enrichment_flag, solve_subproblem, Branch, SkipInputs, SubproblemExit, Termination, TrConfig,
};
use trrb_core::rom::{EnrichmentStrategy, RomModel};
use trrb_core::toy::two_parameter_block;

/// Minimizer of `f` over a 2-D box by repeated 21×21 grids, each zoomed onto
/// the best node of the last.
fn grid_refine(f: impl Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = 20;
    let (mut a, mut b) = (lo.to_vec(), hi.to_vec());
    loop {
        let mut best = (f64::INFINITY, vec![]);
        for i in 0..=n {
            for j in 0..=n {
                let mu = vec![a[0] + (b[0] - a[0]) * i as f64 / n as f64, a[1] + (b[1] - a[1]) * j as f64 / n as f64];
                let v = f(&mu);
                if v < best.0 {
                    best = (v, mu);
                }
            }
        }
        let h: Vec<f64> = (0..2).map(|c| (b[c] - a[c]) / n as f64).collect();
        if h[0].max(h[1]) < 1e-11 {
            return best.1;
        }
        for c in 0..2 {
            a[c] = (best.1[c] - 2.0 * h[c]).max(lo[c]);
            b[c] = (best.1[c] + 2.0 * h[c]).min(hi[c]);
        }
    }
}

fn quadratic_value(mu: &[f64], w: &[f64], t: &[f64]) -> f64 {
    0.5 * mu.iter().zip(w).zip(t).map(|((m, w), t)| w * (m - t) * (m - t)).sum::<f64>()
}

#[test]
fn config_defaults_validation_and_round_trip() {
    let cfg = TrConfig::default();
    assert_eq!((cfg.delta0, cfg.beta1, cfg.kappa, cfg.beta2, cfg.eta_rho), (0.1, 0.5, 0.5, 0.95, 0.75));
    assert_eq!((cfg.k_max, cfg.k_sub_max, cfg.armijo_max), (60, 400, 50));
    assert_eq!((cfg.beta3, cfg.tau_grad, cfg.delta_min), (0.5, 0.01, 1e-6));
    cfg.validate().unwrap();
    assert!((TrConfig::newton_oe(1e-5).tau_g() - 1e3).abs() < 1e-9);
    for bad in [
        TrConfig { beta1: 1.0, ..cfg.clone() },
        TrConfig { eta_rho: 0.0, ..cfg.clone() },
        TrConfig { tau_sub: 1.5, ..cfg.clone() },
        TrConfig { kappa_arm: 0.0, ..cfg.clone() },
        TrConfig { k_max: 0, ..cfg.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Configuration(_))));
    }
    let bfgs = TrConfig::bfgs_ue(1e-7);
    let back: TrConfig = serde_json::from_str(&serde_json::to_string(&bfgs).unwrap()).unwrap();
    assert_eq!(back, bfgs);
    assert!(!TrConfig::newton_ue(1e-5).skip_enrichment_enabled);
}

#[test]
fn agc_at_stationary_point_stays_put() {
    let fom = parameter_free_pde(4);
    let rom = RomModel::initialize(&fom, &[0.3, 0.7]).unwrap();
    let cur = evaluate_model(&rom, &[0.3, 0.7]).unwrap();
    let step = compute_agc(&rom, &cur, 0.1, &TrConfig::default()).unwrap();
    assert_eq!(step.j, 0);
    assert_eq!(step.eval.mu(), &[0.3, 0.7]);
}

#[test]
fn agc_matches_closed_form_on_quadratic() {
    let (w, t) = ([2.0, 0.5], [0.3, 0.7]);
    let fom = parameter_free_pde(4);
    let rom = RomModel::initialize(&fom, &[0.5, 0.5]).unwrap();
    let cfg = TrConfig::default();
    for mu in [[0.9, 0.1], [0.35, 0.65], [0.0, 1.0]] {
        let cur = evaluate_model(&rom, &mu).unwrap();
        let step = compute_agc(&rom, &cur, 1e6, &cfg).unwrap();
        let g: Vec<f64> = (0..2).map(|i| w[i] * (mu[i] - t[i])).collect();
        // the first exponent accepted by the scalar Armijo test
        let expected = (0..=cfg.armijo_max)
            .find(|&j| {
                let tau = cfg.kappa.powi(j as i32);
                let trial: Vec<f64> = (0..2).map(|i| (mu[i] - tau * g[i]).clamp(0.0, 1.0)).collect();
                let s2 = norm(&sub(&trial, &mu)).powi(2);
                quadratic_value(&trial, &w, &t) - quadratic_value(&mu, &w, &t) <= -cfg.kappa_arm / tau * s2
            })
            .unwrap();
        assert_eq!(step.j, expected, "mu = {mu:?}");
        let want: Vec<f64> =
            (0..2).map(|i| (mu[i] - cfg.kappa.powi(expected as i32) * g[i]).clamp(0.0, 1.0)).collect();
        assert!(norm(&sub(step.eval.mu(), &want)) < 1e-14);
        assert!(step.eval.value < cur.value || g.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn newton_direction_cases() {
    let cfg = TrConfig::default();
    // SPD, nothing active: the CG residual meets the forcing tolerance
    let fom = toy(6, false);
    let mu = [1.2, 0.9, 2.0];
    let rom = RomModel::initialize(&fom, &mu).unwrap();
    let pt = rom.evaluate(&mu).unwrap();
    let g = rom.gradient_ncd(&pt);
    let h = rom.full_hessian(&pt).unwrap();
    assert!(trrb_core::linalg::sym_min_eigenvalue(&h) > 0.0);
    let d = newton_direction(&rom, &pt, &g, &cfg).unwrap();
    let res = &h * DVector::from_column_slice(&d) + DVector::from_column_slice(&g);
    let gn = norm(&g);
    assert!(res.norm() <= 0.5f64.min(gn.sqrt()) * gn * (1.0 + 1e-10), "{} vs {gn}", res.norm());
    assert!(d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() < 0.0);

    // concave quadratic: negative curvature in the first CG step
    let fom = parameter_free_pde_with(4, vec![-1.0, -0.5], vec![0.3, 0.7], 10.0);
    let rom = RomModel::initialize(&fom, &[0.5, 0.5]).unwrap();
    let pt = rom.evaluate(&[0.5, 0.4]).unwrap();
    let g = rom.gradient_ncd(&pt);
    let d = newton_direction(&rom, &pt, &g, &cfg).unwrap();
    assert_eq!(d, g.iter().map(|x| -x).collect::<Vec<_>>());

    // active component gets the identity row
    let fom = parameter_free_pde(4);
    let rom = RomModel::initialize(&fom, &[0.5, 0.5]).unwrap();
    let pt = rom.evaluate(&[0.0, 0.4]).unwrap();
    let g = rom.gradient_ncd(&pt);
    let d = newton_direction(&rom, &pt, &g, &cfg).unwrap();
    assert_eq!(d[0], -g[0]);
    // the free component is an exact Newton step on the 1-D quadratic
    assert!((d[1] - (0.7 - 0.4)).abs() < 1e-10);
}

#[test]
fn backtrack_cases() {
    let cfg = TrConfig::default();
    // exact Newton step on a quadratic is accepted at once
    let fom = parameter_free_pde(4);
    let rom = RomModel::initialize(&fom, &[0.5, 0.5]).unwrap();
    let cur = evaluate_model(&rom, &[0.5, 0.5]).unwrap();
    let step = backtrack(&rom, &cur, &[-0.2, 0.2], 1.0, &cfg).unwrap();
    assert_eq!(step.j, 0);
    assert!(norm(&sub(step.eval.mu(), &[0.3, 0.7])) < 1e-14);

    // ascent direction never satisfies the decrease test
    let r = backtrack(&rom, &cur, &[0.2, -0.2], 1.0, &cfg);
    assert!(matches!(r, Err(Error::LineSearch(_))));

    // only the radius condition binds: pick δ equal to q three halvings in
    let fom = toy(6, false);
    let mu = [1.0, 1.0, 1.0];
    let rom = RomModel::initialize(&fom, &mu).unwrap();
    let cur = evaluate_model(&rom, &mu).unwrap();
    let d: Vec<f64> = rom.gradient_ncd(&cur.point).iter().map(|g| -g).collect();
    let d: Vec<f64> = d.iter().map(|x| x / norm(&d) * 0.1).collect();
    let at = |j: i32| {
        let tau = cfg.kappa.powi(j);
        let trial = fom.problem().bx.clamp(&mu.iter().zip(&d).map(|(m, di)| m + tau * di).collect::<Vec<_>>());
        let e = evaluate_model(&rom, &trial).unwrap();
        let s2 = norm(&sub(&trial, &mu)).powi(2);
        (e.q, e.value - cur.value <= -cfg.kappa_arm / tau * s2)
    };
    let qs: Vec<(f64, bool)> = (0..4).map(at).collect();
    assert!(qs.iter().all(|(_, armijo)| *armijo), "{qs:?}");
    assert!(qs[0].0 > qs[3].0 && qs[1].0 > qs[3].0 && qs[2].0 > qs[3].0, "{qs:?}");
    let step = backtrack(&rom, &cur, &d, qs[3].0, &cfg).unwrap();
    assert_eq!(step.j, 3);
}

#[test]
fn subproblem_matches_grid_oracle_on_two_parameter_toy() {
    let fom = two_parameter_block(8).unwrap();
    let bx = fom.problem().bx.clone();
    let mut rom = RomModel::initialize(&fom, &[1.0, 1.0]).unwrap();
    for mu in [[0.6, 1.8], [1.8, 0.3]] {
        rom = rom.enrich(&fom, &mu, EnrichmentStrategy::Lagrangian).unwrap().0;
    }
    let cfg = TrConfig { tau_sub: 1e-12, ..TrConfig::default() };
    let cur = evaluate_model(&rom, &[1.0, 1.0]).unwrap();
    let before = fom.counts();
    let res = solve_subproblem(&rom, &cur, 1e12, &cfg).unwrap();
    assert_eq!(fom.counts(), before, "subproblem touched the FOM");
    assert_eq!(res.exit, SubproblemExit::Foc);
    let oracle = grid_refine(|mu| evaluate_model(&rom, mu).unwrap().value, bx.lower(), bx.upper());
    let err = norm(&sub(&res.mu_next, &oracle));
    assert!(err <= 1e-6, "subproblem {:?} vs grid {oracle:?}: {err:e}", res.mu_next);
    assert_eq!(res.mu_next[1], 2.0);

    let bfgs = projected_bfgs_subproblem(&rom, &cur, 1e12, &cfg).unwrap();
    assert_eq!(bfgs.exit, SubproblemExit::Foc);
    assert!(norm(&sub(&bfgs.mu_next, &oracle)) <= 1e-6);
}

#[test]
fn subproblem_exit_contracts() {
    let cfg = TrConfig::default();
    // FOC at the start
    let fom = parameter_free_pde(4);
    let rom = RomModel::initialize(&fom, &[0.3, 0.7]).unwrap();
    let cur = evaluate_model(&rom, &[0.3, 0.7]).unwrap();
    let res = solve_subproblem(&rom, &cur, 0.1, &cfg).unwrap();
    assert_eq!((res.exit, res.inner_iters), (SubproblemExit::Foc, 0));
    assert_eq!(res.mu_next, res.agc);

    // a radius between the start and the unconstrained model optimum ends on the boundary
    let fom = toy(6, false);
    let mu = [0.6, 1.8, 0.5];
    let rom = RomModel::initialize(&fom, &mu).unwrap();
    let cur = evaluate_model(&rom, &mu).unwrap();
    let mut seen_boundary = false;
    for delta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
        let res = solve_subproblem(&rom, &cur, delta, &cfg).unwrap();
        let q = res.next.q;
        assert!(q <= delta, "q = {q:e} > δ = {delta:e}");
        match res.exit {
            SubproblemExit::TrBoundary => {
                seen_boundary = true;
                assert!(cfg.beta2 * delta <= q);
            }
            SubproblemExit::Foc => {
                let g = rom.gradient_ncd(&res.next.point);
                assert!(foc_measure(&res.mu_next, &g, &fom.problem().bx) <= cfg.tau_sub);
            }
            SubproblemExit::MaxIter => {}
        }
        assert!(res.next.value <= res.agc_value && res.agc_value <= cur.value);
    }
    assert!(seen_boundary);
}

#[test]
fn bfgs_tail_is_superlinear_on_quadratic() {
    // interior optimum, no active bounds
    let fom = parameter_free_pde_with(4, vec![2.0, 0.5], vec![0.4, 0.6], 1.0);
    let rom = RomModel::initialize(&fom, &[0.5, 0.5]).unwrap();
    let cur = evaluate_model(&rom, &[0.9, 0.1]).unwrap();
    let errs: Vec<f64> = (1..=8)
        .map(|k| {
            let cfg = TrConfig { k_sub_max: k, tau_sub: 1e-14, ..TrConfig::default() };
            let r = projected_bfgs_subproblem(&rom, &cur, 1e6, &cfg).unwrap();
            norm(&sub(&r.mu_next, &[0.4, 0.6]))
        })
        .collect();
    // once the decrease drops below rounding of Ĵ the iterate freezes
    let mut tail = errs.clone();
    tail.dedup();
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(errs.last().unwrap() < &1e-7, "{errs:?}");
    assert!(ratios.len() >= 2 && ratios[ratios.len() - 1] < 0.1, "{ratios:?}");
}

#[test]
fn rho_and_skip_flag_examples() {
    assert_eq!(rho(3.0, 2.0, 3.0, 2.0), 1.0);
    assert_eq!(rho(3.0, 1.0, 3.0, 2.0), 2.0);
    assert_eq!(rho(3.0, 1.0, 2.0, 2.0), f64::INFINITY);

    let cfg = TrConfig::newton_oe(1e-5);
    let fom = toy(6, false);
    let mu = [1.3, 0.7, 2.5];
    let rom = RomModel::initialize(&fom, &mu).unwrap();
    let fp = fom.evaluate(&mu).unwrap();
    let gh = fom.gradient(&fp);
    let e = evaluate_model(&rom, &mu).unwrap();
    let gr = rom.gradient_ncd(&e.point);
    let (g_h, g_r) = (fom.foc_measure(&mu, &gh), foc_measure(&mu, &gr, &fom.problem().bx));
    let x = SkipInputs { q: e.q, g_h, g_r, grad_h: &gh, grad_r: &gr };
    assert!(skip_enrichment_flag(&x, 0.1, &cfg));
    let wide = SkipInputs { g_h: g_r * (1.0 + 2.0 * cfg.tau_g()), ..x.clone() };
    assert!(!skip_enrichment_flag(&wide, 0.1, &cfg));
    let zero = SkipInputs { g_h: 0.0, g_r: 0.0, ..x.clone() };
    assert!(skip_enrichment_flag(&zero, 0.1, &cfg));
    let off = SkipInputs { g_h: 1e-3, g_r: 0.0, ..x };
    assert!(!skip_enrichment_flag(&off, 0.1, &cfg));
}

fn fom_optimum(fom: &FomSystem) -> Vec<f64> {
    let cfg = TrConfig { tau_foc: 1e-10, k_max: 200, ..TrConfig::default() };
    let r = run_fom_tr_newton_cg(fom, &cfg, &[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(r.termination, Termination::Converged);
    r.mu_final
}

#[test]
fn fom_baseline_matches_grid_and_stops_at_stationary_start() {
    let fom = two_parameter_block(8).unwrap();
    let bx = fom.problem().bx.clone();
    let cfg = TrConfig { tau_foc: 1e-12, k_max: 200, ..TrConfig::default() };
    let r = run_fom_tr_newton_cg(&fom, &cfg, &[0.6, 0.2]).unwrap();
    assert_eq!(r.termination, Termination::Converged);
    let oracle = grid_refine(
        |mu| {
            let p = fom.evaluate(mu).unwrap();
            fom.objective(mu, &p.u)
        },
        bx.lower(),
        bx.upper(),
    );
    assert!(norm(&sub(&r.mu_final, &oracle)) <= 1e-6, "{:?} vs {oracle:?}", r.mu_final);

    let again = run_fom_tr_newton_cg(&fom, &TrConfig { tau_foc: 1e-9, ..cfg }, &r.mu_final).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.history.len(), 1);
}

#[test]
fn trrb_newton_oe_converges_with_clean_audits() {
    let fom = toy(8, true);
    let opt = fom_optimum(&fom);
    for mu0 in random_mus(&fom, 3, 11) {
        let run = run_trrb(&fom, &TrConfig::newton_oe(1e-6), &mu0).unwrap();
        let rep = &run.report;
        assert_eq!(rep.termination, Termination::Converged, "{mu0:?}: {rep:#?}");
        assert!(rep.g_h_final <= 1e-6);
        assert!(rep.audit.all(), "{:?}", rep.audit);
        assert!(norm(&sub(&rep.mu_final, &opt)) < 1e-3, "{:?} vs {opt:?}", rep.mu_final);
        assert!(rep.history.windows(2).all(|w| w[0].seconds <= w[1].seconds));
        for r in rep.history.iter().filter(|r| r.accepted && r.rho.is_some_and(|x| x >= 0.75)) {
            if r.branch == Branch::Sufficient && r.g_h.is_some_and(|g| g > 1e-6) {
                assert!((r.delta_next - r.delta / 0.5).abs() < 1e-15 * r.delta_next);
            }
        }
    }
}

#[test]
fn trrb_variants_and_stationary_start() {
    let fom = toy(8, true);
    let opt = fom_optimum(&fom);
    let mu0 = random_mus(&fom, 1, 5).remove(0);
    let oe = run_trrb(&fom, &TrConfig::newton_oe(1e-6), &mu0).unwrap().report;
    let ue = run_trrb(&fom, &TrConfig::newton_ue(1e-6), &mu0).unwrap().report;
    let bfgs = run_trrb(&fom, &TrConfig::bfgs_ue(1e-6), &mu0).unwrap().report;
    for r in [&oe, &ue, &bfgs] {
        assert_eq!(r.termination, Termination::Converged);
        assert!(r.audit.all(), "{:?}", r.audit);
        assert!(norm(&sub(&r.mu_final, &opt)) < 1e-3);
    }
    assert!(oe.rb_dims.0 <= ue.rb_dims.0);
    assert!(ue.history.iter().all(|r| r.skip_flag != Some(true)));
    // identical decisions until the first skip
    let first_skip = oe.history.iter().position(|r| r.skip_flag == Some(true)).unwrap_or(oe.history.len());
    for (a, b) in oe.history.iter().zip(&ue.history).take(first_skip) {
        assert_eq!((a.accepted, a.branch, &a.mu_trial), (b.accepted, b.branch, &b.mu_trial));
    }

    let run = run_trrb(&fom, &TrConfig::newton_oe(1e-5), &opt).unwrap().report;
    assert_eq!(run.termination, Termination::Converged);
    assert!(run.iterations <= 1, "{run:#?}");
}

#[test]
fn trrb_rejects_bad_input_and_is_deterministic() {
    let fom = toy(6, false);
    assert!(matches!(run_trrb(&fom, &TrConfig::default(), &[0.1, 1.0, 1.0]), Err(Error::Argument(_))));
    assert!(matches!(run_trrb(&fom, &TrConfig::default(), &[1.0, 1.0]), Err(Error::Dimension { .. })));
    let bad = TrConfig { beta2: 2.0, ..TrConfig::default() };
    assert!(matches!(run_trrb(&fom, &bad, &[1.0, 1.0, 1.0]), Err(Error::Configuration(_))));

    let mu0 = [0.7, 1.9, 4.0];
    let a = run_trrb(&fom, &TrConfig::newton_oe(1e-6), &mu0).unwrap().report;
    let b = run_trrb(&fom, &TrConfig::newton_oe(1e-6), &mu0).unwrap().report;
    let strip = |r: &trrb_core::optimizer::TrReport| {
        r.history.iter().map(|x| (x.mu_trial.clone(), x.accepted, x.q.to_bits(), x.rb_dims)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.mu_final, b.mu_final);
}
