//! Classical trust-region Newton-CG on the full-order model with box constraints.
//!
//! Each step takes the generalized Cauchy point along the projected gradient
//! path, then refines it by Steihaug CG on the variables still free there,
//! stopping at the first bound or at the radius.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Termination, TrConfig, RHO_GUARD};
use crate::error::{check_len, Error, Result};
use crate::fom::{FomPoint, FomSystem, SolveCounts};
use crate::linalg::{axpy, dot, norm2};

/// Model decrease demanded of the Cauchy point, relative to the linear term.
const CAUCHY_DECREASE: f64 = 1e-4;
/// Steps with ρ above this are accepted.
const ACCEPT_RHO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomIterationRecord {
    pub k: usize,
    pub mu: Vec<f64>,
    pub j_h: f64,
    pub g_h: f64,
    pub radius: f64,
    pub rho: Option<f64>,
    pub accepted: bool,
    pub cg_iters: usize,
    /// Cumulative since the run started.
    pub counts: SolveCounts,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomReport {
    pub mu_final: Vec<f64>,
    pub termination: Termination,
    /// Accepted steps.
    pub iterations: usize,
    pub j_h_final: f64,
    pub g_h_final: f64,
    pub counts: SolveCounts,
    pub seconds: f64,
    pub history: Vec<FomIterationRecord>,
}

/// Uses `tau_foc`, `k_max`, `kappa`, `armijo_max` and `tau_mac` from `cfg`.
/// The initial radius is a tenth of the box diagonal, which also caps it.
pub fn run_fom_tr_newton_cg(fom: &FomSystem, cfg: &TrConfig, mu0: &[f64]) -> Result<FomReport> {
    cfg.validate()?;
    let bx = fom.problem().bx.clone();
    check_len(bx.dim(), mu0.len())?;
    if !bx.contains(mu0) {
        return Err(Error::Argument(format!("starting parameter {mu0:?} lies outside the box")));
    }
    let clock = Instant::now();
    let c0 = fom.counts();
    let diag = norm2(&bx.upper().iter().zip(bx.lower()).map(|(u, l)| u - l).collect::<Vec<_>>());
    let mut radius = 0.1 * diag;
    let mut point = fom.evaluate(mu0)?;
    let mut value = fom.objective(&point.mu, &point.u);
    let mut grad = fom.gradient(&point);
    let mut history = Vec::new();
    let mut accepted_steps = 0;

    let termination = loop {
        let g = fom.foc_measure(&point.mu, &grad);
        let mut rec = FomIterationRecord {
            k: history.len(),
            mu: point.mu.clone(),
            j_h: value,
            g_h: g,
            radius,
            rho: None,
            accepted: false,
            cg_iters: 0,
            counts: fom.counts().since(&c0),
            seconds: clock.elapsed().as_secs_f64(),
        };
        if g <= cfg.tau_foc {
            history.push(rec);
            break Termination::Converged;
        }
        if history.len() >= cfg.k_max {
            history.push(rec);
            break Termination::MaxIterations;
        }
        if radius < cfg.tau_mac {
            history.push(rec);
            break Termination::RadiusCollapse;
        }
        let (s, pred, cg) = box_tr_step(fom, &point, &grad, radius, cfg)?;
        rec.cg_iters = cg;
        let snorm = norm2(&s);
        if !(pred > 0.0) || snorm == 0.0 {
            radius *= 0.25;
            history.push(rec);
            continue;
        }
        let trial: Vec<f64> = bx.clamp(&point.mu.iter().zip(&s).map(|(m, si)| m + si).collect::<Vec<_>>());
        let tp = fom.evaluate(&trial)?;
        let tv = fom.objective(&tp.mu, &tp.u);
        let r = if pred < RHO_GUARD { f64::INFINITY } else { (value - tv) / pred };
        rec.rho = r.is_finite().then_some(r);
        if r < 0.25 {
            radius = 0.25 * snorm;
        } else if r > 0.75 && snorm >= 0.99 * radius {
            radius = (2.0 * radius).min(diag);
        }
        if r > ACCEPT_RHO {
            rec.accepted = true;
            accepted_steps += 1;
            grad = fom.gradient(&tp);
            point = tp;
            value = tv;
        }
        history.push(rec);
    };
    Ok(FomReport {
        g_h_final: fom.foc_measure(&point.mu, &grad),
        mu_final: point.mu,
        termination,
        iterations: accepted_steps,
        j_h_final: value,
        counts: fom.counts().since(&c0),
        seconds: clock.elapsed().as_secs_f64(),
        history,
    })
}

/// Step s, predicted decrease −m(s) and the number of CG iterations.
fn box_tr_step(fom: &FomSystem, point: &FomPoint, g: &[f64], radius: f64, cfg: &TrConfig) -> Result<(Vec<f64>, f64, usize)> {
    let bx = &fom.problem().bx;
    let p = g.len();
    let lo: Vec<f64> = bx.lower().iter().zip(&point.mu).map(|(l, m)| l - m).collect();
    let hi: Vec<f64> = bx.upper().iter().zip(&point.mu).map(|(u, m)| u - m).collect();
    let clamp = |s: &mut Vec<f64>| s.iter_mut().enumerate().for_each(|(i, x)| *x = x.clamp(lo[i], hi[i]));

    let gn = norm2(g);
    let mut t = radius / gn;
    let mut cauchy = None;
    for _ in 0..=cfg.armijo_max {
        let mut s: Vec<f64> = g.iter().map(|gi| -t * gi).collect();
        clamp(&mut s);
        let hs = fom.hessvec(point, &s)?;
        let lin = dot(g, &s);
        let m = lin + 0.5 * dot(&s, &hs);
        if lin < 0.0 && m <= CAUCHY_DECREASE * lin {
            cauchy = Some((s, hs, m));
            break;
        }
        t *= cfg.kappa;
    }
    let Some((mut s, mut hs, _)) = cauchy else {
        return Ok((vec![0.0; p], 0.0, 0));
    };

    // Steihaug CG on the free variables. A variable that runs into its bound is
    // fixed there and CG restarts on the rest; only the radius or convergence ends the step.
    let mut free: Vec<bool> = (0..p).map(|i| s[i] > lo[i] && s[i] < hi[i]).collect();
    let mut iters = 0;
    'restart: for _ in 0..p {
        let mask = |v: &mut [f64], free: &[bool]| v.iter_mut().zip(free).filter(|(_, f)| !**f).for_each(|(x, _)| *x = 0.0);
        let mut r: Vec<f64> = g.iter().zip(&hs).map(|(a, b)| a + b).collect();
        mask(&mut r, &free);
        // Forcing relative to the gradient, not to the residual at the Cauchy point:
        // a Cauchy step along stiff directions can inflate the latter.
        let mut gf = g.to_vec();
        mask(&mut gf, &free);
        let g0 = norm2(&gf);
        let tol = 0.5f64.min(g0.sqrt()) * g0;
        let mut d: Vec<f64> = r.iter().map(|x| -x).collect();
        let mut rr = dot(&r, &r);
        let mut inner = 0;
        while inner < p && rr.sqrt() > tol {
            inner += 1;
            iters += 1;
            let hd_full = fom.hessvec(point, &d)?;
            let mut hd = hd_full.clone();
            mask(&mut hd, &free);
            let curv = dot(&d, &hd);
                let (tmax, bound_hit) = max_feasible_step(&s, &d, &lo, &hi, radius);
            if !(curv > 0.0) || rr / curv >= tmax {
                axpy(tmax, &d, &mut s);
                axpy(tmax, &hd_full, &mut hs);
                if !bound_hit {
                    break 'restart;
                }
                let before = free.iter().filter(|f| **f).count();
                for i in 0..p {
                    let span = 1e-12 * (1.0 + hi[i].abs().max(lo[i].abs()));
                    if s[i] <= lo[i] + span || s[i] >= hi[i] - span {
                        free[i] = false;
                    }
                }
                if free.iter().filter(|f| **f).count() == before {
                    break 'restart;
                }
                continue 'restart;
            }
            let alpha = rr / curv;
            axpy(alpha, &d, &mut s);
            axpy(alpha, &hd_full, &mut hs);
            axpy(alpha, &hd, &mut r);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            d.iter_mut().zip(&r).for_each(|(di, ri)| *di = -ri + beta * *di);
        }
        break;
    }
    clamp(&mut s);
    let m = dot(g, &s) + 0.5 * dot(&s, &hs);
    Ok((s, -m, iters))
}

/// Largest τ ≥ 0 keeping s + τd inside the shifted box and the ball of `radius`,
/// and whether a box face (rather than the ball) is what limits it.
fn max_feasible_step(s: &[f64], d: &[f64], lo: &[f64], hi: &[f64], radius: f64) -> (f64, bool) {
    let a = dot(d, d);
    if a == 0.0 {
        return (0.0, false);
    }
    let b = 2.0 * dot(s, d);
    let c = dot(s, s) - radius * radius;
    let ball = ((-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).max(0.0);
    let mut tau = ball;
    for i in 0..s.len() {
        if d[i] > 0.0 {
            tau = tau.min((hi[i] - s[i]) / d[i]);
        } else if d[i] < 0.0 {
            tau = tau.min((lo[i] - s[i]) / d[i]);
        }
    }
    (tau.max(0.0), tau < ball)
}
