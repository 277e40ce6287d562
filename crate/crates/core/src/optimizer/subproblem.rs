//! AGC point, backtracking and the two projected subproblem solvers.
//!
//! Nothing here sees a [`crate::fom::FomSystem`]; every evaluation is online.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::TrConfig;
use crate::error::{Error, Result};
use crate::estimators::delta_objective;
use crate::linalg::{axpy, dot, norm2};
use crate::model::{eps_active_set, foc_measure};
use crate::rom::{RomModel, RomPoint};

/// Ĵ_r, its error bound and q = Δ_Ĵ/Ĵ_r at one parameter.
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub point: RomPoint,
    pub value: f64,
    pub estimate: f64,
    pub q: f64,
}

impl ModelEval {
    pub fn mu(&self) -> &[f64] {
        &self.point.mu
    }
}

/// Fails with [`Error::Positivity`] unless Ĵ_r(μ) > 0, since q is meaningless otherwise.
pub fn evaluate_model(rom: &RomModel, mu: &[f64]) -> Result<ModelEval> {
    let point = rom.evaluate(mu)?;
    let value = rom.objective_ncd(&point);
    if !(value > 0.0) {
        return Err(Error::Positivity { mu: mu.to_vec(), value });
    }
    let estimate = delta_objective(rom, &point)?;
    Ok(ModelEval { q: estimate / value, point, value, estimate })
}

/// An accepted backtracking point and the exponent j that produced it.
#[derive(Debug, Clone)]
pub struct Step {
    pub eval: ModelEval,
    pub j: usize,
}

/// Smallest j ≤ armijo_max with μ(j) = P(μ + κʲd) meeting
/// Ĵ_r(μ(j)) − Ĵ_r(μ) ≤ −(κ_arm/κʲ)‖μ(j) − μ‖² and q(μ(j)) ≤ δ.
/// Points with Ĵ_r ≤ 0 have no meaningful q and are treated as outside the radius.
pub fn backtrack(rom: &RomModel, from: &ModelEval, d: &[f64], delta: f64, cfg: &TrConfig) -> Result<Step> {
    let bx = &rom.problem().bx;
    let mu = from.mu();
    let mut t = 1.0;
    for j in 0..=cfg.armijo_max {
        let raw: Vec<f64> = mu.iter().zip(d).map(|(m, di)| m + t * di).collect();
        let cand = bx.clamp(&raw);
        let eval = match evaluate_model(rom, &cand) {
            Ok(e) => e,
            Err(Error::Positivity { .. }) => {
                t *= cfg.kappa;
                continue;
            }
            Err(e) => return Err(e),
        };
        let s2: f64 = cand.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        if eval.value - from.value <= -cfg.kappa_arm / t * s2 && eval.q <= delta {
            return Ok(Step { eval, j });
        }
        t *= cfg.kappa;
    }
    Err(Error::LineSearch(format!(
        "no step along the given direction met the decrease and radius conditions within {} reductions",
        cfg.armijo_max
    )))
}

/// Projected-gradient backtracking from the current iterate.
pub fn compute_agc(rom: &RomModel, current: &ModelEval, delta: f64, cfg: &TrConfig) -> Result<Step> {
    let d: Vec<f64> = rom.gradient_ncd(&current.point).iter().map(|g| -g).collect();
    backtrack(rom, current, &d, delta, cfg)
}

/// −ℛ⁻¹∇Ĵ_r where ℛ is the reduced hessian with ε-active rows and columns
/// replaced by the identity, solved by truncated CG on the inactive block.
///
/// Negative curvature stops CG at the last iterate; if it shows up in the
/// very first step the steepest-descent direction is returned.
pub fn newton_direction(rom: &RomModel, point: &RomPoint, grad: &[f64], cfg: &TrConfig) -> Result<Vec<f64>> {
    let p = grad.len();
    let active = eps_active_set(&point.mu, &rom.problem().bx, cfg.eps_active)?;
    let free: Vec<bool> = (0..p).map(|i| !active.contains(&i)).collect();
    let mask = |v: &mut [f64]| v.iter_mut().zip(&free).filter(|(_, f)| !**f).for_each(|(x, _)| *x = 0.0);
    let steepest: Vec<f64> = grad.iter().map(|g| -g).collect();

    let mut r = grad.to_vec();
    mask(&mut r);
    let gnorm = norm2(&r);
    if gnorm == 0.0 {
        return Ok(steepest);
    }
    let tol = 0.5f64.min(gnorm.sqrt()) * gnorm;
    let mut x = vec![0.0; p];
    let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
    let mut rr = dot(&r, &r);
    for it in 0..p {
        let mut hd = rom.hessvec_ncd(point, &dir)?;
        mask(&mut hd);
        let curv = dot(&dir, &hd);
        if !(curv > 0.0) {
            if it == 0 {
                return Ok(steepest);
            }
            break;
        }
        let alpha = rr / curv;
        axpy(alpha, &dir, &mut x);
        axpy(alpha, &hd, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        dir.iter_mut().zip(&r).for_each(|(d, ri)| *d = -ri + beta * *d);
    }
    Ok((0..p).map(|i| if free[i] { x[i] } else { steepest[i] }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemExit {
    /// g_r(μ) ≤ τ_sub.
    Foc,
    /// β₂δ ≤ q(μ) ≤ δ.
    TrBoundary,
    /// Iteration budget or inner backtracking exhausted.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub mu_next: Vec<f64>,
    pub exit: SubproblemExit,
    /// Steps taken after the AGC point.
    pub inner_iters: usize,
    pub agc: Vec<f64>,
    pub agc_j: usize,
    /// Ĵ_r at the AGC point.
    pub agc_value: f64,
    /// Model data at `mu_next`.
    pub next: ModelEval,
    /// Backtracking exponent of each inner step.
    pub inner_j: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Metric {
    Newton,
    Bfgs,
}

/// Projected Newton started at the AGC point.
///
/// An AGC failure surfaces as [`Error::LineSearch`]; a failed inner line
/// search ends the solve with [`SubproblemExit::MaxIter`] at the current point.
pub fn solve_subproblem(rom: &RomModel, current: &ModelEval, delta: f64, cfg: &TrConfig) -> Result<SubproblemResult> {
    inner_loop(rom, current, delta, cfg, Metric::Newton)
}

/// Same contract as [`solve_subproblem`] with a projected BFGS metric; a
/// failed curvature condition resets the metric to the identity.
pub fn projected_bfgs_subproblem(
    rom: &RomModel,
    current: &ModelEval,
    delta: f64,
    cfg: &TrConfig,
) -> Result<SubproblemResult> {
    inner_loop(rom, current, delta, cfg, Metric::Bfgs)
}

fn inner_loop(rom: &RomModel, current: &ModelEval, delta: f64, cfg: &TrConfig, metric: Metric) -> Result<SubproblemResult> {
    let bx = &rom.problem().bx;
    let p = rom.dim();
    let agc = compute_agc(rom, current, delta, cfg)?;
    let (agc_mu, agc_j, agc_value) = (agc.eval.mu().to_vec(), agc.j, agc.eval.value);
    let mut at = agc.eval;
    let mut grad = rom.gradient_ncd(&at.point);
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut scaled = false;
    let mut inner_j = Vec::new();
    let exit = loop {
        if foc_measure(at.mu(), &grad, bx) <= cfg.tau_sub {
            break SubproblemExit::Foc;
        }
        if at.q >= cfg.beta2 * delta {
            break SubproblemExit::TrBoundary;
        }
        if inner_j.len() >= cfg.k_sub_max {
            break SubproblemExit::MaxIter;
        }
        let d = match metric {
            Metric::Newton => newton_direction(rom, &at.point, &grad, cfg)?,
            Metric::Bfgs => bfgs_direction(&hinv, at.mu(), &grad, rom, cfg)?,
        };
        let step = match backtrack(rom, &at, &d, delta, cfg) {
            Ok(s) => s,
            Err(Error::LineSearch(_)) => {
                let steepest: Vec<f64> = grad.iter().map(|g| -g).collect();
                if d == steepest {
                    break SubproblemExit::MaxIter;
                }
                hinv.fill_with_identity();
                match backtrack(rom, &at, &steepest, delta, cfg) {
                    Ok(s) => s,
                    Err(Error::LineSearch(_)) => break SubproblemExit::MaxIter,
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        if step.eval.mu() == at.mu() {
            break SubproblemExit::MaxIter;
        }
        let new_grad = rom.gradient_ncd(&step.eval.point);
        if metric == Metric::Bfgs {
            let s = DVector::from_iterator(p, step.eval.mu().iter().zip(at.mu()).map(|(a, b)| a - b));
            let y = DVector::from_iterator(p, new_grad.iter().zip(&grad).map(|(a, b)| a - b));
            bfgs_update(&mut hinv, &s, &y, &mut scaled);
        }
        inner_j.push(step.j);
        at = step.eval;
        grad = new_grad;
    };
    Ok(SubproblemResult {
        mu_next: at.mu().to_vec(),
        exit,
        inner_iters: inner_j.len(),
        agc: agc_mu,
        agc_j,
        agc_value,
        next: at,
        inner_j,
    })
}

fn bfgs_direction(hinv: &DMatrix<f64>, mu: &[f64], grad: &[f64], rom: &RomModel, cfg: &TrConfig) -> Result<Vec<f64>> {
    let p = grad.len();
    let active = eps_active_set(mu, &rom.problem().bx, cfg.eps_active)?;
    let free: Vec<usize> = (0..p).filter(|i| !active.contains(i)).collect();
    let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
    for &i in &free {
        d[i] = -free.iter().map(|&l| hinv[(i, l)] * grad[l]).sum::<f64>();
    }
    if dot(&d, grad) >= 0.0 {
        return Ok(grad.iter().map(|g| -g).collect());
    }
    Ok(d)
}

/// Inverse update; the first successful pair rescales the identity by sᵀy/yᵀy.
fn bfgs_update(hinv: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, scaled: &mut bool) {
    let sy = s.dot(y);
    if !(sy > 1e-12 * s.norm() * y.norm()) {
        hinv.fill_with_identity();
        *scaled = false;
        return;
    }
    if !*scaled {
        *hinv *= sy / y.dot(y);
        *scaled = true;
    }
    let r = 1.0 / sy;
    let p = s.len();
    let left = DMatrix::<f64>::identity(p, p) - s * y.transpose() * r;
    *hinv = &left * &*hinv * left.transpose() + s * s.transpose() * r;
}
