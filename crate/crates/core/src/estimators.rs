//! Residual-based a posteriori bounds for the reduced model.
//!
//! All norms are the energy norm of K = Σ θ^a_c(μ̌) A_c and its dual. Constants
//! follow the min/max-theta approach: since K is exactly the reference
//! combination of PSD components, min_c θ_c(μ)/θ_c(μ̌) bounds coercivity from
//! below and max_c |∂θ_c(μ)|/θ_c(μ̌) bounds every derivative form from above.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fom::{FomPoint, FomSystem};
use crate::linalg::{dot, sym_min_eigenvalue, spectral_norm};
use crate::model::{Deriv, FormKind, ParametricProblem, SeparableForm, EPS_ACTIVE};
use crate::rom::{RomModel, RomPoint, RomSensitivity};

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-8;

/// Parameter-independent data behind the coercivity and continuity bounds.
#[derive(Debug, Clone)]
pub struct EstimatorBundle {
    problem: ParametricProblem,
    a_ref: Vec<f64>,
    /// λ_max(K_c, K) per k-component.
    k_lambda: Vec<f64>,
    l_norms: Vec<f64>,
    j_norms: Vec<f64>,
}

/// Largest generalized eigenvalue of (M, K) by power iteration on K⁻¹M.
pub fn largest_generalized_eigenvalue(fom: &FomSystem, m: &crate::linalg::CsrMatrix) -> f64 {
    let k = fom.store().product();
    let mut x = vec![1.0; fom.num_dofs()];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mx = m.matvec(&x);
        let kx_norm = dot(&k.matvec(&x), &x);
        if !(kx_norm > 0.0) {
            return 0.0;
        }
        let next = dot(&mx, &x) / kx_norm;
        let mut y = fom.riesz(&mx);
        let scale = dot(&k.matvec(&y), &y).sqrt();
        if !(scale > 0.0) {
            return 0.0;
        }
        y.iter_mut().for_each(|v| *v /= scale);
        x = y;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    // Rayleigh quotient at the final iterate
    let kx = dot(&k.matvec(&x), &x);
    lambda.max(m.bilinear(&x, &x) / kx)
}

impl EstimatorBundle {
    pub fn new(fom: &FomSystem) -> Result<Self> {
        let pr = fom.problem().clone();
        let a_ref = pr.a.coefficients(&pr.mu_check);
        let k_lambda = pr.k.components().iter().map(|&c| largest_generalized_eigenvalue(fom, fom.matrix(c))).collect();
        let l_norms = pr.l.components().iter().map(|&c| fom.dual_norm(fom.vector(c))).collect();
        let j_norms = pr.j.components().iter().map(|&c| fom.dual_norm(fom.vector(c))).collect();
        Ok(Self { problem: pr, a_ref, k_lambda, l_norms, j_norms })
    }

    pub fn k_eigenvalues(&self) -> &[f64] {
        &self.k_lambda
    }

    pub fn l_dual_norms(&self) -> &[f64] {
        &self.l_norms
    }

    pub fn j_dual_norms(&self) -> &[f64] {
        &self.j_norms
    }

    /// min_c θ^a_c(μ)/θ^a_c(μ̌)
    pub fn coercivity_lb(&self, mu: &[f64]) -> Result<f64> {
        check_len(self.problem.dim(), mu.len())?;
        let mut lb = f64::INFINITY;
        for (c, (t, r)) in self.problem.a.coefficients(mu).iter().zip(&self.a_ref).enumerate() {
            if !(*t > 0.0) {
                return Err(Error::EstimatorInapplicable(format!(
                    "a-coefficient {c} is {t:e} at {mu:?}; min-theta needs positive coefficients"
                )));
            }
            lb = lb.min(t / r);
        }
        Ok(lb)
    }

    /// Continuity constant of `which` (or of its μ-derivative selected by `d`).
    pub fn continuity_ub(&self, which: FormKind, d: Deriv, mu: &[f64]) -> Result<f64> {
        check_len(self.problem.dim(), mu.len())?;
        let pr = &self.problem;
        let sum = |f: &SeparableForm, w: &[f64]| f.coefficients_with(mu, d).iter().zip(w).map(|(t, w)| t.abs() * w).sum();
        Ok(match which {
            FormKind::BilinearA => {
                let coeffs = pr.a.coefficients_with(mu, d);
                coeffs.iter().zip(&self.a_ref).map(|(t, r)| t.abs() / r).fold(0.0, f64::max)
            }
            FormKind::BilinearK => sum(&pr.k, &self.k_lambda),
            FormKind::LinearL => sum(&pr.l, &self.l_norms),
            FormKind::LinearJ => sum(&pr.j, &self.j_norms),
        })
    }

    /// γ constants at μ for every first and second partial.
    pub fn constants(&self, mu: &[f64]) -> Result<Constants> {
        let p = self.problem.dim();
        let coercivity = self.coercivity_lb(mu)?;
        let g = |k, d| self.continuity_ub(k, d, mu);
        let first = |k: FormKind| -> Result<Vec<f64>> { (0..p).map(|i| g(k, Deriv::Partial(i))).collect() };
        let (da, dk, dl, dj) =
            (first(FormKind::BilinearA)?, first(FormKind::BilinearK)?, first(FormKind::LinearL)?, first(FormKind::LinearJ)?);
        let second = |k: FormKind| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(p, p);
            for i in 0..p {
                for l in 0..p {
                    m[(i, l)] = g(k, Deriv::Second(i, l))?;
                }
            }
            Ok(m)
        };
        Ok(Constants {
            coercivity,
            a: g(FormKind::BilinearA, Deriv::Value)?,
            k: g(FormKind::BilinearK, Deriv::Value)?,
            da,
            dk,
            dl,
            dj,
            dda: second(FormKind::BilinearA)?,
            ddk: second(FormKind::BilinearK)?,
            ddl: second(FormKind::LinearL)?,
            ddj: second(FormKind::LinearJ)?,
        })
    }
}

/// Coercivity and continuity constants at one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    pub coercivity: f64,
    pub a: f64,
    pub k: f64,
    pub da: Vec<f64>,
    pub dk: Vec<f64>,
    pub dl: Vec<f64>,
    pub dj: Vec<f64>,
    pub dda: DMatrix<f64>,
    pub ddk: DMatrix<f64>,
    pub ddl: DMatrix<f64>,
    pub ddj: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicEstimates {
    pub coercivity: f64,
    pub gamma_k: f64,
    pub residual_primal: f64,
    pub residual_dual: f64,
    pub delta_pr: f64,
    pub delta_du: f64,
    pub delta_j: f64,
}

fn check_point(rom: &RomModel, pt: &RomPoint) -> Result<()> {
    let (n, m) = rom.dims();
    check_len(n, pt.u.len())?;
    check_len(m, pt.p.len())?;
    check_len(rom.dim(), pt.mu.len())
}

/// Δ_pr, Δ_du and Δ_Ĵ at `pt`.
pub fn basic_estimates(rom: &RomModel, pt: &RomPoint) -> Result<BasicEstimates> {
    check_point(rom, pt)?;
    let b = rom.bundle();
    let coercivity = b.coercivity_lb(&pt.mu)?;
    let gamma_k = b.continuity_ub(FormKind::BilinearK, Deriv::Value, &pt.mu)?;
    let rp = rom.primal_residual_norm(&pt.mu, &pt.u);
    let rd = rom.dual_residual_norm(&pt.mu, &pt.u, &pt.p);
    let delta_pr = rp / coercivity;
    Ok(BasicEstimates {
        coercivity,
        gamma_k,
        residual_primal: rp,
        residual_dual: rd,
        delta_pr,
        delta_du: (2.0 * gamma_k * delta_pr + rd) / coercivity,
        delta_j: delta_pr * rd + delta_pr * delta_pr * gamma_k,
    })
}

pub fn delta_primal(rom: &RomModel, pt: &RomPoint) -> Result<f64> {
    Ok(basic_estimates(rom, pt)?.delta_pr)
}

pub fn delta_dual(rom: &RomModel, pt: &RomPoint) -> Result<f64> {
    Ok(basic_estimates(rom, pt)?.delta_du)
}

/// Bound on |Ĵ_h(μ) − Ĵ_r(μ)|.
pub fn delta_objective(rom: &RomModel, pt: &RomPoint) -> Result<f64> {
    Ok(basic_estimates(rom, pt)?.delta_j)
}

/// Ingredients for direction e_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimates {
    pub index: usize,
    pub residual_primal: f64,
    pub residual_dual: f64,
    pub delta_dpr: f64,
    pub delta_ddu: f64,
}

fn unit(p: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[i] = 1.0;
    e
}

fn sensitivity_estimates_with(
    rom: &RomModel,
    pt: &RomPoint,
    s: &RomSensitivity,
    i: usize,
    gamma: &Constants,
    base: &BasicEstimates,
) -> SensitivityEstimates {
    let nu = unit(rom.dim(), i);
    let rp = rom.primal_sensitivity_residual_norm(&pt.mu, &nu, &pt.u, &s.du);
    let rd = rom.dual_sensitivity_residual_norm(&pt.mu, &nu, &pt.u, &pt.p, &s.du, &s.dp);
    let a = gamma.coercivity;
    let delta_dpr = (gamma.da[i] * base.delta_pr + rp) / a;
    let delta_ddu =
        (2.0 * gamma.dk[i] * base.delta_pr + gamma.da[i] * base.delta_du + 2.0 * gamma.k * delta_dpr + rd) / a;
    SensitivityEstimates { index: i, residual_primal: rp, residual_dual: rd, delta_dpr, delta_ddu }
}

/// Δ_{d_{μ_i}pr} and Δ_{d_{μ_i}du}; reduced sensitivities are computed when not given.
pub fn delta_sensitivity(rom: &RomModel, pt: &RomPoint, i: usize, sens: Option<&RomSensitivity>) -> Result<SensitivityEstimates> {
    if i >= rom.dim() {
        return Err(Error::Argument(format!("direction {i} out of range")));
    }
    let base = basic_estimates(rom, pt)?;
    let gamma = rom.bundle().constants(&pt.mu)?;
    let owned;
    let s = match sens {
        Some(s) => s,
        None => {
            owned = rom.sensitivities(pt, &unit(rom.dim(), i))?;
            &owned
        }
    };
    Ok(sensitivity_estimates_with(rom, pt, s, i, &gamma, &base))
}

/// Bounds on the auxiliary solutions and their sensitivity in direction e_l.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryBounds {
    pub z: f64,
    pub w: f64,
    pub dz: f64,
    pub dw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianBound {
    pub total: f64,
    pub entries: DMatrix<f64>,
    pub aux: Vec<AuxiliaryBounds>,
}

/// Per-direction data entering one column l of the hessian bound.
struct Column {
    s: SensitivityEstimates,
    du: f64,
    dp: f64,
    aux: AuxiliaryBounds,
}

/// Entry (i, l) of the hessian bound, term by term.
#[allow(clippy::too_many_arguments)]
fn hessian_entry(i: usize, l: usize, g: &Constants, b: &BasicEstimates, nu: f64, np: f64, c: &Column) -> f64 {
    let (dpr, ddu) = (c.s.delta_dpr, c.s.delta_ddu);
    let (x, dd) = (b.delta_pr, b.delta_du);
    let (da, dk, dl, dj) = (g.da[i], g.dk[i], g.dl[i], g.dj[i]);
    let (dda, ddk, ddl, ddj) = (g.dda[(i, l)], g.ddk[(i, l)], g.ddl[(i, l)], g.ddj[(i, l)]);
    let AuxiliaryBounds { z, w, dz, dw } = c.aux;
    x * (ddj + 2.0 * ddk * nu + dda * np + 2.0 * dk * c.du + da * c.dp)
        + dpr * (dj + 2.0 * dk * nu + da * np)
        + dd * (ddl + dda * nu + da * c.du)
        + ddu * (dl + da * nu)
        + x * x * ddk
        + x * dd * dda
        + x * dpr * 2.0 * dk
        + x * ddu * da
        + dpr * dd * da
        + da * c.du * w
        + dl * dw
        + da * nu * dw
        + 2.0 * dk * z * c.du
        + da * z * c.dp
        + dj * dz
        + 2.0 * dk * dz * nu
        + da * dz * np
        + ddl * w
        + dda * w * nu
        + ddj * z
        + 2.0 * ddk * z * nu
        + dda * z * np
}

/// Bound on ‖Ĥ_h(μ) − Ĥ_r(μ)‖₂ (P reduced sensitivity sets).
pub fn delta_hessian(rom: &RomModel, pt: &RomPoint) -> Result<HessianBound> {
    let p = rom.dim();
    let base = basic_estimates(rom, pt)?;
    let g = rom.bundle().constants(&pt.mu)?;
    let a = g.coercivity;
    let z = base.residual_primal / a;
    let w = (base.residual_dual + 2.0 * g.k * z) / a;
    let mut cols = Vec::with_capacity(p);
    for l in 0..p {
        let s = rom.sensitivities(pt, &unit(p, l))?;
        let est = sensitivity_estimates_with(rom, pt, &s, l, &g, &base);
        let dz = (est.residual_primal + g.da[l] * z) / a;
        let dw = (est.residual_dual + 2.0 * g.k * dz + 2.0 * g.dk[l] * z + g.da[l] * w) / a;
        cols.push(Column { du: s.du.norm(), dp: s.dp.norm(), s: est, aux: AuxiliaryBounds { z, w, dz, dw } });
    }
    let (nu, np) = (pt.u.norm(), pt.p.norm());
    let entries = DMatrix::from_fn(p, p, |i, l| hessian_entry(i, l, &g, &base, nu, np, &cols[l]));
    Ok(HessianBound { total: spectral_norm(&entries), entries, aux: cols.iter().map(|c| c.aux).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub delta_pr: f64,
    pub delta_du: f64,
    pub delta_j: f64,
    pub delta_dpr: Vec<f64>,
    pub delta_ddu: Vec<f64>,
    pub delta_h: Option<f64>,
}

/// Every Prop.-style estimator at `pt`; the hessian bound only on request.
pub fn estimate_report(rom: &RomModel, pt: &RomPoint, with_hessian: bool) -> Result<EstimateReport> {
    let base = basic_estimates(rom, pt)?;
    let g = rom.bundle().constants(&pt.mu)?;
    let mut dpr = vec![];
    let mut ddu = vec![];
    for i in 0..rom.dim() {
        let s = rom.sensitivities(pt, &unit(rom.dim(), i))?;
        let e = sensitivity_estimates_with(rom, pt, &s, i, &g, &base);
        dpr.push(e.delta_dpr);
        ddu.push(e.delta_ddu);
    }
    let delta_h = if with_hessian { Some(delta_hessian(rom, pt)?.total) } else { None };
    Ok(EstimateReport {
        delta_pr: base.delta_pr,
        delta_du: base.delta_du,
        delta_j: base.delta_j,
        delta_dpr: dpr,
        delta_ddu: ddu,
        delta_h,
    })
}

/// Distance bound to a nearby FOM optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBound {
    /// `None` when λ_min ≤ 0.
    pub bound: Option<f64>,
    pub lambda_min: f64,
    pub zeta: Vec<f64>,
    pub gradient: Vec<f64>,
    /// The bound presumes the reduced optimum lies in a ball around the FOM
    /// optimum whose radius cannot be computed.
    pub caveat: String,
}

/// ζ: the FOM gradient with KKT-consistent components at active bounds removed.
pub fn zeta(mu: &[f64], grad: &[f64], bx: &crate::model::ParameterBox) -> Vec<f64> {
    mu.iter()
        .zip(grad)
        .enumerate()
        .map(|(i, (&m, &g))| {
            let tol = EPS_ACTIVE * (1.0 + bx.upper()[i].abs().max(bx.lower()[i].abs()));
            if (m - bx.lower()[i]).abs() <= tol {
                -g.min(0.0)
            } else if (bx.upper()[i] - m).abs() <= tol {
                -g.max(0.0)
            } else {
                -g
            }
        })
        .collect()
}

/// Δ_μ = 2‖ζ‖₂/λ_min with λ_min the smallest eigenvalue of the FOM hessian at `mu_bar`.
pub fn delta_mu(fom: &FomSystem, mu_bar: &[f64]) -> Result<ParameterBound> {
    let point = fom.evaluate(mu_bar)?;
    delta_mu_at(fom, &point)
}

pub fn delta_mu_at(fom: &FomSystem, point: &FomPoint) -> Result<ParameterBound> {
    let grad = fom.gradient(point);
    let h = fom.full_hessian(point)?;
    let lambda_min = sym_min_eigenvalue(&h);
    let zeta = zeta(&point.mu, &grad, &fom.problem().bx);
    let norm = DVector::from_column_slice(&zeta).norm();
    Ok(ParameterBound {
        bound: (lambda_min > 0.0).then(|| 2.0 * norm / lambda_min),
        lambda_min,
        zeta,
        gradient: grad,
        caveat: "valid only if the reduced optimum lies within the local strong-convexity ball of the FOM optimum".into(),
    })
}
