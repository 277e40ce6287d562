//! Parameter box, separable forms and the problem container.
//!
//! A [`ParametricProblem`] describes
//!
//! ```text
//! J(u, μ) = Θ(μ) + j_μ(u) + k_μ(u, u)   subject to   a_μ(u, v) = l_μ(v)  ∀v,
//! ```
//!
//! with every form written as Σ_c θ_c(μ) · component_c. Components are indices
//! into an assembled store (see [`ComponentStore`]); this module never sees a mesh.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default ε for the ε-active set.
pub const EPS_ACTIVE: f64 = 1e-8;

/// Picks one form's slot out of a [`ComponentWeights`].
type WeightsOf = fn(&ComponentWeights) -> &[f64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len(lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Argument(format!(
                "parameter {i}: lower bound {} exceeds upper bound {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(m, (lo, hi))| lo <= m && m <= hi)
    }

    /// Maps unit-cube coordinates t ∈ [0,1]^P into the box.
    pub fn from_unit(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect()
    }

    /// Clamp without the length check (callers own the invariant).
    pub fn clamp(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&m, (&lo, &hi))| {
                if m <= lo {
                    lo
                } else if m >= hi {
                    hi
                } else {
                    m
                }
            })
            .collect()
    }
}

/// Component-wise projection P onto the box.
pub fn project_onto_box(mu: &[f64], bx: &ParameterBox) -> Result<Vec<f64>> {
    check_len(bx.dim(), mu.len())?;
    Ok(bx.clamp(mu))
}

/// Indices within `eps` of a bound, in increasing order.
pub fn eps_active_set(mu: &[f64], bx: &ParameterBox, eps: f64) -> Result<Vec<usize>> {
    check_len(bx.dim(), mu.len())?;
    if !(eps >= 0.0) {
        return Err(Error::Argument(format!("eps must be nonnegative, got {eps}")));
    }
    Ok((0..mu.len())
        .filter(|&i| bx.upper[i] - mu[i] <= eps || mu[i] - bx.lower[i] <= eps)
        .collect())
}

/// g(μ) = ‖μ − P(μ − ∇J(μ))‖₂, zero exactly at first-order critical points.
pub fn foc_measure(mu: &[f64], grad: &[f64], bx: &ParameterBox) -> f64 {
    let shifted: Vec<f64> = mu.iter().zip(grad).map(|(m, g)| m - g).collect();
    let p = bx.clamp(&shifted);
    mu.iter()
        .zip(&p)
        .map(|(m, q)| (m - q) * (m - q))
        .sum::<f64>()
        .sqrt()
}

/// Parameter functional with analytic first and second derivatives.
pub trait ThetaFn: Send + Sync + std::fmt::Debug {
    fn eval(&self, mu: &[f64]) -> f64;
    fn grad(&self, mu: &[f64]) -> Vec<f64>;
    fn hess(&self, mu: &[f64]) -> Vec<Vec<f64>>;
}

/// The coefficient families in use. Custom C² functionals go through [`ThetaFn`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Theta {
    Constant { value: f64 },
    /// intercept + Σ slope_i μ_i over the listed (index, slope) pairs.
    Affine { intercept: f64, slopes: Vec<(usize, f64)> },
    /// offset + ½ Σ w_i (μ_i − target_i)².
    Tikhonov { weights: Vec<f64>, target: Vec<f64>, offset: f64 },
    /// scale · exp(rate · μ_index); strictly positive, handy for non-affine checks.
    Exponential { scale: f64, rate: f64, index: usize },
    #[serde(skip)]
    Custom(std::sync::Arc<dyn ThetaFn>),
}

impl Theta {
    pub fn constant(value: f64) -> Self {
        Theta::Constant { value }
    }

    /// θ(μ) = μ_index.
    pub fn coordinate(index: usize) -> Self {
        Theta::Affine { intercept: 0.0, slopes: vec![(index, 1.0)] }
    }

    pub fn affine(intercept: f64, slopes: Vec<(usize, f64)>) -> Self {
        Theta::Affine { intercept, slopes }
    }

    /// True when the coefficient does not depend on μ.
    pub fn is_constant(&self) -> bool {
        match self {
            Theta::Constant { .. } => true,
            Theta::Affine { slopes, .. } => slopes.iter().all(|&(_, s)| s == 0.0),
            Theta::Tikhonov { weights, .. } => weights.iter().all(|&w| w == 0.0),
            Theta::Exponential { scale, rate, .. } => *scale == 0.0 || *rate == 0.0,
            Theta::Custom(_) => false,
        }
    }

    /// True when every second partial vanishes identically.
    pub fn is_affine(&self) -> bool {
        match self {
            Theta::Constant { .. } | Theta::Affine { .. } => true,
            _ => self.is_constant(),
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        match self {
            Theta::Constant { .. } | Theta::Custom(_) => None,
            Theta::Affine { slopes, .. } => slopes.iter().map(|&(i, _)| i).max(),
            Theta::Tikhonov { weights, .. } => weights.len().checked_sub(1),
            Theta::Exponential { index, .. } => Some(*index),
        }
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        match self {
            Theta::Constant { value } => *value,
            Theta::Affine { intercept, slopes } => {
                intercept + slopes.iter().map(|&(i, s)| s * mu[i]).sum::<f64>()
            }
            Theta::Tikhonov { weights, target, offset } => {
                offset
                    + 0.5
                        * weights
                            .iter()
                            .zip(target)
                            .zip(mu)
                            .map(|((w, t), m)| w * (m - t) * (m - t))
                            .sum::<f64>()
            }
            Theta::Exponential { scale, rate, index } => scale * (rate * mu[*index]).exp(),
            Theta::Custom(f) => f.eval(mu),
        }
    }

    pub fn partial(&self, mu: &[f64], i: usize) -> f64 {
        match self {
            Theta::Constant { .. } => 0.0,
            Theta::Affine { slopes, .. } => {
                slopes.iter().filter(|&&(k, _)| k == i).map(|&(_, s)| s).sum()
            }
            Theta::Tikhonov { weights, target, .. } => {
                weights.get(i).map_or(0.0, |w| w * (mu[i] - target[i]))
            }
            Theta::Exponential { scale, rate, index } => {
                if i == *index {
                    scale * rate * (rate * mu[i]).exp()
                } else {
                    0.0
                }
            }
            Theta::Custom(f) => f.grad(mu)[i],
        }
    }

    /// out += scale · ∇θ(μ)
    pub fn add_grad(&self, mu: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self {
            Theta::Constant { .. } => {}
            Theta::Affine { slopes, .. } => {
                for &(i, s) in slopes {
                    out[i] += scale * s;
                }
            }
            Theta::Tikhonov { weights, target, .. } => {
                for (i, w) in weights.iter().enumerate() {
                    out[i] += scale * w * (mu[i] - target[i]);
                }
            }
            Theta::Exponential { index, .. } => out[*index] += scale * self.partial(mu, *index),
            Theta::Custom(f) => {
                for (o, g) in out.iter_mut().zip(f.grad(mu)) {
                    *o += scale * g;
                }
            }
        }
    }

    pub fn grad(&self, mu: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; mu.len()];
        self.add_grad(mu, 1.0, &mut g);
        g
    }

    /// ∇θ(μ)·ν
    pub fn directional(&self, mu: &[f64], nu: &[f64]) -> f64 {
        match self {
            Theta::Constant { .. } => 0.0,
            Theta::Affine { slopes, .. } => slopes.iter().map(|&(i, s)| s * nu[i]).sum(),
            _ => self.grad(mu).iter().zip(nu).map(|(g, v)| g * v).sum(),
        }
    }

    pub fn second_partial(&self, mu: &[f64], i: usize, l: usize) -> f64 {
        match self {
            Theta::Constant { .. } | Theta::Affine { .. } => 0.0,
            Theta::Tikhonov { weights, .. } => {
                if i == l {
                    weights.get(i).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            }
            Theta::Exponential { scale, rate, index } => {
                if i == *index && l == *index {
                    scale * rate * rate * (rate * mu[i]).exp()
                } else {
                    0.0
                }
            }
            Theta::Custom(f) => f.hess(mu)[i][l],
        }
    }

    /// out += scale · ∇²θ(μ) ν
    pub fn add_hess_vec(&self, mu: &[f64], nu: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self {
            Theta::Constant { .. } | Theta::Affine { .. } => {}
            Theta::Tikhonov { weights, .. } => {
                for (i, w) in weights.iter().enumerate() {
                    out[i] += scale * w * nu[i];
                }
            }
            Theta::Exponential { index, .. } => {
                out[*index] += scale * self.second_partial(mu, *index, *index) * nu[*index];
            }
            Theta::Custom(f) => {
                let h = f.hess(mu);
                for (i, row) in h.iter().enumerate() {
                    out[i] += scale * row.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    pub fn hess(&self, mu: &[f64]) -> Vec<Vec<f64>> {
        let p = mu.len();
        (0..p)
            .map(|i| (0..p).map(|l| self.second_partial(mu, i, l)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormKind {
    BilinearA,
    BilinearK,
    LinearL,
    LinearJ,
}

impl FormKind {
    pub fn is_bilinear(self) -> bool {
        matches!(self, FormKind::BilinearA | FormKind::BilinearK)
    }
}

/// Σ_c θ_c(μ) · component_c with components indexing an assembled store.
#[derive(Debug, Clone)]
pub struct SeparableForm {
    kind: FormKind,
    components: Vec<usize>,
    thetas: Vec<Theta>,
}

/// Which coefficient to use in a form evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    Partial(usize),
    Second(usize, usize),
}

impl SeparableForm {
    pub fn new(kind: FormKind, components: Vec<usize>, thetas: Vec<Theta>) -> Result<Self> {
        check_len(components.len(), thetas.len())?;
        if components.is_empty() {
            return Err(Error::Argument(format!("{kind:?} form needs at least one component")));
        }
        Ok(Self { kind, components, thetas })
    }

    pub fn kind(&self) -> FormKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn thetas(&self) -> &[Theta] {
        &self.thetas
    }

    pub fn coefficients(&self, mu: &[f64]) -> Vec<f64> {
        self.thetas.iter().map(|t| t.eval(mu)).collect()
    }

    pub fn coefficients_with(&self, mu: &[f64], d: Deriv) -> Vec<f64> {
        self.thetas
            .iter()
            .map(|t| match d {
                Deriv::Value => t.eval(mu),
                Deriv::Partial(i) => t.partial(mu, i),
                Deriv::Second(i, l) => t.second_partial(mu, i, l),
            })
            .collect()
    }

    /// [∇θ_c(μ)·ν]_c
    pub fn directional_coefficients(&self, mu: &[f64], nu: &[f64]) -> Vec<f64> {
        self.thetas.iter().map(|t| t.directional(mu, nu)).collect()
    }

    pub fn is_parameter_independent(&self) -> bool {
        self.thetas.iter().all(Theta::is_constant)
    }

    pub fn is_affine(&self) -> bool {
        self.thetas.iter().all(Theta::is_affine)
    }
}

/// Read access to assembled components, implemented by the FEM store.
pub trait ComponentStore {
    /// vᵀ A_idx w, or `None` if no such matrix.
    fn bilinear(&self, idx: usize, v: &[f64], w: &[f64]) -> Option<f64>;
    /// f_idx · v, or `None` if no such vector.
    fn linear(&self, idx: usize, v: &[f64]) -> Option<f64>;
}

#[derive(Debug, Clone, Copy)]
pub enum Operands<'a> {
    Bilinear(&'a [f64], &'a [f64]),
    Linear(&'a [f64]),
}

/// Σ_c θ_c(μ)·component_c(operands), with θ_c replaced by a partial if requested.
pub fn form_eval(
    form: &SeparableForm,
    mu: &[f64],
    store: &dyn ComponentStore,
    ops: Operands<'_>,
    d: Deriv,
) -> Result<f64> {
    let coeffs = form.coefficients_with(mu, d);
    let mut total = 0.0;
    for (&c, &idx) in coeffs.iter().zip(&form.components) {
        let val = match (form.kind.is_bilinear(), ops) {
            (true, Operands::Bilinear(v, w)) => store.bilinear(idx, v, w),
            (false, Operands::Linear(v)) => store.linear(idx, v),
            _ => {
                return Err(Error::Argument(format!(
                    "operands do not match the arity of a {:?} form",
                    form.kind
                )))
            }
        }
        .ok_or_else(|| Error::Configuration(format!("missing assembled component {idx}")))?;
        total += c * val;
    }
    Ok(total)
}

pub fn form_value(f: &SeparableForm, mu: &[f64], s: &dyn ComponentStore, ops: Operands<'_>) -> Result<f64> {
    form_eval(f, mu, s, ops, Deriv::Value)
}

pub fn form_dmu(
    f: &SeparableForm,
    mu: &[f64],
    s: &dyn ComponentStore,
    ops: Operands<'_>,
    l: usize,
) -> Result<f64> {
    form_eval(f, mu, s, ops, Deriv::Partial(l))
}

pub fn form_d2mu(
    f: &SeparableForm,
    mu: &[f64],
    s: &dyn ComponentStore,
    ops: Operands<'_>,
    i: usize,
    l: usize,
) -> Result<f64> {
    form_eval(f, mu, s, ops, Deriv::Second(i, l))
}

/// Per-component values of an expression that is linear in the forms.
///
/// Any quantity of the shape `big·Θ(μ) + Σ_c θ^a_c(μ) a[c] + … ` is described by
/// these weights; the FOM and ROM gradients and hessians differ only in how the
/// weights are filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentWeights {
    pub big: f64,
    pub a: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub j: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParametricProblem {
    pub a: SeparableForm,
    pub k: SeparableForm,
    pub l: SeparableForm,
    pub j: SeparableForm,
    pub theta_big: Theta,
    pub bx: ParameterBox,
    pub mu_check: Vec<f64>,
}

impl ParametricProblem {
    pub fn new(
        a: SeparableForm,
        k: SeparableForm,
        l: SeparableForm,
        j: SeparableForm,
        theta_big: Theta,
        bx: ParameterBox,
        mu_check: Vec<f64>,
    ) -> Result<Self> {
        let expect = [
            (&a, FormKind::BilinearA),
            (&k, FormKind::BilinearK),
            (&l, FormKind::LinearL),
            (&j, FormKind::LinearJ),
        ];
        for (f, kind) in expect {
            if f.kind != kind {
                return Err(Error::Configuration(format!(
                    "expected a {kind:?} form, got {:?}",
                    f.kind
                )));
            }
        }
        if !bx.contains(&mu_check) {
            return Err(Error::Configuration("reference parameter lies outside the box".into()));
        }
        let p = bx.dim();
        let all = [&a, &k, &l, &j]
            .into_iter()
            .flat_map(|f| f.thetas.iter())
            .chain(std::iter::once(&theta_big));
        for t in all {
            if let Some(i) = t.max_index() {
                if i >= p {
                    return Err(Error::Configuration(format!(
                        "coefficient refers to parameter {i}, but only {p} exist"
                    )));
                }
            }
        }
        if let Some(c) = a.coefficients(&mu_check).iter().position(|&t| !(t > 0.0)) {
            return Err(Error::Configuration(format!(
                "a-coefficient {c} is not positive at the reference parameter"
            )));
        }
        Ok(Self { a, k, l, j, theta_big, bx, mu_check })
    }

    pub fn dim(&self) -> usize {
        self.bx.dim()
    }

    pub fn zero_weights(&self) -> ComponentWeights {
        ComponentWeights {
            big: 0.0,
            a: vec![0.0; self.a.len()],
            k: vec![0.0; self.k.len()],
            l: vec![0.0; self.l.len()],
            j: vec![0.0; self.j.len()],
        }
    }

    fn forms(&self) -> [(&SeparableForm, WeightsOf); 4] {
        [
            (&self.a, |w| &w.a),
            (&self.k, |w| &w.k),
            (&self.l, |w| &w.l),
            (&self.j, |w| &w.j),
        ]
    }

    /// big·Θ(μ) + Σ θ_c(μ) w_c over all forms.
    pub fn contract(&self, w: &ComponentWeights, mu: &[f64]) -> f64 {
        let mut v = if w.big != 0.0 { w.big * self.theta_big.eval(mu) } else { 0.0 };
        for (f, sel) in self.forms() {
            for (t, &x) in f.thetas.iter().zip(sel(w)) {
                if x != 0.0 {
                    v += t.eval(mu) * x;
                }
            }
        }
        v
    }

    /// big·∇Θ(μ) + Σ ∇θ_c(μ) w_c
    pub fn contract_grad(&self, w: &ComponentWeights, mu: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.theta_big.add_grad(mu, w.big, &mut g);
        for (f, sel) in self.forms() {
            for (t, &x) in f.thetas.iter().zip(sel(w)) {
                t.add_grad(mu, x, &mut g);
            }
        }
        g
    }

    /// big·∇²Θ(μ)ν + Σ ∇²θ_c(μ)ν w_c
    pub fn contract_hess_vec(&self, w: &ComponentWeights, mu: &[f64], nu: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim()];
        self.theta_big.add_hess_vec(mu, nu, w.big, &mut h);
        for (f, sel) in self.forms() {
            for (t, &x) in f.thetas.iter().zip(sel(w)) {
                t.add_hess_vec(mu, nu, x, &mut h);
            }
        }
        h
    }

    /// True when no PDE coefficient depends on μ (only Θ may).
    pub fn pde_parameter_independent(&self) -> bool {
        [&self.a, &self.k, &self.l, &self.j]
            .iter()
            .all(|f| f.is_parameter_independent())
    }
}
