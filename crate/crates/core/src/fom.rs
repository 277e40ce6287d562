//! Full-order model: primal, dual and sensitivity solves, Ĵ_h and its derivatives.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::AssembledStore;
use crate::linalg::{axpy, dot, sym_min_eigenvalue, BandCholesky, CsrMatrix};
use crate::model::{eps_active_set, foc_measure, ComponentWeights, ParametricProblem, SeparableForm};
use crate::par::Execution;

/// Tallies of linear solves. `pde_solves` excludes Riesz solves with K.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub primal: usize,
    pub dual: usize,
    pub sensitivity: usize,
    pub riesz: usize,
    pub factorizations: usize,
}

impl SolveCounts {
    pub fn pde_solves(&self) -> usize {
        self.primal + self.dual + self.sensitivity
    }

    pub fn since(&self, earlier: &SolveCounts) -> SolveCounts {
        SolveCounts {
            primal: self.primal - earlier.primal,
            dual: self.dual - earlier.dual,
            sensitivity: self.sensitivity - earlier.sensitivity,
            riesz: self.riesz - earlier.riesz,
            factorizations: self.factorizations - earlier.factorizations,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    primal: AtomicUsize,
    dual: AtomicUsize,
    sensitivity: AtomicUsize,
    riesz: AtomicUsize,
    factorizations: AtomicUsize,
}

type FactorCell = Arc<OnceLock<Result<Arc<BandCholesky>>>>;

/// LRU map from θ^a fingerprints to factorizations; each key is factorized at most once.
#[derive(Debug)]
struct SolverCache {
    capacity: usize,
    inner: Mutex<(HashMap<String, FactorCell>, VecDeque<String>)>,
}

impl SolverCache {
    fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), inner: Mutex::new((HashMap::new(), VecDeque::new())) }
    }

    fn cell(&self, key: String) -> FactorCell {
        let mut guard = self.inner.lock().expect("solver cache poisoned");
        let (map, order) = &mut *guard;
        if let Some(c) = map.get(&key) {
            let c = c.clone();
            if let Some(pos) = order.iter().position(|k| *k == key) {
                order.remove(pos);
            }
            order.push_back(key);
            return c;
        }
        let c: FactorCell = Arc::new(OnceLock::new());
        map.insert(key.clone(), c.clone());
        order.push_back(key);
        while order.len() > self.capacity {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        c
    }

    fn clear(&self) {
        let mut guard = self.inner.lock().expect("solver cache poisoned");
        guard.0.clear();
        guard.1.clear();
    }
}

fn fingerprint(coeffs: &[f64]) -> String {
    coeffs.iter().map(|c| format!("{:016x}", c.to_bits())).collect::<Vec<_>>().join(",")
}

/// Primal and dual FOM states at one parameter.
#[derive(Debug, Clone)]
pub struct FomPoint {
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityKind {
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderCheck {
    pub passed: bool,
    pub lambda_min_inactive: f64,
    pub inactive: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Debug)]
pub struct FomSystem {
    problem: ParametricProblem,
    store: AssembledStore,
    cache: SolverCache,
    counters: Counters,
    exec: Execution,
}

impl FomSystem {
    pub fn new(problem: ParametricProblem, store: AssembledStore) -> Result<Self> {
        let forms: [(&SeparableForm, bool); 4] =
            [(&problem.a, true), (&problem.k, true), (&problem.l, false), (&problem.j, false)];
        for (f, bilinear) in forms {
            let avail = if bilinear { store.matrices.len() } else { store.vectors.len() };
            if let Some(&c) = f.components().iter().find(|&&c| c >= avail) {
                return Err(Error::Configuration(format!(
                    "{:?} form refers to component {c}, but only {avail} are assembled",
                    f.kind()
                )));
            }
        }
        Ok(Self {
            problem,
            store,
            cache: SolverCache::new(3),
            counters: Counters::default(),
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache = SolverCache::new(capacity);
        self
    }

    /// Drops every cached factorization, e.g. to time independent runs fairly.
    pub fn clear_cache(&self) {
        self.cache.clear();
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn problem(&self) -> &ParametricProblem {
        &self.problem
    }

    pub fn store(&self) -> &AssembledStore {
        &self.store
    }

    pub fn num_dofs(&self) -> usize {
        self.store.num_dofs()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn counts(&self) -> SolveCounts {
        let c = &self.counters;
        SolveCounts {
            primal: c.primal.load(Ordering::Relaxed),
            dual: c.dual.load(Ordering::Relaxed),
            sensitivity: c.sensitivity.load(Ordering::Relaxed),
            riesz: c.riesz.load(Ordering::Relaxed),
            factorizations: c.factorizations.load(Ordering::Relaxed),
        }
    }

    pub fn matrix(&self, idx: usize) -> &CsrMatrix {
        &self.store.matrices[idx]
    }

    pub fn vector(&self, idx: usize) -> &[f64] {
        &self.store.vectors[idx]
    }

    /// Σ coeffs_c A_c over the components of a bilinear form.
    pub fn combine_matrices(&self, form: &SeparableForm, coeffs: &[f64]) -> Result<CsrMatrix> {
        let mats: Vec<&CsrMatrix> = form.components().iter().map(|&c| self.matrix(c)).collect();
        CsrMatrix::linear_combination(coeffs, &mats)
    }

    /// Σ coeffs_c f_c over the components of a linear form.
    pub fn combine_vectors(&self, form: &SeparableForm, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        for (&c, &idx) in coeffs.iter().zip(form.components()) {
            if c != 0.0 {
                axpy(c, self.vector(idx), &mut out);
            }
        }
        out
    }

    /// out += Σ coeffs_c A_c x
    fn add_form_apply(&self, form: &SeparableForm, coeffs: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        let mut tmp = vec![0.0; x.len()];
        for (&c, &idx) in coeffs.iter().zip(form.components()) {
            if c != 0.0 {
                self.matrix(idx).matvec_into(x, &mut tmp);
                axpy(scale * c, &tmp, out);
            }
        }
    }

    /// A(μ) = Σ θ^a_c(μ) A_c
    pub fn operator(&self, mu: &[f64]) -> Result<CsrMatrix> {
        check_len(self.dim(), mu.len())?;
        self.combine_matrices(&self.problem.a, &self.problem.a.coefficients(mu))
    }

    fn factor(&self, mu: &[f64]) -> Result<Arc<BandCholesky>> {
        check_len(self.dim(), mu.len())?;
        let coeffs = self.problem.a.coefficients(mu);
        let cell = self.cache.cell(fingerprint(&coeffs));
        cell.get_or_init(|| {
            self.counters.factorizations.fetch_add(1, Ordering::Relaxed);
            let bad: Vec<String> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, &t)| !(t > 0.0))
                .map(|(i, t)| format!("theta_a[{i}] = {t:e}"))
                .collect();
            let a = self.combine_matrices(&self.problem.a, &coeffs)?;
            BandCholesky::factor(&a).map(Arc::new).map_err(|e| Error::Model {
                mu: mu.to_vec(),
                reason: if bad.is_empty() {
                    format!("operator not positive definite ({e})")
                } else {
                    format!("operator not positive definite ({e}); non-positive coefficients: {}", bad.join(", "))
                },
            })
        })
        .clone()
    }

    fn solve_with(&self, mu: &[f64], rhs: Vec<f64>, counter: &AtomicUsize) -> Result<Vec<f64>> {
        let f = self.factor(mu)?;
        counter.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs;
        f.solve_in_place(&mut x);
        Ok(x)
    }

    /// K⁻¹ f, counted as a Riesz solve.
    pub fn riesz(&self, functional: &[f64]) -> Vec<f64> {
        self.counters.riesz.fetch_add(1, Ordering::Relaxed);
        self.store.riesz_solve(functional)
    }

    pub fn dual_norm(&self, functional: &[f64]) -> f64 {
        let r = self.riesz(functional);
        dot(&r, functional).max(0.0).sqrt()
    }

    /// The discrete primal equation a_μ(u, v) = l_μ(v).
    pub fn solve_primal(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), mu.len())?;
        let rhs = self.combine_vectors(&self.problem.l, &self.problem.l.coefficients(mu));
        self.solve_with(mu, rhs, &self.counters.primal)
    }

    fn dual_rhs(&self, mu: &[f64], u: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let mut rhs = self.combine_vectors(&pr.j, &pr.j.coefficients(mu));
        self.add_form_apply(&pr.k, &pr.k.coefficients(mu), u, 2.0, &mut rhs);
        rhs
    }

    /// a_μ(q, p) = j_μ(q) + 2 k_μ(q, u).
    pub fn solve_dual(&self, mu: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_dofs(), u.len())?;
        let rhs = self.dual_rhs(mu, u);
        self.solve_with(mu, rhs, &self.counters.dual)
    }

    pub fn evaluate(&self, mu: &[f64]) -> Result<FomPoint> {
        let u = self.solve_primal(mu)?;
        let p = self.solve_dual(mu, &u)?;
        Ok(FomPoint { mu: mu.to_vec(), u, p })
    }

    /// l_μ − A(μ) u as a functional.
    pub fn residual_primal(&self, mu: &[f64], u: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let mut r = self.combine_vectors(&pr.l, &pr.l.coefficients(mu));
        self.add_form_apply(&pr.a, &pr.a.coefficients(mu), u, -1.0, &mut r);
        r
    }

    /// j_μ + 2K(μ)u − A(μ)p as a functional.
    pub fn residual_dual(&self, mu: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        let mut r = self.dual_rhs(mu, u);
        self.add_form_apply(&self.problem.a, &self.problem.a.coefficients(mu), p, -1.0, &mut r);
        r
    }

    /// Right-hand side ∂_μ r^pr(u)[·]·ν of the primal sensitivity equation.
    fn primal_sensitivity_rhs(&self, mu: &[f64], u: &[f64], nu: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let mut rhs = self.combine_vectors(&pr.l, &pr.l.directional_coefficients(mu, nu));
        self.add_form_apply(&pr.a, &pr.a.directional_coefficients(mu, nu), u, -1.0, &mut rhs);
        rhs
    }

    fn dual_sensitivity_rhs(&self, mu: &[f64], u: &[f64], p: &[f64], du: &[f64], nu: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let mut rhs = self.combine_vectors(&pr.j, &pr.j.directional_coefficients(mu, nu));
        self.add_form_apply(&pr.k, &pr.k.directional_coefficients(mu, nu), u, 2.0, &mut rhs);
        self.add_form_apply(&pr.a, &pr.a.directional_coefficients(mu, nu), p, -1.0, &mut rhs);
        self.add_form_apply(&pr.k, &pr.k.coefficients(mu), du, 2.0, &mut rhs);
        rhs
    }

    /// d_ν u or d_ν p at `point`; the dual kind needs the primal sensitivity `du` for the same ν.
    pub fn solve_sensitivity(
        &self,
        kind: SensitivityKind,
        nu: &[f64],
        point: &FomPoint,
        du: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        check_len(self.dim(), nu.len())?;
        let mu = &point.mu;
        let rhs = match kind {
            SensitivityKind::Primal => self.primal_sensitivity_rhs(mu, &point.u, nu),
            SensitivityKind::Dual => {
                let du = du.ok_or_else(|| {
                    Error::Ordering("dual sensitivity requested before the primal sensitivity".into())
                })?;
                self.dual_sensitivity_rhs(mu, &point.u, &point.p, du, nu)
            }
        };
        self.solve_with(mu, rhs, &self.counters.sensitivity)
    }

    /// (d_ν u, d_ν p)
    pub fn sensitivities(&self, point: &FomPoint, nu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let du = self.solve_sensitivity(SensitivityKind::Primal, nu, point, None)?;
        let dp = self.solve_sensitivity(SensitivityKind::Dual, nu, point, Some(&du))?;
        Ok((du, dp))
    }

    /// Ĵ_h(μ) = Θ(μ) + j_μ(u) + k_μ(u, u)
    pub fn objective(&self, mu: &[f64], u: &[f64]) -> f64 {
        let mut w = self.problem.zero_weights();
        self.fill_objective_weights(u, &mut w);
        self.problem.contract(&w, mu)
    }

    fn fill_objective_weights(&self, u: &[f64], w: &mut ComponentWeights) {
        let pr = &self.problem;
        w.big = 1.0;
        for (wc, &idx) in w.j.iter_mut().zip(pr.j.components()) {
            *wc = dot(self.vector(idx), u);
        }
        for (wc, &idx) in w.k.iter_mut().zip(pr.k.components()) {
            *wc = self.matrix(idx).bilinear(u, u);
        }
    }

    /// Component weights of Θ + j(u) + k(u,u) + l(p) − a(u,p).
    fn lagrangian_weights(&self, point: &FomPoint) -> ComponentWeights {
        let pr = &self.problem;
        let mut w = pr.zero_weights();
        self.fill_objective_weights(&point.u, &mut w);
        for (wc, &idx) in w.l.iter_mut().zip(pr.l.components()) {
            *wc = dot(self.vector(idx), &point.p);
        }
        for (wc, &idx) in w.a.iter_mut().zip(pr.a.components()) {
            *wc = -self.matrix(idx).bilinear(&point.u, &point.p);
        }
        w
    }

    /// Adjoint gradient ∇Θ + ∇_μ j(u) + ∇_μ k(u,u) + ∇_μ r^pr(u)[p].
    pub fn gradient(&self, point: &FomPoint) -> Vec<f64> {
        self.problem.contract_grad(&self.lagrangian_weights(point), &point.mu)
    }

    /// Ĥ_h(μ)·ν, two sensitivity solves.
    pub fn hessvec(&self, point: &FomPoint, nu: &[f64]) -> Result<Vec<f64>> {
        let (du, dp) = self.sensitivities(point, nu)?;
        Ok(self.hessvec_from(point, nu, &du, &dp))
    }

    fn hessvec_from(&self, point: &FomPoint, nu: &[f64], du: &[f64], dp: &[f64]) -> Vec<f64> {
        let pr = &self.problem;
        let (u, p) = (&point.u, &point.p);
        let mut e = pr.zero_weights();
        for (wc, &idx) in e.j.iter_mut().zip(pr.j.components()) {
            *wc = dot(self.vector(idx), du);
        }
        for (wc, &idx) in e.k.iter_mut().zip(pr.k.components()) {
            *wc = 2.0 * self.matrix(idx).bilinear(u, du);
        }
        for (wc, &idx) in e.l.iter_mut().zip(pr.l.components()) {
            *wc = dot(self.vector(idx), dp);
        }
        for (wc, &idx) in e.a.iter_mut().zip(pr.a.components()) {
            let m = self.matrix(idx);
            *wc = -(m.bilinear(u, dp) + m.bilinear(du, p));
        }
        let mut h = pr.contract_grad(&e, &point.mu);
        let second = pr.contract_hess_vec(&self.lagrangian_weights(point), &point.mu, nu);
        for (hi, si) in h.iter_mut().zip(second) {
            *hi += si;
        }
        h
    }

    /// Column-wise hessian, symmetrized (2P sensitivity solves).
    pub fn full_hessian(&self, point: &FomPoint) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let cols = self.exec.map_range(p, |l| {
            let mut e = vec![0.0; p];
            e[l] = 1.0;
            self.hessvec(point, &e)
        });
        let mut h = DMatrix::zeros(p, p);
        for (l, col) in cols.into_iter().enumerate() {
            for (i, v) in col?.into_iter().enumerate() {
                h[(i, l)] = v;
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    pub fn foc_measure(&self, mu: &[f64], grad: &[f64]) -> f64 {
        foc_measure(mu, grad, &self.problem.bx)
    }

    /// Smallest eigenvalue of the hessian restricted to the ε-inactive coordinates.
    pub fn second_order_check(&self, point: &FomPoint, eps: f64) -> Result<SecondOrderCheck> {
        let h = self.full_hessian(point)?;
        second_order_from_hessian(&h, &point.mu, &self.problem.bx, eps)
    }
}

pub fn second_order_from_hessian(
    h: &DMatrix<f64>,
    mu: &[f64],
    bx: &crate::model::ParameterBox,
    eps: f64,
) -> Result<SecondOrderCheck> {
    let active = eps_active_set(mu, bx, eps)?;
    let inactive: Vec<usize> = (0..mu.len()).filter(|i| !active.contains(i)).collect();
    if inactive.is_empty() {
        return Ok(SecondOrderCheck {
            passed: true,
            lambda_min_inactive: f64::INFINITY,
            inactive,
            note: Some("every component is active; check holds vacuously".into()),
        });
    }
    let sub = DMatrix::from_fn(inactive.len(), inactive.len(), |a, b| h[(inactive[a], inactive[b])]);
    let lambda = sym_min_eigenvalue(&sub);
    Ok(SecondOrderCheck { passed: lambda > 0.0, lambda_min_inactive: lambda, inactive, note: None })
}
