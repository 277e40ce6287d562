//! Reduced basis model with separate primal and dual spaces.
//!
//! Every FOM matrix and vector is projected once per basis vector, so each
//! online quantity below (solutions, Ĵ_r, ∇Ĵ_r, Ĥ_r·ν and residual norms) costs
//! only dense work in the reduced dimensions. Because primal and dual spaces
//! differ, the reduced functional carries the residual correction
//! Ĵ_r(μ) = J(u_r, μ) + r^pr(u_r)[p_r], and its exact derivatives need the
//! auxiliary solutions z_r ∈ V_r^du and w_r ∈ V_r^pr.

pub mod residual;
pub mod space;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::EstimatorBundle;
use crate::fom::{FomPoint, FomSystem};
use crate::linalg::{dense_solve, dot};
use crate::model::{foc_measure, ComponentWeights, ParametricProblem, SeparableForm};
use crate::par::Execution;
pub use residual::ResidualReductor;
pub use space::{extend_basis, RbSpace, SpaceKind, DEFAULT_TOL_REL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentStrategy {
    /// u_h and p_h at μ.
    Lagrangian,
    /// Lagrangian plus d_η u_h and d_η p_h for η = ∇Ĵ_r(μ).
    TaylorDirectional,
}

/// Primal residual terms: l-components and a-components applied to primal basis vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimalTerm {
    L(usize),
    A { comp: usize, basis: usize },
}

/// Dual residual terms: j, k applied to primal basis vectors, a applied to dual basis vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualTerm {
    J(usize),
    K { comp: usize, basis: usize },
    A { comp: usize, basis: usize },
}

/// Component projections: `app[c] = ΦᵀA_cΦ`, `adp[c] = ΨᵀA_cΦ`, and so on.
#[derive(Debug, Clone, Default)]
struct Blocks {
    app: Vec<DMatrix<f64>>,
    add: Vec<DMatrix<f64>>,
    adp: Vec<DMatrix<f64>>,
    kpp: Vec<DMatrix<f64>>,
    kdp: Vec<DMatrix<f64>>,
    lp: Vec<DVector<f64>>,
    ld: Vec<DVector<f64>>,
    jp: Vec<DVector<f64>>,
    jd: Vec<DVector<f64>>,
}

/// Reduced operators for one set of coefficients (values or derivatives).
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub app: DMatrix<f64>,
    pub add: DMatrix<f64>,
    pub adp: DMatrix<f64>,
    pub kpp: DMatrix<f64>,
    pub kdp: DMatrix<f64>,
    pub lp: DVector<f64>,
    pub ld: DVector<f64>,
    pub jp: DVector<f64>,
    pub jd: DVector<f64>,
}

/// Reduced primal, dual and auxiliary coefficients at one parameter.
#[derive(Debug, Clone)]
pub struct RomPoint {
    pub mu: Vec<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
}

/// Directional derivatives of the four reduced states.
#[derive(Debug, Clone)]
pub struct RomSensitivity {
    pub nu: Vec<f64>,
    pub du: DVector<f64>,
    pub dp: DVector<f64>,
    pub dz: DVector<f64>,
    pub dw: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducedSensitivityKind {
    Primal,
    Dual,
    Z,
    W,
}

/// Previously computed sensitivities feeding the later solves.
#[derive(Debug, Clone, Default)]
pub struct PartialSensitivity {
    pub du: Option<DVector<f64>>,
    pub dp: Option<DVector<f64>>,
    pub dz: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichReport {
    pub added_primal: usize,
    pub added_dual: usize,
    /// The directional step was requested but η vanished.
    pub fell_back: bool,
}

#[derive(Debug, Clone)]
pub struct RomModel {
    problem: Arc<ParametricProblem>,
    bundle: Arc<EstimatorBundle>,
    num_dofs: usize,
    exec: Execution,
    tol_rel: f64,
    primal: RbSpace,
    dual: RbSpace,
    /// `a_phi[b][c] = A_c φ_b`, reused for blocks and residual terms.
    a_phi: Vec<Vec<Arc<Vec<f64>>>>,
    k_phi: Vec<Vec<Arc<Vec<f64>>>>,
    a_psi: Vec<Vec<Arc<Vec<f64>>>>,
    l_vecs: Vec<Arc<Vec<f64>>>,
    j_vecs: Vec<Arc<Vec<f64>>>,
    blocks: Blocks,
    res_pr: ResidualReductor<PrimalTerm>,
    res_du: ResidualReductor<DualTerm>,
    enriched_at: Vec<Vec<f64>>,
}

fn combine_mats(mats: &[DMatrix<f64>], coeffs: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    for (m, &c) in mats.iter().zip(coeffs) {
        if c != 0.0 {
            out += m * c;
        }
    }
    out
}

fn combine_vecs(vs: &[DVector<f64>], coeffs: &[f64], len: usize) -> DVector<f64> {
    let mut out = DVector::zeros(len);
    for (v, &c) in vs.iter().zip(coeffs) {
        if c != 0.0 {
            out.axpy(c, v, 1.0);
        }
    }
    out
}

fn quad(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    x.dot(&(m * y))
}

fn check_symmetric(fom: &FomSystem, form: &SeparableForm) -> Result<()> {
    for &c in form.components() {
        let m = fom.matrix(c);
        if !m.is_symmetric(1e-12 * m.max_abs().max(1e-300)) {
            return Err(Error::Configuration(format!("matrix component {c} is not symmetric")));
        }
    }
    Ok(())
}

impl RomModel {
    /// Empty spaces; the residual terms that do not involve a basis are set up here.
    pub fn new(fom: &FomSystem) -> Result<Self> {
        Self::with_bundle(fom, Arc::new(EstimatorBundle::new(fom)?))
    }

    pub fn with_bundle(fom: &FomSystem, bundle: Arc<EstimatorBundle>) -> Result<Self> {
        let pr = fom.problem();
        check_symmetric(fom, &pr.a)?;
        check_symmetric(fom, &pr.k)?;
        let l_vecs: Vec<Arc<Vec<f64>>> = pr.l.components().iter().map(|&c| Arc::new(fom.vector(c).to_vec())).collect();
        let j_vecs: Vec<Arc<Vec<f64>>> = pr.j.components().iter().map(|&c| Arc::new(fom.vector(c).to_vec())).collect();
        let res_pr = ResidualReductor::new()
            .extended(fom, l_vecs.iter().enumerate().map(|(c, v)| (PrimalTerm::L(c), v.clone())).collect());
        let res_du = ResidualReductor::new()
            .extended(fom, j_vecs.iter().enumerate().map(|(c, v)| (DualTerm::J(c), v.clone())).collect());
        let e = || DVector::zeros(0);
        let z = || DMatrix::zeros(0, 0);
        let blocks = Blocks {
            app: vec![z(); pr.a.len()],
            add: vec![z(); pr.a.len()],
            adp: vec![z(); pr.a.len()],
            kpp: vec![z(); pr.k.len()],
            kdp: vec![z(); pr.k.len()],
            lp: vec![e(); pr.l.len()],
            ld: vec![e(); pr.l.len()],
            jp: vec![e(); pr.j.len()],
            jd: vec![e(); pr.j.len()],
        };
        Ok(Self {
            problem: Arc::new(pr.clone()),
            bundle,
            num_dofs: fom.num_dofs(),
            exec: fom.execution(),
            tol_rel: DEFAULT_TOL_REL,
            primal: RbSpace::new(SpaceKind::Primal),
            dual: RbSpace::new(SpaceKind::Dual),
            a_phi: vec![],
            k_phi: vec![],
            a_psi: vec![],
            l_vecs,
            j_vecs,
            blocks,
            res_pr,
            res_du,
            enriched_at: vec![],
        })
    }

    /// Empty model enriched with the Lagrangian snapshots at `mu0`.
    pub fn initialize(fom: &FomSystem, mu0: &[f64]) -> Result<Self> {
        let (rom, _) = Self::new(fom)?.enrich(fom, mu0, EnrichmentStrategy::Lagrangian)?;
        Ok(rom)
    }

    pub fn problem(&self) -> &ParametricProblem {
        &self.problem
    }

    pub fn bundle(&self) -> &EstimatorBundle {
        &self.bundle
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn primal(&self) -> &RbSpace {
        &self.primal
    }

    pub fn dual(&self) -> &RbSpace {
        &self.dual
    }

    /// (dim V_r^pr, dim V_r^du)
    pub fn dims(&self) -> (usize, usize) {
        (self.primal.len(), self.dual.len())
    }

    pub fn enriched_parameters(&self) -> &[Vec<f64>] {
        &self.enriched_at
    }

    pub fn primal_reductor(&self) -> &ResidualReductor<PrimalTerm> {
        &self.res_pr
    }

    pub fn dual_reductor(&self) -> &ResidualReductor<DualTerm> {
        &self.res_du
    }

    pub fn lift_primal(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        self.primal.lift(coeffs.as_slice(), self.num_dofs)
    }

    pub fn lift_dual(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        self.dual.lift(coeffs.as_slice(), self.num_dofs)
    }

    // ---------------------------------------------------------------- extension

    /// The model with both spaces extended; blocks and residual terms grow incrementally.
    pub fn extended(&self, fom: &FomSystem, primal_snaps: &[Vec<f64>], dual_snaps: &[Vec<f64>]) -> Result<(Self, usize, usize)> {
        check_len(self.num_dofs, fom.num_dofs())?;
        let store = fom.store();
        let (primal, np) = extend_basis(&self.primal, primal_snaps, self.tol_rel, store);
        let (dual, nd) = extend_basis(&self.dual, dual_snaps, self.tol_rel, store);
        if np == 0 && nd == 0 {
            return Ok((self.clone(), 0, 0));
        }
        let pr = &*self.problem;
        let exec = self.exec;
        let (n0, m0) = self.dims();
        let (n1, m1) = (primal.len(), dual.len());
        let apply = |vs: &[Arc<Vec<f64>>], form: &SeparableForm| -> Vec<Vec<Arc<Vec<f64>>>> {
            exec.map(vs, |v| form.components().iter().map(|&c| Arc::new(fom.matrix(c).matvec(v))).collect())
        };
        let mut out = self.clone();
        out.a_phi.extend(apply(&primal.vectors()[n0..], &pr.a));
        out.k_phi.extend(apply(&primal.vectors()[n0..], &pr.k));
        out.a_psi.extend(apply(&dual.vectors()[m0..], &pr.a));

        let phi = primal.vectors();
        let psi = dual.vectors();
        let sym_ext = |old: &DMatrix<f64>, basis: &[Arc<Vec<f64>>], applied: &dyn Fn(usize) -> Arc<Vec<f64>>, k0: usize| {
            let k1 = basis.len();
            let mut m = DMatrix::zeros(k1, k1);
            m.view_mut((0, 0), (k0, k0)).copy_from(old);
            for b in k0..k1 {
                let ab = applied(b);
                for bp in 0..=b {
                    let v = dot(&basis[bp], &ab);
                    m[(bp, b)] = v;
                    m[(b, bp)] = v;
                }
            }
            m
        };
        let cross_ext = |old: &DMatrix<f64>, applied_phi: &dyn Fn(usize) -> Arc<Vec<f64>>| {
            let mut m = DMatrix::zeros(m1, n1);
            m.view_mut((0, 0), (m0, n0)).copy_from(old);
            for b in 0..n1 {
                let ab = applied_phi(b);
                for d in 0..m1 {
                    if b >= n0 || d >= m0 {
                        m[(d, b)] = dot(&psi[d], &ab);
                    }
                }
            }
            m
        };
        let a_blocks: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = exec.map_range(pr.a.len(), |c| {
            let ap = |b: usize| out.a_phi[b][c].clone();
            let ad = |d: usize| out.a_psi[d][c].clone();
            (
                sym_ext(&self.blocks.app[c], phi, &ap, n0),
                sym_ext(&self.blocks.add[c], psi, &ad, m0),
                cross_ext(&self.blocks.adp[c], &ap),
            )
        });
        let k_blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = exec.map_range(pr.k.len(), |c| {
            let kp = |b: usize| out.k_phi[b][c].clone();
            (sym_ext(&self.blocks.kpp[c], phi, &kp, n0), cross_ext(&self.blocks.kdp[c], &kp))
        });
        let vec_ext = |old: &DVector<f64>, basis: &[Arc<Vec<f64>>], f: &[f64]| {
            let k0 = old.len();
            DVector::from_fn(basis.len(), |i, _| if i < k0 { old[i] } else { dot(&basis[i], f) })
        };
        let mut blocks = Blocks::default();
        for (app, add, adp) in a_blocks {
            blocks.app.push(app);
            blocks.add.push(add);
            blocks.adp.push(adp);
        }
        for (kpp, kdp) in k_blocks {
            blocks.kpp.push(kpp);
            blocks.kdp.push(kdp);
        }
        for (c, f) in self.l_vecs.iter().enumerate() {
            blocks.lp.push(vec_ext(&self.blocks.lp[c], phi, f));
            blocks.ld.push(vec_ext(&self.blocks.ld[c], psi, f));
        }
        for (c, f) in self.j_vecs.iter().enumerate() {
            blocks.jp.push(vec_ext(&self.blocks.jp[c], phi, f));
            blocks.jd.push(vec_ext(&self.blocks.jd[c], psi, f));
        }

        let mut new_pr = vec![];
        for b in n0..n1 {
            for c in 0..pr.a.len() {
                new_pr.push((PrimalTerm::A { comp: c, basis: b }, out.a_phi[b][c].clone()));
            }
        }
        let mut new_du = vec![];
        for b in n0..n1 {
            for c in 0..pr.k.len() {
                new_du.push((DualTerm::K { comp: c, basis: b }, out.k_phi[b][c].clone()));
            }
        }
        for d in m0..m1 {
            for c in 0..pr.a.len() {
                new_du.push((DualTerm::A { comp: c, basis: d }, out.a_psi[d][c].clone()));
            }
        }
        out.res_pr = self.res_pr.extended(fom, new_pr);
        out.res_du = self.res_du.extended(fom, new_du);
        out.blocks = blocks;
        out.primal = primal;
        out.dual = dual;
        Ok((out, np, nd))
    }

    /// New model enriched at `mu` (FOM primal and dual solves are counted by `fom`).
    pub fn enrich(&self, fom: &FomSystem, mu: &[f64], strategy: EnrichmentStrategy) -> Result<(Self, EnrichReport)> {
        let point = fom.evaluate(mu)?;
        self.enrich_with(fom, &point, strategy)
    }

    /// As [`RomModel::enrich`], reusing FOM states that are already available.
    pub fn enrich_with(&self, fom: &FomSystem, point: &FomPoint, strategy: EnrichmentStrategy) -> Result<(Self, EnrichReport)> {
        let (mut lag, np, nd) = self.extended(fom, std::slice::from_ref(&point.u), std::slice::from_ref(&point.p))?;
        lag.enriched_at.push(point.mu.clone());
        let mut report = EnrichReport { added_primal: np, added_dual: nd, fell_back: false };
        if strategy == EnrichmentStrategy::Lagrangian {
            return Ok((lag, report));
        }
        let eta = lag.gradient_ncd(&lag.evaluate(&point.mu)?);
        if eta.iter().all(|&x| x == 0.0) {
            log::info!("reduced gradient vanishes at {:?}; Lagrangian enrichment only", point.mu);
            report.fell_back = true;
            return Ok((lag, report));
        }
        let (du, dp) = fom.sensitivities(point, &eta)?;
        let (taylor, np2, nd2) = lag.extended(fom, &[du], &[dp])?;
        report.added_primal += np2;
        report.added_dual += nd2;
        Ok((taylor, report))
    }

    // ---------------------------------------------------------------- operators

    pub fn operators(&self, ca: &[f64], ck: &[f64], cl: &[f64], cj: &[f64]) -> ReducedOperators {
        let (n, m) = self.dims();
        let b = &self.blocks;
        ReducedOperators {
            app: combine_mats(&b.app, ca, n, n),
            add: combine_mats(&b.add, ca, m, m),
            adp: combine_mats(&b.adp, ca, m, n),
            kpp: combine_mats(&b.kpp, ck, n, n),
            kdp: combine_mats(&b.kdp, ck, m, n),
            lp: combine_vecs(&b.lp, cl, n),
            ld: combine_vecs(&b.ld, cl, m),
            jp: combine_vecs(&b.jp, cj, n),
            jd: combine_vecs(&b.jd, cj, m),
        }
    }

    pub fn operators_at(&self, mu: &[f64]) -> ReducedOperators {
        let pr = &self.problem;
        self.operators(&pr.a.coefficients(mu), &pr.k.coefficients(mu), &pr.l.coefficients(mu), &pr.j.coefficients(mu))
    }

    /// Operators built from the directional derivative ∂_μθ(μ)·ν of every coefficient.
    pub fn operators_directional(&self, mu: &[f64], nu: &[f64]) -> ReducedOperators {
        let pr = &self.problem;
        self.operators(
            &pr.a.directional_coefficients(mu, nu),
            &pr.k.directional_coefficients(mu, nu),
            &pr.l.directional_coefficients(mu, nu),
            &pr.j.directional_coefficients(mu, nu),
        )
    }

    // ------------------------------------------------------------------- solves

    pub fn solve_primal(&self, mu: &[f64]) -> Result<DVector<f64>> {
        check_len(self.dim(), mu.len())?;
        let o = self.operators_at(mu);
        dense_solve(&o.app, &o.lp, "reduced primal system")
    }

    /// A_dd p = j_d + 2K_dp u
    pub fn solve_dual(&self, mu: &[f64], u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dims().0, u.len())?;
        let o = self.operators_at(mu);
        dense_solve(&o.add, &(&o.jd + &o.kdp * u * 2.0), "reduced dual system")
    }

    /// a(z, q) = −r^pr(u)[q] on the dual space.
    pub fn solve_z(&self, mu: &[f64], u: &DVector<f64>) -> Result<DVector<f64>> {
        let o = self.operators_at(mu);
        Self::z_from(&o, u)
    }

    /// a(v, w) = r^du(u, p)[v] − 2k(z, v) on the primal space.
    pub fn solve_w(&self, mu: &[f64], u: &DVector<f64>, p: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let o = self.operators_at(mu);
        Self::w_from(&o, u, p, z)
    }

    fn z_from(o: &ReducedOperators, u: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = &o.adp * u - &o.ld;
        dense_solve(&o.add, &rhs, "reduced z system")
    }

    fn w_from(o: &ReducedOperators, u: &DVector<f64>, p: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = &o.jp + &o.kpp * u * 2.0 - o.adp.tr_mul(p) - o.kdp.tr_mul(z) * 2.0;
        dense_solve(&o.app, &rhs, "reduced w system")
    }

    /// All four reduced states at `mu`.
    pub fn evaluate(&self, mu: &[f64]) -> Result<RomPoint> {
        check_len(self.dim(), mu.len())?;
        let o = self.operators_at(mu);
        let u = dense_solve(&o.app, &o.lp, "reduced primal system")?;
        let p = dense_solve(&o.add, &(&o.jd + &o.kdp * &u * 2.0), "reduced dual system")?;
        let z = Self::z_from(&o, &u)?;
        let w = Self::w_from(&o, &u, &p, &z)?;
        Ok(RomPoint { mu: mu.to_vec(), u, p, z, w })
    }

    // ------------------------------------------------------------- functionals

    fn objective_weights(&self, pt: &RomPoint, corrected: bool) -> ComponentWeights {
        let b = &self.blocks;
        let mut wt = self.problem.zero_weights();
        wt.big = 1.0;
        for (x, v) in wt.j.iter_mut().zip(&b.jp) {
            *x = v.dot(&pt.u);
        }
        for (x, m) in wt.k.iter_mut().zip(&b.kpp) {
            *x = quad(&pt.u, m, &pt.u);
        }
        if corrected {
            for (x, v) in wt.l.iter_mut().zip(&b.ld) {
                *x = v.dot(&pt.p);
            }
            for (x, m) in wt.a.iter_mut().zip(&b.adp) {
                *x = -quad(&pt.p, m, &pt.u);
            }
        }
        wt
    }

    /// Weights of J(u) + r^pr(u)[p + w] − r^du(u, p)[z] with all states frozen.
    fn lagrangian_weights(&self, pt: &RomPoint) -> ComponentWeights {
        let b = &self.blocks;
        let (u, p, z, w) = (&pt.u, &pt.p, &pt.z, &pt.w);
        let mut wt = self.problem.zero_weights();
        wt.big = 1.0;
        for (c, x) in wt.a.iter_mut().enumerate() {
            *x = -(quad(p, &b.adp[c], u) + quad(w, &b.app[c], u)) + quad(z, &b.add[c], p);
        }
        for (c, x) in wt.l.iter_mut().enumerate() {
            *x = b.ld[c].dot(p) + b.lp[c].dot(w);
        }
        for (c, x) in wt.j.iter_mut().enumerate() {
            *x = b.jp[c].dot(u) - b.jd[c].dot(z);
        }
        for (c, x) in wt.k.iter_mut().enumerate() {
            *x = quad(u, &b.kpp[c], u) - 2.0 * quad(z, &b.kdp[c], u);
        }
        wt
    }

    /// Ĵ_r(μ) = J(u_r, μ) + r^pr(u_r)[p_r]
    pub fn objective_ncd(&self, pt: &RomPoint) -> f64 {
        self.problem.contract(&self.objective_weights(pt, true), &pt.mu)
    }

    /// J(u_r, μ) without the residual correction.
    pub fn objective_uncorrected(&self, pt: &RomPoint) -> f64 {
        self.problem.contract(&self.objective_weights(pt, false), &pt.mu)
    }

    /// Exact gradient of [`RomModel::objective_ncd`].
    pub fn gradient_ncd(&self, pt: &RomPoint) -> Vec<f64> {
        self.problem.contract_grad(&self.lagrangian_weights(pt), &pt.mu)
    }

    pub fn foc_measure_red(&self, pt: &RomPoint) -> f64 {
        foc_measure(&pt.mu, &self.gradient_ncd(pt), &self.problem.bx)
    }

    // ------------------------------------------------------------ sensitivities

    /// One directional sensitivity; the order is primal, dual, z, w.
    pub fn solve_reduced_sensitivity(
        &self,
        kind: ReducedSensitivityKind,
        pt: &RomPoint,
        nu: &[f64],
        prior: &PartialSensitivity,
    ) -> Result<DVector<f64>> {
        check_len(self.dim(), nu.len())?;
        let o = self.operators_at(&pt.mu);
        let d = self.operators_directional(&pt.mu, nu);
        let need = |x: &Option<DVector<f64>>, what: &str| {
            x.clone().ok_or_else(|| Error::Ordering(format!("{kind:?} sensitivity needs d_ν {what} first")))
        };
        match kind {
            ReducedSensitivityKind::Primal => Self::du_from(&o, &d, pt),
            ReducedSensitivityKind::Dual => Self::dp_from(&o, &d, pt, &need(&prior.du, "u")?),
            ReducedSensitivityKind::Z => Self::dz_from(&o, &d, pt, &need(&prior.du, "u")?),
            ReducedSensitivityKind::W => {
                let du = need(&prior.du, "u")?;
                let dp = need(&prior.dp, "p")?;
                let dz = need(&prior.dz, "z")?;
                Self::dw_from(&o, &d, pt, &du, &dp, &dz)
            }
        }
    }

    fn du_from(o: &ReducedOperators, d: &ReducedOperators, pt: &RomPoint) -> Result<DVector<f64>> {
        dense_solve(&o.app, &(&d.lp - &d.app * &pt.u), "reduced primal sensitivity")
    }

    fn dp_from(o: &ReducedOperators, d: &ReducedOperators, pt: &RomPoint, du: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = &d.jd + (&d.kdp * &pt.u + &o.kdp * du) * 2.0 - &d.add * &pt.p;
        dense_solve(&o.add, &rhs, "reduced dual sensitivity")
    }

    fn dz_from(o: &ReducedOperators, d: &ReducedOperators, pt: &RomPoint, du: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = -(&d.add * &pt.z) - &d.ld + &d.adp * &pt.u + &o.adp * du;
        dense_solve(&o.add, &rhs, "reduced z sensitivity")
    }

    fn dw_from(
        o: &ReducedOperators,
        d: &ReducedOperators,
        pt: &RomPoint,
        du: &DVector<f64>,
        dp: &DVector<f64>,
        dz: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let rhs = -(&d.app * &pt.w) + &d.jp + (&d.kpp * &pt.u + &o.kpp * du) * 2.0
            - d.adp.tr_mul(&pt.p)
            - o.adp.tr_mul(dp)
            - (d.kdp.tr_mul(&pt.z) + o.kdp.tr_mul(dz)) * 2.0;
        dense_solve(&o.app, &rhs, "reduced w sensitivity")
    }

    pub fn sensitivities(&self, pt: &RomPoint, nu: &[f64]) -> Result<RomSensitivity> {
        check_len(self.dim(), nu.len())?;
        let o = self.operators_at(&pt.mu);
        let d = self.operators_directional(&pt.mu, nu);
        let du = Self::du_from(&o, &d, pt)?;
        let dp = Self::dp_from(&o, &d, pt, &du)?;
        let dz = Self::dz_from(&o, &d, pt, &du)?;
        let dw = Self::dw_from(&o, &d, pt, &du, &dp, &dz)?;
        Ok(RomSensitivity { nu: nu.to_vec(), du, dp, dz, dw })
    }

    /// Exact hessian of Ĵ_r applied to ν (four reduced sensitivity solves).
    pub fn hessvec_ncd(&self, pt: &RomPoint, nu: &[f64]) -> Result<Vec<f64>> {
        let s = self.sensitivities(pt, nu)?;
        Ok(self.hessvec_from(pt, &s))
    }

    pub fn hessvec_from(&self, pt: &RomPoint, s: &RomSensitivity) -> Vec<f64> {
        let b = &self.blocks;
        let (u, p, z, w) = (&pt.u, &pt.p, &pt.z, &pt.w);
        let (du, dp, dz, dw) = (&s.du, &s.dp, &s.dz, &s.dw);
        let mut e = self.problem.zero_weights();
        for (c, x) in e.a.iter_mut().enumerate() {
            *x = -(quad(dp, &b.adp[c], u) + quad(p, &b.adp[c], du) + quad(dw, &b.app[c], u) + quad(w, &b.app[c], du))
                + quad(dz, &b.add[c], p)
                + quad(z, &b.add[c], dp);
        }
        for (c, x) in e.l.iter_mut().enumerate() {
            *x = b.ld[c].dot(dp) + b.lp[c].dot(dw);
        }
        for (c, x) in e.j.iter_mut().enumerate() {
            *x = b.jp[c].dot(du) - b.jd[c].dot(dz);
        }
        for (c, x) in e.k.iter_mut().enumerate() {
            *x = 2.0 * quad(u, &b.kpp[c], du) - 2.0 * (quad(dz, &b.kdp[c], u) + quad(z, &b.kdp[c], du));
        }
        let mut h = self.problem.contract_grad(&e, &pt.mu);
        let second = self.problem.contract_hess_vec(&self.lagrangian_weights(pt), &pt.mu, &s.nu);
        for (hi, si) in h.iter_mut().zip(second) {
            *hi += si;
        }
        h
    }

    /// Symmetrized P × P reduced hessian.
    pub fn full_hessian(&self, pt: &RomPoint) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut h = DMatrix::zeros(p, p);
        for l in 0..p {
            let mut e = vec![0.0; p];
            e[l] = 1.0;
            for (i, v) in self.hessvec_ncd(pt, &e)?.into_iter().enumerate() {
                h[(i, l)] = v;
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    // --------------------------------------------------------- residual norms

    /// Coefficients of r^pr = Σ θ^l l_c − Σ_terms Σ θ^a_c x_b A_cφ_b.
    fn primal_alpha(&self, cl: &[f64], terms: &[(&[f64], &DVector<f64>)]) -> Vec<f64> {
        self.res_pr
            .tags()
            .iter()
            .map(|t| match *t {
                PrimalTerm::L(c) => cl[c],
                PrimalTerm::A { comp, basis } => -terms.iter().map(|(ca, x)| ca[comp] * x[basis]).sum::<f64>(),
            })
            .collect()
    }

    fn dual_alpha(&self, cj: &[f64], k_terms: &[(&[f64], &DVector<f64>)], a_terms: &[(&[f64], &DVector<f64>)]) -> Vec<f64> {
        self.res_du
            .tags()
            .iter()
            .map(|t| match *t {
                DualTerm::J(c) => cj[c],
                DualTerm::K { comp, basis } => 2.0 * k_terms.iter().map(|(ck, x)| ck[comp] * x[basis]).sum::<f64>(),
                DualTerm::A { comp, basis } => -a_terms.iter().map(|(ca, y)| ca[comp] * y[basis]).sum::<f64>(),
            })
            .collect()
    }

    pub fn primal_residual_coefficients(&self, mu: &[f64], u: &DVector<f64>) -> Vec<f64> {
        let pr = &self.problem;
        self.primal_alpha(&pr.l.coefficients(mu), &[(&pr.a.coefficients(mu), u)])
    }

    pub fn dual_residual_coefficients(&self, mu: &[f64], u: &DVector<f64>, p: &DVector<f64>) -> Vec<f64> {
        let pr = &self.problem;
        self.dual_alpha(&pr.j.coefficients(mu), &[(&pr.k.coefficients(mu), u)], &[(&pr.a.coefficients(mu), p)])
    }

    /// Residual of the primal sensitivity equation in direction ν at reduced (u, d_ν u).
    pub fn primal_sensitivity_residual_coefficients(&self, mu: &[f64], nu: &[f64], u: &DVector<f64>, du: &DVector<f64>) -> Vec<f64> {
        let pr = &self.problem;
        let (ca, dca) = (pr.a.coefficients(mu), pr.a.directional_coefficients(mu, nu));
        self.primal_alpha(&pr.l.directional_coefficients(mu, nu), &[(&dca, u), (&ca, du)])
    }

    /// Residual of the dual sensitivity equation in direction ν at reduced (u, p, d_ν u, d_ν p).
    pub fn dual_sensitivity_residual_coefficients(
        &self,
        mu: &[f64],
        nu: &[f64],
        u: &DVector<f64>,
        p: &DVector<f64>,
        du: &DVector<f64>,
        dp: &DVector<f64>,
    ) -> Vec<f64> {
        let pr = &self.problem;
        let (ca, dca) = (pr.a.coefficients(mu), pr.a.directional_coefficients(mu, nu));
        let (ck, dck) = (pr.k.coefficients(mu), pr.k.directional_coefficients(mu, nu));
        self.dual_alpha(&pr.j.directional_coefficients(mu, nu), &[(&dck, u), (&ck, du)], &[(&dca, p), (&ca, dp)])
    }

    /// ‖r^pr(u_r)‖_{V'}
    pub fn primal_residual_norm(&self, mu: &[f64], u: &DVector<f64>) -> f64 {
        self.res_pr.norm(&self.primal_residual_coefficients(mu, u))
    }

    /// ‖r^du(u_r, p_r)‖_{V'}
    pub fn dual_residual_norm(&self, mu: &[f64], u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.res_du.norm(&self.dual_residual_coefficients(mu, u, p))
    }

    pub fn primal_sensitivity_residual_norm(&self, mu: &[f64], nu: &[f64], u: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.res_pr.norm(&self.primal_sensitivity_residual_coefficients(mu, nu, u, du))
    }

    pub fn dual_sensitivity_residual_norm(
        &self,
        mu: &[f64],
        nu: &[f64],
        u: &DVector<f64>,
        p: &DVector<f64>,
        du: &DVector<f64>,
        dp: &DVector<f64>,
    ) -> f64 {
        self.res_du.norm(&self.dual_sensitivity_residual_coefficients(mu, nu, u, p, du, dp))
    }
}
