//! Online-efficient dual norms of residuals.
//!
//! A residual is a linear combination Σ α_i f_i of stored functionals. The
//! Riesz representatives K⁻¹f_i are orthonormalized once (offline) into Q, and
//! C_{q,i} = (Q_q, K⁻¹f_i)_K = Q_q·f_i is kept. Then ‖Σ α_i f_i‖_{V'} = ‖Cα‖₂,
//! which costs no FOM work online and does not lose accuracy to the
//! cancellation a Gramian quadratic form suffers near zero residuals.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::fom::FomSystem;
use crate::linalg::{axpy, dot};

/// Representatives whose orthogonal remainder falls below this fraction of
/// their norm add nothing to span(Q).
const DISCARD_REL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ResidualReductor<T> {
    tags: Vec<T>,
    funcs: Vec<Arc<Vec<f64>>>,
    /// Functionals whose representative was not turned into a basis vector;
    /// only these can have nonzero coefficients on later basis vectors.
    discarded: Vec<usize>,
    q: Vec<Arc<Vec<f64>>>,
    coeffs: Arc<DMatrix<f64>>,
}

impl<T: Clone + Send + Sync> ResidualReductor<T> {
    pub fn new() -> Self {
        Self { tags: vec![], funcs: vec![], discarded: vec![], q: vec![], coeffs: Arc::new(DMatrix::zeros(0, 0)) }
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    pub fn tags(&self) -> &[T] {
        &self.tags
    }

    pub fn functional(&self, i: usize) -> &[f64] {
        &self.funcs[i]
    }

    /// Returns an extended copy; `self` is left untouched.
    pub fn extended(&self, fom: &FomSystem, new: Vec<(T, Arc<Vec<f64>>)>) -> Self {
        if new.is_empty() {
            return self.clone();
        }
        let k = fom.store().product();
        let exec = fom.execution();
        let reps: Vec<Vec<f64>> = exec.map(&new, |(_, f)| fom.riesz(f));
        let first_new = self.funcs.len();
        let mut out = self.clone();
        let mut new_q: Vec<Vec<f64>> = Vec::new();
        for (idx, (rep, (tag, f))) in reps.into_iter().zip(new).enumerate() {
            out.tags.push(tag);
            out.funcs.push(f);
            let before = dot(&k.matvec(&rep), &rep).max(0.0).sqrt();
            let mut r = rep;
            for _ in 0..2 {
                let kr = k.matvec(&r);
                let cs: Vec<f64> = self.q.iter().map(|b| dot(b, &kr)).collect();
                let cn: Vec<f64> = new_q.iter().map(|b| dot(b, &kr)).collect();
                for (c, b) in cs.iter().zip(&self.q) {
                    axpy(-c, b, &mut r);
                }
                for (c, b) in cn.iter().zip(&new_q) {
                    axpy(-c, b, &mut r);
                }
            }
            let after = dot(&k.matvec(&r), &r).max(0.0).sqrt();
            if before > 0.0 && after > DISCARD_REL * before {
                r.iter_mut().for_each(|x| *x /= after);
                new_q.push(r);
            } else {
                out.discarded.push(first_new + idx);
            }
        }
        // coefficient matrix: old rows gain the new functionals; new rows see
        // the new functionals and every previously discarded one
        let (old_rank, total) = (self.q.len(), out.funcs.len());
        let new_rows: Vec<Vec<(usize, f64)>> = exec.map(&new_q, |qv| {
            let mut cols: Vec<usize> = self.discarded.clone();
            cols.extend(first_new..total);
            cols.into_iter().map(|i| (i, dot(qv, &out.funcs[i]))).collect()
        });
        let old_rows: Vec<Vec<f64>> =
            exec.map(&self.q, |qv| (first_new..total).map(|i| dot(qv, &out.funcs[i])).collect());
        let mut c = DMatrix::zeros(old_rank + new_q.len(), total);
        c.view_mut((0, 0), (old_rank, first_new)).copy_from(&*self.coeffs);
        for (qi, row) in old_rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                c[(qi, first_new + j)] = v;
            }
        }
        for (qi, row) in new_rows.into_iter().enumerate() {
            for (j, v) in row {
                c[(old_rank + qi, j)] = v;
            }
        }
        out.q.extend(new_q.into_iter().map(Arc::new));
        out.coeffs = Arc::new(c);
        out
    }

    /// ‖Σ α_i f_i‖_{V'}
    pub fn norm(&self, alpha: &[f64]) -> f64 {
        assert_eq!(alpha.len(), self.funcs.len(), "residual coefficient length");
        if self.q.is_empty() {
            return 0.0;
        }
        (&*self.coeffs * DVector::from_column_slice(alpha)).norm()
    }

    /// Σ α_i f_i as a FOM functional, for tests and diagnostics.
    pub fn assemble(&self, alpha: &[f64], num_dofs: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_dofs];
        for (a, f) in alpha.iter().zip(&self.funcs) {
            axpy(*a, f, &mut out);
        }
        out
    }
}

impl<T: Clone + Send + Sync> Default for ResidualReductor<T> {
    fn default() -> Self {
        Self::new()
    }
}
