use std::sync::Arc;

use nalgebra::DMatrix;

use crate::fem::AssembledStore;
use crate::linalg::{axpy, dot};

/// Snapshots whose K-orthogonal remainder is below this fraction of their
/// original K-norm are treated as already contained in the space.
pub const DEFAULT_TOL_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Primal,
    Dual,
}

/// K-orthonormal reduced basis. Columns are shared, so cloning and extension
/// never copy FOM vectors.
#[derive(Debug, Clone)]
pub struct RbSpace {
    kind: SpaceKind,
    basis: Vec<Arc<Vec<f64>>>,
}

impl RbSpace {
    pub fn new(kind: SpaceKind) -> Self {
        Self { kind, basis: Vec::new() }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.basis[i]
    }

    pub fn vectors(&self) -> &[Arc<Vec<f64>>] {
        &self.basis
    }

    /// Σ c_i φ_i
    pub fn lift(&self, coeffs: &[f64], num_dofs: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_dofs];
        for (c, v) in coeffs.iter().zip(&self.basis) {
            axpy(*c, v, &mut out);
        }
        out
    }

    /// Dense dofs × n copy of the basis.
    pub fn to_matrix(&self, num_dofs: usize) -> DMatrix<f64> {
        DMatrix::from_fn(num_dofs, self.len(), |i, j| self.basis[j][i])
    }

    /// Coefficients of the K-orthogonal projection of `v`.
    pub fn project(&self, v: &[f64], store: &AssembledStore) -> Vec<f64> {
        let kv = store.product().matvec(v);
        self.basis.iter().map(|b| dot(b, &kv)).collect()
    }
}

/// Gram–Schmidt in the K inner product with one re-orthogonalization pass.
///
/// Returns the extended space and the number of vectors added. Zero and
/// dependent snapshots are skipped.
pub fn extend_basis(space: &RbSpace, snapshots: &[Vec<f64>], tol_rel: f64, store: &AssembledStore) -> (RbSpace, usize) {
    let k = store.product();
    let mut out = space.clone();
    let mut added = 0;
    for (s, snap) in snapshots.iter().enumerate() {
        let before = store.energy_norm(snap);
        if !(before > 0.0) {
            log::info!("{:?} snapshot {s} is zero; skipped", space.kind);
            continue;
        }
        let mut r = snap.clone();
        for _ in 0..2 {
            let kr = k.matvec(&r);
            let coeffs: Vec<f64> = out.basis.iter().map(|b| dot(b, &kr)).collect();
            for (c, b) in coeffs.iter().zip(&out.basis) {
                axpy(-c, b, &mut r);
            }
        }
        let after = store.energy_norm(&r);
        if after < tol_rel * before {
            log::debug!("{:?} snapshot {s} lies in the space (ratio {:.2e}); skipped", space.kind, after / before);
            continue;
        }
        r.iter_mut().for_each(|x| *x /= after);
        out.basis.push(Arc::new(r));
        added += 1;
    }
    (out, added)
}
