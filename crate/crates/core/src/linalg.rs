//! Sparse storage and dense helpers.
//!
//! All component matrices of one discretization share a single
//! [`SparsityPattern`], so parameter-dependent operators Σθ_i A_i are plain
//! weighted sums of value arrays. The direct solver is a banded Cholesky
//! factorization; with the vertex numbering of [`crate::fem::Mesh`] the
//! half-bandwidth is `ny + 2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Compressed-row sparsity structure with sorted column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a symmetric pattern from undirected couplings; the diagonal is always present.
    pub fn from_couplings(n: usize, couplings: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in couplings {
            assert!(i < n && j < n, "coupling ({i}, {j}) out of range for n = {n}");
            if i != j {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage offset of entry (i, j), if it is structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }

    /// max |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .map(|i| {
                let r = self.row(i);
                let lo = r.first().map_or(0, |&j| i.saturating_sub(j));
                let hi = r.last().map_or(0, |&j| j.saturating_sub(i));
                lo.max(hi)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Square sparse matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` to entry (i, j); panics if the entry is not in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// y = A x
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    /// xᵀ A y without forming A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &*self.pattern;
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * y[p.col_idx[k]];
            }
            total += xi * acc;
        }
        total
    }

    /// Σ c_i M_i over matrices sharing one pattern.
    pub fn linear_combination(coeffs: &[f64], mats: &[&CsrMatrix]) -> Result<CsrMatrix> {
        check_len(mats.len(), coeffs.len())?;
        let first = mats
            .first()
            .ok_or_else(|| Error::Argument("empty linear combination".into()))?;
        let mut out = CsrMatrix::zeros(first.pattern.clone());
        for (&c, m) in coeffs.iter().zip(mats) {
            if !Arc::ptr_eq(&m.pattern, &first.pattern) && *m.pattern != *first.pattern {
                return Err(Error::Argument("matrices do not share a sparsity pattern".into()));
            }
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.values.iter_mut().zip(&m.values) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        CsrMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let p = &*self.pattern;
        (0..p.n).all(|i| {
            p.row(i)
                .iter()
                .all(|&j| (self.get(i, j) - self.get(j, i)).abs() <= tol)
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in self.pattern.row(i) {
                d[(i, j)] = self.get(i, j);
            }
        }
        d
    }
}

/// Banded Cholesky factor L (A = L Lᵀ), stored row-wise over the lower band.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.pattern.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        // Lower band of A: entry (i, j), j <= i, lives at i*w + (j + bw - i).
        for i in 0..n {
            let p = &*a.pattern;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                if j <= i {
                    data[i * w + j + bw - i] = a.values[k];
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let len = j - k0;
                let ri = i * w + k0 + bw - i;
                let rj = j * w + k0 + bw - j;
                let dot = dot(&data[ri..ri + len], &data[rj..rj + len]);
                let s = data[i * w + j + bw - i] - dot;
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + j + bw - i] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let r = i * w + k0 + bw - i;
            let s = dot(&self.data[r..r + (i - k0)], &b[k0..i]);
            b[i] = (b[i] - s) / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let xi = b[i] / self.data[i * w + bw];
            b[i] = xi;
            let k0 = i.saturating_sub(bw);
            let r = i * w + k0 + bw - i;
            for (bk, l) in b[k0..i].iter_mut().zip(&self.data[r..r + (i - k0)]) {
                *bk -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociating a single sum.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Dense solve with partial pivoting; a tiny pivot relative to the matrix scale
/// is reported instead of regularized.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let scale = a.amax();
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > 1e-14 * scale) {
        return Err(Error::Degenerate(format!(
            "{what}: pivot {min_pivot:e} vs scale {scale:e}"
        )));
    }
    lu.solve(b)
        .ok_or_else(|| Error::Degenerate(format!("{what}: LU solve failed")))
}

/// Smallest eigenvalue of a symmetric matrix (0x0 gives +inf).
pub fn sym_min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (h + h.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest singular value.
pub fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    h.singular_values().max()
}
