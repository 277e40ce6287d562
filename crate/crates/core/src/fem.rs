//! P1 finite elements on a structured triangulation of [0,Lx]×[0,Ly].
//!
//! Vertex (i, j) at (i·hx, j·hy) has index `i·(ny+1) + j`. Every cell is split
//! along its (i,j)–(i+1,j+1) diagonal, which keeps the matrix half-bandwidth at
//! `ny + 2`. Coefficients are piecewise constant and sampled at barycenters (edge
//! midpoints on the boundary), so element integrals are exact.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, BandCholesky, CsrMatrix, SparsityPattern};
use crate::model::ComponentStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub side: Side,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pattern: Arc<SparsityPattern>,
}

pub fn build_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Argument(format!("cell counts must be positive, got {nx}×{ny}")));
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::Argument(format!("domain extents must be positive, got {lx}×{ly}")));
    }
    let vid = |i: usize, j: usize| i * (ny + 1) + j;
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            vertices.push([i as f64 * hx, j as f64 * hy]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { vertices: [vid(i, 0), vid(i + 1, 0)], side: Side::Bottom });
        boundary_edges.push(BoundaryEdge { vertices: [vid(i + 1, ny), vid(i, ny)], side: Side::Top });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { vertices: [vid(nx, j), vid(nx, j + 1)], side: Side::Right });
        boundary_edges.push(BoundaryEdge { vertices: [vid(0, j + 1), vid(0, j)], side: Side::Left });
    }
    let couplings = triangles
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[0], t[2])]);
    let pattern = Arc::new(SparsityPattern::from_couplings(vertices.len(), couplings));
    Ok(Mesh { lx, ly, nx, ny, vertices, triangles, boundary_edges, pattern })
}

impl Mesh {
    pub fn num_dofs(&self) -> usize {
        self.vertices.len()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn h(&self) -> f64 {
        let hx = self.lx / self.nx as f64;
        let hy = self.ly / self.ny as f64;
        hx.hypot(hy)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.lx / self.nx as f64, self.ly / self.ny as f64)
    }

    /// Signed area and the gradients of the three barycentric functions.
    fn element(&self, t: &[usize; 3]) -> (f64, [[f64; 2]; 3]) {
        let [a, b, c] = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let area = 0.5 * det;
        let g = [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ];
        (area, g)
    }

    fn barycenter(&self, t: &[usize; 3]) -> [f64; 2] {
        let s = t.iter().fold([0.0, 0.0], |acc, &v| {
            [acc[0] + self.vertices[v][0], acc[1] + self.vertices[v][1]]
        });
        [s[0] / 3.0, s[1] / 3.0]
    }

    fn edge_midpoint(&self, e: &BoundaryEdge) -> [f64; 2] {
        let [a, b] = [self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        let [a, b] = [self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]];
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    /// P1 interpolant of a function.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.vertices.iter().map(|v| f(v[0], v[1])).collect()
    }
}

/// Axis-aligned closed rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.x0 <= p[0] && p[0] <= self.x1 && self.y0 <= p[1] && p[1] <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    Everywhere,
    Rect(Rect),
    /// The whole boundary.
    Boundary,
    /// Part of one side; `from..to` is the coordinate along that side.
    Segment { side: Side, from: f64, to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Wall,
    Door,
    Heater,
    Window,
    Background,
    DomainOfInterest,
}

/// Piecewise-constant 0/1 indicator of a union of shapes, minus the `exclude` shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorField {
    pub role: Role,
    pub geometry: Vec<Geometry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<Geometry>,
}

fn volume_hit(shapes: &[Geometry], p: [f64; 2]) -> bool {
    shapes.iter().any(|g| match g {
        Geometry::Everywhere => true,
        Geometry::Rect(r) => r.contains(p),
        _ => false,
    })
}

fn boundary_hit(shapes: &[Geometry], side: Side, p: [f64; 2]) -> bool {
    shapes.iter().any(|g| match g {
        Geometry::Boundary => true,
        Geometry::Segment { side: s, from, to } => {
            let t = match side {
                Side::Bottom | Side::Top => p[0],
                Side::Left | Side::Right => p[1],
            };
            *s == side && *from <= t && t <= *to
        }
        _ => false,
    })
}

impl IndicatorField {
    pub fn new(role: Role, geometry: Vec<Geometry>) -> Self {
        Self { role, geometry, exclude: Vec::new() }
    }

    pub fn excluding(mut self, shapes: Vec<Geometry>) -> Self {
        self.exclude.extend(shapes);
        self
    }

    pub fn everywhere(role: Role) -> Self {
        Self::new(role, vec![Geometry::Everywhere])
    }

    pub fn rect(role: Role, r: Rect) -> Self {
        Self::new(role, vec![Geometry::Rect(r)])
    }

    /// Volume indicator at a point (boundary shapes never count).
    pub fn volume_at(&self, p: [f64; 2]) -> bool {
        volume_hit(&self.geometry, p) && !volume_hit(&self.exclude, p)
    }

    /// Boundary indicator on an edge, sampled at its midpoint.
    pub fn boundary_at(&self, side: Side, p: [f64; 2]) -> bool {
        boundary_hit(&self.geometry, side, p) && !boundary_hit(&self.exclude, side, p)
    }

    pub fn has_volume_part(&self) -> bool {
        self.geometry
            .iter()
            .any(|g| matches!(g, Geometry::Everywhere | Geometry::Rect(_)))
    }

    pub fn has_boundary_part(&self) -> bool {
        self.geometry
            .iter()
            .any(|g| matches!(g, Geometry::Boundary | Geometry::Segment { .. }))
    }
}

fn check_area(area: f64, t: &[usize; 3]) -> Result<()> {
    if area > 0.0 {
        Ok(())
    } else {
        Err(Error::Assembly(format!("degenerate triangle {t:?} (area {area:e})")))
    }
}

/// ∫ χ ∇v·∇w over the triangles whose barycenter lies in the field.
pub fn assemble_stiffness_component(mesh: &Mesh, field: &IndicatorField) -> Result<CsrMatrix> {
    let mut a = CsrMatrix::zeros(mesh.pattern.clone());
    for t in &mesh.triangles {
        if !field.volume_at(mesh.barycenter(t)) {
            continue;
        }
        let (area, g) = mesh.element(t);
        check_area(area, t)?;
        for r in 0..3 {
            for c in 0..3 {
                a.add(t[r], t[c], area * (g[r][0] * g[c][0] + g[r][1] * g[c][1]));
            }
        }
    }
    Ok(a)
}

/// ∫ χ v w (volume mass).
pub fn assemble_mass_component(mesh: &Mesh, field: &IndicatorField) -> Result<CsrMatrix> {
    let mut m = CsrMatrix::zeros(mesh.pattern.clone());
    for t in &mesh.triangles {
        if !field.volume_at(mesh.barycenter(t)) {
            continue;
        }
        let (area, _) = mesh.element(t);
        check_area(area, t)?;
        for r in 0..3 {
            for c in 0..3 {
                let w = if r == c { area / 6.0 } else { area / 12.0 };
                m.add(t[r], t[c], w);
            }
        }
    }
    Ok(m)
}

/// ∫_{∂Ω} χ v w dS over tagged boundary edges.
pub fn assemble_boundary_mass_component(mesh: &Mesh, field: &IndicatorField) -> Result<CsrMatrix> {
    let mut m = CsrMatrix::zeros(mesh.pattern.clone());
    let mut touched = false;
    for e in &mesh.boundary_edges {
        if !field.boundary_at(e.side, mesh.edge_midpoint(e)) {
            continue;
        }
        touched = true;
        let len = mesh.edge_length(e);
        let [a, b] = e.vertices;
        m.add(a, a, len / 3.0);
        m.add(b, b, len / 3.0);
        m.add(a, b, len / 6.0);
        m.add(b, a, len / 6.0);
    }
    if !touched {
        log::warn!("{:?} field touches no boundary edge; boundary mass is zero", field.role);
    }
    Ok(m)
}

/// `scale` × (∫ χ v dx + ∫_{∂Ω} χ v dS), volume and boundary parts as present.
pub fn assemble_load_component(mesh: &Mesh, field: &IndicatorField, scale: f64) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.num_dofs()];
    if scale == 0.0 {
        return Ok(f);
    }
    if field.has_volume_part() {
        for t in &mesh.triangles {
            if !field.volume_at(mesh.barycenter(t)) {
                continue;
            }
            let (area, _) = mesh.element(t);
            check_area(area, t)?;
            for &v in t {
                f[v] += scale * area / 3.0;
            }
        }
    }
    if field.has_boundary_part() {
        for e in &mesh.boundary_edges {
            if field.boundary_at(e.side, mesh.edge_midpoint(e)) {
                let len = mesh.edge_length(e);
                f[e.vertices[0]] += scale * len / 2.0;
                f[e.vertices[1]] += scale * len / 2.0;
            }
        }
    }
    Ok(f)
}

/// Measure of the volume part of a field on this mesh.
pub fn field_area(mesh: &Mesh, field: &IndicatorField) -> f64 {
    mesh.triangles
        .iter()
        .filter(|t| field.volume_at(mesh.barycenter(t)))
        .map(|t| mesh.element(t).0)
        .sum()
}

/// Length of the tagged boundary of a field on this mesh.
pub fn field_boundary_length(mesh: &Mesh, field: &IndicatorField) -> f64 {
    mesh.boundary_edges
        .iter()
        .filter(|e| field.boundary_at(e.side, mesh.edge_midpoint(e)))
        .map(|e| mesh.edge_length(e))
        .sum()
}

#[derive(Debug, Clone)]
pub enum DesiredState {
    Constant(f64),
    /// Nodal values of a P1 function.
    Nodal(Vec<f64>),
}

/// Pieces of ½∫_D (u − u^d)² = ½ uᵀM_D u − (M_D u^d)ᵀu + ½ offset.
#[derive(Debug, Clone)]
pub struct ObjectiveComponents {
    pub mass_d: CsrMatrix,
    pub moment_d: Vec<f64>,
    /// ∫_D (u^d)²
    pub offset: f64,
}

pub fn assemble_objective_components(
    mesh: &Mesh,
    d: &IndicatorField,
    desired: &DesiredState,
) -> Result<ObjectiveComponents> {
    let mass_d = assemble_mass_component(mesh, d)?;
    if mass_d.is_zero() {
        return Err(Error::Argument("domain of interest contains no triangle".into()));
    }
    let ud = match desired {
        DesiredState::Constant(c) => vec![*c; mesh.num_dofs()],
        DesiredState::Nodal(v) => {
            check_len(mesh.num_dofs(), v.len())?;
            v.clone()
        }
    };
    let moment_d = mass_d.matvec(&ud);
    let offset = dot(&moment_d, &ud);
    Ok(ObjectiveComponents { mass_d, moment_d, offset })
}

/// Assembled matrices and vectors plus the energy product K and its factor.
#[derive(Debug)]
pub struct AssembledStore {
    pub matrices: Vec<CsrMatrix>,
    pub vectors: Vec<Vec<f64>>,
    product: CsrMatrix,
    factor: BandCholesky,
}

impl AssembledStore {
    /// `product` must be the energy matrix K; it is factorized once here.
    pub fn new(matrices: Vec<CsrMatrix>, vectors: Vec<Vec<f64>>, product: CsrMatrix) -> Result<Self> {
        let n = product.dim();
        for m in &matrices {
            check_len(n, m.dim())?;
        }
        for v in &vectors {
            check_len(n, v.len())?;
        }
        let factor = BandCholesky::factor(&product).map_err(|e| {
            Error::Configuration(format!("energy product is not positive definite: {e}"))
        })?;
        Ok(Self { matrices, vectors, product, factor })
    }

    pub fn num_dofs(&self) -> usize {
        self.product.dim()
    }

    pub fn product(&self) -> &CsrMatrix {
        &self.product
    }

    /// K⁻¹ f
    pub fn riesz_solve(&self, functional: &[f64]) -> Vec<f64> {
        self.factor.solve(functional)
    }

    /// sqrt(fᵀ K⁻¹ f)
    pub fn dual_norm(&self, functional: &[f64]) -> f64 {
        let r = self.riesz_solve(functional);
        dot(&r, functional).max(0.0).sqrt()
    }

    /// vᵀ K w
    pub fn energy_inner(&self, v: &[f64], w: &[f64]) -> f64 {
        self.product.bilinear(v, w)
    }

    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.energy_inner(v, v).max(0.0).sqrt()
    }
}

impl ComponentStore for AssembledStore {
    fn bilinear(&self, idx: usize, v: &[f64], w: &[f64]) -> Option<f64> {
        self.matrices.get(idx).map(|m| m.bilinear(v, w))
    }

    fn linear(&self, idx: usize, v: &[f64]) -> Option<f64> {
        self.vectors.get(idx).map(|f| dot(f, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn excluded_shapes_are_removed() {
        let m = build_mesh(1.0, 1.0, 10, 10).unwrap();
        let hole = Geometry::Rect(Rect { x0: 0.0, x1: 0.5, y0: 0.0, y1: 0.5 });
        let f = IndicatorField::everywhere(Role::Background).excluding(vec![hole]);
        assert!((field_area(&m, &f) - 0.75).abs() < 1e-12);
        let seg = Geometry::Segment { side: Side::Top, from: 0.0, to: 0.3 };
        let b = IndicatorField::new(Role::Window, vec![Geometry::Boundary]).excluding(vec![seg]);
        assert!((field_boundary_length(&m, &b) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn mesh_counts() {
        let m = build_mesh(2.0, 1.0, 2, 1).unwrap();
        assert_eq!((m.num_dofs(), m.triangles.len()), (6, 4));
        assert_eq!(build_mesh(2.0, 1.0, 100, 50).unwrap().num_dofs(), 5151);
        assert_eq!(build_mesh(2.0, 1.0, 400, 200).unwrap().num_dofs(), 80601);
        assert!(build_mesh(2.0, 1.0, 0, 3).is_err());
        let m = build_mesh(2.0, 1.0, 8, 4).unwrap();
        for t in &m.triangles {
            assert!(m.element(t).0 > 0.0);
        }
        assert_eq!(m.pattern().bandwidth(), 4 + 2);
        assert_eq!(m.boundary_edges.len(), 2 * (8 + 4));
    }

    #[test]
    fn stiffness_kernel_and_dirichlet_energy() {
        let m = build_mesh(1.0, 1.0, 1, 1).unwrap();
        let a = assemble_stiffness_component(&m, &IndicatorField::everywhere(Role::Background)).unwrap();
        let r = a.matvec(&ones(m.num_dofs()));
        assert!(r.iter().all(|x| x.abs() < 1e-14));
        let u = m.interpolate(|x, _| x);
        assert!((a.bilinear(&u, &u) - 1.0).abs() < 1e-14);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn stiffness_is_additive_over_disjoint_fields() {
        let m = build_mesh(2.0, 1.0, 10, 5).unwrap();
        let left = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        let right = Rect { x0: 1.0, x1: 2.0, y0: 0.0, y1: 1.0 };
        let a1 = assemble_stiffness_component(&m, &IndicatorField::rect(Role::Wall, left)).unwrap();
        let a2 = assemble_stiffness_component(&m, &IndicatorField::rect(Role::Wall, right)).unwrap();
        let a = assemble_stiffness_component(&m, &IndicatorField::everywhere(Role::Background)).unwrap();
        let sum = CsrMatrix::linear_combination(&[1.0, 1.0], &[&a1, &a2]).unwrap();
        for (x, y) in sum.values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_mass_measures() {
        let m = build_mesh(2.0, 1.0, 6, 3).unwrap();
        let one = ones(m.num_dofs());
        let full = assemble_boundary_mass_component(&m, &IndicatorField::new(Role::Wall, vec![Geometry::Boundary])).unwrap();
        assert!((full.bilinear(&one, &one) - 6.0).abs() < 1e-13);
        let bottom = IndicatorField::new(Role::Wall, vec![Geometry::Segment { side: Side::Bottom, from: 0.0, to: 2.0 }]);
        let top = IndicatorField::new(Role::Wall, vec![Geometry::Segment { side: Side::Top, from: 0.0, to: 2.0 }]);
        let both = IndicatorField::new(Role::Wall, [bottom.geometry.clone(), top.geometry.clone()].concat());
        let mb = assemble_boundary_mass_component(&m, &bottom).unwrap();
        let mt = assemble_boundary_mass_component(&m, &top).unwrap();
        let mbt = assemble_boundary_mass_component(&m, &both).unwrap();
        assert!((mb.bilinear(&one, &one) - 2.0).abs() < 1e-13);
        let sum = CsrMatrix::linear_combination(&[1.0, 1.0], &[&mb, &mt]).unwrap();
        for (x, y) in sum.values().iter().zip(mbt.values()) {
            assert!((x - y).abs() < 1e-15);
        }
        let none = IndicatorField::rect(Role::Wall, Rect { x0: 0.5, x1: 1.0, y0: 0.3, y1: 0.6 });
        assert!(assemble_boundary_mass_component(&m, &none).unwrap().is_zero());
    }

    #[test]
    fn load_measures() {
        let m = build_mesh(2.0, 1.0, 20, 10).unwrap();
        let one = ones(m.num_dofs());
        let heater = IndicatorField::rect(Role::Heater, Rect { x0: 0.2, x1: 0.4, y0: 0.1, y1: 0.2 });
        let f = assemble_load_component(&m, &heater, 1.0).unwrap();
        assert!((dot(&f, &one) - 0.02).abs() < 1e-14);
        let seg = IndicatorField::new(Role::Window, vec![Geometry::Segment { side: Side::Left, from: 0.2, to: 0.6 }]);
        let g = assemble_load_component(&m, &seg, 5.0).unwrap();
        assert!((dot(&g, &one) - 5.0 * 0.4).abs() < 1e-13);
        assert!(assemble_load_component(&m, &heater, 0.0).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn objective_components() {
        let m = build_mesh(2.0, 1.0, 10, 5).unwrap();
        let d = IndicatorField::rect(Role::DomainOfInterest, Rect { x0: 0.4, x1: 1.2, y0: 0.2, y1: 0.8 });
        let z = assemble_objective_components(&m, &d, &DesiredState::Constant(0.0)).unwrap();
        assert!(z.moment_d.iter().all(|&x| x == 0.0) && z.offset == 0.0);
        let c = assemble_objective_components(&m, &d, &DesiredState::Constant(18.0)).unwrap();
        assert!((c.offset - 324.0 * 0.8 * 0.6).abs() < 1e-11);
        let ud = m.interpolate(|x, y| x * y + 1.0);
        let o = assemble_objective_components(&m, &d, &DesiredState::Nodal(ud.clone())).unwrap();
        let misfit = o.mass_d.bilinear(&ud, &ud) - 2.0 * dot(&o.moment_d, &ud) + o.offset;
        assert!(misfit.abs() < 1e-12);
        let empty = IndicatorField::rect(Role::DomainOfInterest, Rect { x0: 5.0, x1: 6.0, y0: 0.0, y1: 1.0 });
        assert!(assemble_objective_components(&m, &empty, &DesiredState::Constant(1.0)).is_err());
    }

    fn tiny_store() -> AssembledStore {
        let m = build_mesh(2.0, 1.0, 2, 1).unwrap();
        let a = assemble_stiffness_component(&m, &IndicatorField::everywhere(Role::Background)).unwrap();
        let b = assemble_boundary_mass_component(&m, &IndicatorField::new(Role::Wall, vec![Geometry::Boundary])).unwrap();
        let k = CsrMatrix::linear_combination(&[1.0, 0.5], &[&a, &b]).unwrap();
        AssembledStore::new(vec![a, b], vec![], k).unwrap()
    }

    #[test]
    fn riesz_against_dense_inverse() {
        let s = tiny_store();
        assert!(s.riesz_solve(&[0.0; 6]).iter().all(|&x| x == 0.0));
        let v = [0.3, -1.0, 2.0, 0.7, 0.1, -0.4];
        let kv = s.product().matvec(&v);
        for (a, b) in s.riesz_solve(&kv).iter().zip(&v) {
            assert!((a - b).abs() < 1e-13);
        }
        let f = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.5]);
        let kinv = s.product().to_dense().try_inverse().unwrap();
        let brute = f.dot(&(&kinv * &f)).sqrt();
        let ours = s.dual_norm(f.as_slice());
        assert!((ours - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn components_are_psd() {
        let m = build_mesh(2.0, 1.0, 4, 2).unwrap();
        let wall = IndicatorField::rect(Role::Wall, Rect { x0: 0.5, x1: 1.0, y0: 0.0, y1: 1.0 });
        let mats = [
            assemble_stiffness_component(&m, &wall).unwrap(),
            assemble_mass_component(&m, &wall).unwrap(),
            assemble_boundary_mass_component(&m, &IndicatorField::new(Role::Wall, vec![Geometry::Boundary])).unwrap(),
        ];
        for a in &mats {
            assert!(a.is_symmetric(0.0));
            let d = a.to_dense();
            let lmin = d.clone().symmetric_eigenvalues().min();
            assert!(lmin >= -1e-12 * d.amax());
        }
    }
}
