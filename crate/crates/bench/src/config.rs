//! Building-floor problem description and its assembly into a [`FomSystem`].
//!
//! A floor plan is a rectangle with features tagged by role. Volume walls and
//! doors carry their own conductivity, boundary walls and windows their own
//! exchange coefficient with the outside temperature `u_out`, and heaters
//! contribute a source. Every coefficient is affine in μ. Whatever is not
//! covered by a feature falls back to `background_diffusion` inside and
//! `boundary_exchange` on the boundary.

use serde::{Deserialize, Serialize};
use trrb_core::fem::{
    assemble_boundary_mass_component, assemble_load_component, assemble_objective_components,
    assemble_stiffness_component, build_mesh, field_area, field_boundary_length, AssembledStore, DesiredState,
    Geometry, IndicatorField, Mesh, Rect, Role, Side,
};
use trrb_core::fom::FomSystem;
use trrb_core::linalg::{BandCholesky, CsrMatrix};
use trrb_core::model::{FormKind, ParameterBox, ParametricProblem, SeparableForm, Theta};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXPERIMENT1_JSON: &str = include_str!("../configs/experiment1.json");
pub const EXPERIMENT2_JSON: &str = include_str!("../configs/experiment2.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub domain: DomainSize,
    pub mesh: MeshSize,
    pub u_out: f64,
    /// Conductivity wherever no wall or door sits.
    pub background_diffusion: f64,
    /// Robin coefficient on boundary not covered by a feature.
    pub boundary_exchange: f64,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub features: Vec<Feature>,
    pub domain_of_interest: Vec<Geometry>,
    pub objective: ObjectiveSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSize {
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSize {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    /// Component of μ̌, the parameter defining the energy product.
    pub reference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Wall,
    Door,
    Heater,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feature {
    pub name: String,
    pub role: FeatureRole,
    pub geometry: Vec<Geometry>,
    pub theta: AffineTheta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineTheta {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub slopes: Vec<Slope>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slope {
    pub parameter: usize,
    pub slope: f64,
}

impl AffineTheta {
    pub fn theta(&self) -> Theta {
        if self.slopes.iter().all(|s| s.slope == 0.0) {
            Theta::constant(self.intercept)
        } else {
            Theta::affine(self.intercept, self.slopes.iter().map(|s| (s.parameter, s.slope)).collect())
        }
    }

    fn scaled(&self, c: f64) -> Theta {
        let t = AffineTheta {
            intercept: c * self.intercept,
            slopes: self.slopes.iter().map(|s| Slope { parameter: s.parameter, slope: c * s.slope }).collect(),
        };
        t.theta()
    }

    /// Minimum over the box; attained at a corner since θ is affine.
    fn min_over(&self, lower: &[f64], upper: &[f64]) -> f64 {
        self.intercept
            + self
                .slopes
                .iter()
                .map(|s| s.slope * if s.slope >= 0.0 { lower[s.parameter] } else { upper[s.parameter] })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub sigma_d: f64,
    /// Tikhonov weights σ_i, one per parameter.
    pub sigma_mu: Vec<f64>,
    /// Tikhonov target μ^d.
    pub mu_d: Vec<f64>,
    pub desired_state: DesiredSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesiredSpec {
    /// u^d = value on D.
    ConstantOnD { value: f64 },
    /// u^d = FOM state at `mu`.
    FomAtParameter { mu: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Volume,
    Boundary,
}

fn placement(g: &Geometry) -> Placement {
    match g {
        Geometry::Everywhere | Geometry::Rect(_) => Placement::Volume,
        Geometry::Boundary | Geometry::Segment { .. } => Placement::Boundary,
    }
}

fn invalid(msg: impl Into<String>) -> BenchError {
    BenchError::Validation(msg.into())
}

fn finite_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be positive and finite, got {v}")))
    }
}

fn interiors_overlap(a: &Rect, b: &Rect) -> bool {
    a.x0.max(b.x0) < a.x1.min(b.x1) && a.y0.max(b.y0) < a.y1.min(b.y1)
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProblemConfig =
            serde_json::from_str(text).map_err(|source| BenchError::Json { path: "<config>".into(), source })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| BenchError::Json { path: path.display().to_string(), source })
    }

    pub fn experiment1() -> Self {
        Self::from_json(EXPERIMENT1_JSON).expect("shipped experiment-1 config parses")
    }

    pub fn experiment2() -> Self {
        Self::from_json(EXPERIMENT2_JSON).expect("shipped experiment-2 config parses")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_mesh(mut self, nx: Option<usize>, ny: Option<usize>) -> Self {
        if let Some(nx) = nx {
            self.mesh.nx = nx;
        }
        if let Some(ny) = ny {
            self.mesh.ny = ny;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn parameter_box(&self) -> Result<ParameterBox> {
        Ok(ParameterBox::new(
            self.parameters.iter().map(|p| p.lower).collect(),
            self.parameters.iter().map(|p| p.upper).collect(),
        )?)
    }

    pub fn mu_check(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.reference).collect()
    }

    pub fn count_role(&self, role: FeatureRole) -> usize {
        self.features.iter().filter(|f| f.role == role).count()
    }

    /// Everything that can be checked without a mesh.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported config version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        finite_positive("domain.lx", self.domain.lx)?;
        finite_positive("domain.ly", self.domain.ly)?;
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return Err(invalid("mesh.nx and mesh.ny must be at least 1"));
        }
        finite_positive("background_diffusion", self.background_diffusion)?;
        if !(self.boundary_exchange.is_finite() && self.boundary_exchange >= 0.0) {
            return Err(invalid("boundary_exchange must be nonnegative"));
        }
        if !self.u_out.is_finite() {
            return Err(invalid("u_out must be finite"));
        }
        let p = self.dim();
        for par in &self.parameters {
            if !(par.lower.is_finite() && par.upper.is_finite() && par.lower <= par.upper) {
                return Err(invalid(format!("parameter {}: empty or non-finite bounds", par.name)));
            }
            if !(par.lower <= par.reference && par.reference <= par.upper) {
                return Err(invalid(format!("parameter {}: reference value outside its bounds", par.name)));
            }
        }
        let lower: Vec<f64> = self.parameters.iter().map(|p| p.lower).collect();
        let upper: Vec<f64> = self.parameters.iter().map(|p| p.upper).collect();

        let obj = &self.objective;
        finite_positive("objective.sigma_d", obj.sigma_d)?;
        if obj.sigma_mu.len() != p || obj.mu_d.len() != p {
            return Err(invalid(format!("objective.sigma_mu and objective.mu_d need {p} entries")));
        }
        if obj.sigma_mu.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("objective.sigma_mu must be nonnegative"));
        }
        let inside = |mu: &[f64]| mu.iter().zip(&lower).zip(&upper).all(|((m, l), u)| l <= m && m <= u);
        if !inside(&obj.mu_d) {
            return Err(invalid("objective.mu_d lies outside the parameter box"));
        }
        if let DesiredSpec::FomAtParameter { mu } = &obj.desired_state {
            if mu.len() != p || !inside(mu) {
                return Err(invalid("desired_state.mu must be a point of the parameter box"));
            }
        }
        if self.domain_of_interest.is_empty()
            || self.domain_of_interest.iter().any(|g| placement(g) != Placement::Volume)
        {
            return Err(invalid("domain_of_interest must be a nonempty list of volume shapes"));
        }

        let mut bound = vec![false; p];
        let mut names = std::collections::HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(invalid(format!("duplicate feature name {}", f.name)));
            }
            if f.geometry.is_empty() {
                return Err(invalid(format!("feature {} has no geometry", f.name)));
            }
            let first = placement(&f.geometry[0]);
            if f.geometry.iter().any(|g| placement(g) != first) {
                return Err(invalid(format!("feature {} mixes volume and boundary shapes", f.name)));
            }
            if f.role == FeatureRole::Heater && first != Placement::Volume {
                return Err(invalid(format!("heater {} must be a volume feature", f.name)));
            }
            if f.role == FeatureRole::Door && first != Placement::Volume {
                return Err(invalid(format!("door {} must be a volume feature", f.name)));
            }
            if f.role == FeatureRole::Window && first != Placement::Boundary {
                return Err(invalid(format!("window {} must lie on the boundary", f.name)));
            }
            for g in &f.geometry {
                self.check_shape(&f.name, g)?;
            }
            for s in &f.theta.slopes {
                if s.parameter >= p || !s.slope.is_finite() {
                    return Err(invalid(format!("feature {}: bad slope on parameter {}", f.name, s.parameter)));
                }
                if s.slope != 0.0 {
                    bound[s.parameter] = true;
                }
            }
            if !f.theta.intercept.is_finite() {
                return Err(invalid(format!("feature {}: non-finite intercept", f.name)));
            }
            if f.role != FeatureRole::Heater && f.theta.min_over(&lower, &upper) <= 0.0 {
                return Err(invalid(format!("feature {}: coefficient is not positive on the whole box", f.name)));
            }
        }
        if let Some(i) = bound.iter().position(|b| !b) {
            return Err(invalid(format!("parameter {} is not bound to any feature", self.parameters[i].name)));
        }

        let coefficient_rects: Vec<(&str, &Rect)> = self
            .features
            .iter()
            .filter(|f| f.role != FeatureRole::Heater)
            .flat_map(|f| {
                f.geometry.iter().filter_map(move |g| match g {
                    Geometry::Rect(r) => Some((f.name.as_str(), r)),
                    _ => None,
                })
            })
            .collect();
        for (i, (na, a)) in coefficient_rects.iter().enumerate() {
            for (nb, b) in &coefficient_rects[i + 1..] {
                if interiors_overlap(a, b) {
                    return Err(invalid(format!("features {na} and {nb} overlap")));
                }
            }
        }
        if self.features.iter().any(|f| f.role != FeatureRole::Heater && f.geometry.contains(&Geometry::Everywhere)) {
            return Err(invalid("walls and doors must be rectangles"));
        }
        Ok(())
    }

    fn check_shape(&self, name: &str, g: &Geometry) -> Result<()> {
        let (lx, ly) = (self.domain.lx, self.domain.ly);
        match g {
            Geometry::Rect(r) => {
                let ok = r.x0 < r.x1 && r.y0 < r.y1 && r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= lx && r.y1 <= ly;
                if !ok {
                    return Err(invalid(format!("feature {name}: rectangle {r:?} is empty or leaves the domain")));
                }
            }
            Geometry::Segment { side, from, to } => {
                let len = match side {
                    Side::Bottom | Side::Top => lx,
                    Side::Left | Side::Right => ly,
                };
                if !(0.0 <= *from && from < to && *to <= len) {
                    return Err(invalid(format!("feature {name}: segment [{from}, {to}] is empty or off the side")));
                }
            }
            Geometry::Everywhere | Geometry::Boundary => {}
        }
        Ok(())
    }
}

/// Which config feature each assembled component came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub name: String,
    pub dofs: usize,
    pub parameters: usize,
    pub walls: usize,
    pub doors: usize,
    pub heaters: usize,
    pub windows: usize,
    pub a_components: usize,
    pub l_components: usize,
}

pub struct BuiltProblem {
    pub fom: FomSystem,
    pub mesh: Mesh,
    pub summary: ProblemSummary,
}

impl BuiltProblem {
    pub fn problem(&self) -> &ParametricProblem {
        self.fom.problem()
    }
}

/// Accumulates components, folding every μ-independent one into a single slot.
#[derive(Default)]
struct Collector {
    matrices: Vec<(CsrMatrix, Theta)>,
    vectors: Vec<(Vec<f64>, Theta)>,
    constant_matrix: Option<CsrMatrix>,
    constant_vector: Option<Vec<f64>>,
}

impl Collector {
    fn matrix(&mut self, m: CsrMatrix, theta: Theta) -> Result<()> {
        if theta.is_constant() {
            let c = theta.eval(&[]);
            let merged = match self.constant_matrix.take() {
                None => CsrMatrix::linear_combination(&[c], &[&m])?,
                Some(acc) => CsrMatrix::linear_combination(&[1.0, c], &[&acc, &m])?,
            };
            self.constant_matrix = Some(merged);
        } else {
            self.matrices.push((m, theta));
        }
        Ok(())
    }

    fn vector(&mut self, v: Vec<f64>, theta: Theta) {
        if theta.is_constant() {
            let c = theta.eval(&[]);
            match &mut self.constant_vector {
                None => self.constant_vector = Some(v.iter().map(|x| c * x).collect()),
                Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, x)| *a += c * x),
            }
        } else {
            self.vectors.push((v, theta));
        }
    }

    fn matrices(self_m: Vec<(CsrMatrix, Theta)>, constant: Option<CsrMatrix>) -> Vec<(CsrMatrix, Theta)> {
        let mut out = self_m;
        if let Some(m) = constant {
            out.push((m, Theta::constant(1.0)));
        }
        out
    }
}

fn unresolved(name: &str) -> BenchError {
    invalid(format!("feature {name} is not resolved by the mesh (it covers no cell or boundary edge)"))
}

/// Assembles the affine decomposition. Fails with a validation error on a
/// config that does not validate or on features the mesh cannot see.
pub fn build_problem(cfg: &ProblemConfig) -> Result<BuiltProblem> {
    cfg.validate()?;
    let mesh = build_mesh(cfg.domain.lx, cfg.domain.ly, cfg.mesh.nx, cfg.mesh.ny)?;
    let p = cfg.dim();

    let mut a = Collector::default();
    let mut l = Collector::default();
    let mut volume_coefficient_shapes = Vec::new();
    let mut boundary_coefficient_shapes = Vec::new();

    for f in &cfg.features {
        let field = IndicatorField::new(
            match f.role {
                FeatureRole::Wall => Role::Wall,
                FeatureRole::Door => Role::Door,
                FeatureRole::Heater => Role::Heater,
                FeatureRole::Window => Role::Window,
            },
            f.geometry.clone(),
        );
        let on_boundary = placement(&f.geometry[0]) == Placement::Boundary;
        if on_boundary {
            if field_boundary_length(&mesh, &field) <= 0.0 {
                return Err(unresolved(&f.name));
            }
            a.matrix(assemble_boundary_mass_component(&mesh, &field)?, f.theta.theta())?;
            l.vector(assemble_load_component(&mesh, &field, 1.0)?, f.theta.scaled(cfg.u_out));
            boundary_coefficient_shapes.extend(f.geometry.iter().cloned());
        } else {
            if field_area(&mesh, &field) <= 0.0 {
                return Err(unresolved(&f.name));
            }
            match f.role {
                FeatureRole::Heater => l.vector(assemble_load_component(&mesh, &field, 1.0)?, f.theta.theta()),
                _ => {
                    a.matrix(assemble_stiffness_component(&mesh, &field)?, f.theta.theta())?;
                    volume_coefficient_shapes.extend(f.geometry.iter().cloned());
                }
            }
        }
    }

    let background = IndicatorField::everywhere(Role::Background).excluding(volume_coefficient_shapes);
    if field_area(&mesh, &background) > 0.0 {
        a.matrix(assemble_stiffness_component(&mesh, &background)?, Theta::constant(cfg.background_diffusion))?;
    }
    if cfg.boundary_exchange > 0.0 {
        let rest = IndicatorField::new(Role::Window, vec![Geometry::Boundary]).excluding(boundary_coefficient_shapes);
        if field_boundary_length(&mesh, &rest) > 0.0 {
            a.matrix(assemble_boundary_mass_component(&mesh, &rest)?, Theta::constant(cfg.boundary_exchange))?;
            l.vector(assemble_load_component(&mesh, &rest, 1.0)?, Theta::constant(cfg.boundary_exchange * cfg.u_out));
        }
    }

    let a_parts = Collector::matrices(std::mem::take(&mut a.matrices), a.constant_matrix.take());
    let mut l_parts = std::mem::take(&mut l.vectors);
    if let Some(v) = l.constant_vector.take() {
        l_parts.push((v, Theta::constant(1.0)));
    }
    if l_parts.is_empty() {
        l_parts.push((vec![0.0; mesh.num_dofs()], Theta::constant(0.0)));
    }

    let bx = cfg.parameter_box()?;
    let mu_check = cfg.mu_check();
    let a_thetas: Vec<Theta> = a_parts.iter().map(|(_, t)| t.clone()).collect();
    let a_mats: Vec<&CsrMatrix> = a_parts.iter().map(|(m, _)| m).collect();
    let operator_at = |mu: &[f64]| -> Result<CsrMatrix> {
        let c: Vec<f64> = a_thetas.iter().map(|t| t.eval(mu)).collect();
        Ok(CsrMatrix::linear_combination(&c, &a_mats)?)
    };

    let obj = &cfg.objective;
    let desired = match &obj.desired_state {
        DesiredSpec::ConstantOnD { value } => DesiredState::Constant(*value),
        DesiredSpec::FomAtParameter { mu } => {
            let op = operator_at(mu)?;
            let factor = BandCholesky::factor(&op)?;
            let mut rhs = vec![0.0; mesh.num_dofs()];
            for (v, t) in &l_parts {
                let c = t.eval(mu);
                rhs.iter_mut().zip(v).for_each(|(r, x)| *r += c * x);
            }
            DesiredState::Nodal(factor.solve(&rhs))
        }
    };
    let d_field = IndicatorField::new(Role::DomainOfInterest, cfg.domain_of_interest.clone());
    if field_area(&mesh, &d_field) <= 0.0 {
        return Err(invalid("domain_of_interest is not resolved by the mesh"));
    }
    let objc = assemble_objective_components(&mesh, &d_field, &desired)?;
    let product = operator_at(&mu_check)?;

    let na = a_parts.len();
    let nl = l_parts.len();
    let mut matrices: Vec<CsrMatrix> = a_parts.into_iter().map(|(m, _)| m).collect();
    matrices.push(objc.mass_d);
    let mut l_thetas = Vec::with_capacity(nl);
    let mut vectors = Vec::with_capacity(nl + 1);
    for (v, t) in l_parts {
        vectors.push(v);
        l_thetas.push(t);
    }
    vectors.push(objc.moment_d.iter().map(|m| -obj.sigma_d * m).collect());

    let form_a = SeparableForm::new(FormKind::BilinearA, (0..na).collect(), a_thetas)?;
    let form_k = SeparableForm::new(FormKind::BilinearK, vec![na], vec![Theta::constant(0.5 * obj.sigma_d)])?;
    let form_l = SeparableForm::new(FormKind::LinearL, (0..nl).collect(), l_thetas)?;
    let form_j = SeparableForm::new(FormKind::LinearJ, vec![nl], vec![Theta::constant(1.0)])?;
    let big = Theta::Tikhonov {
        weights: obj.sigma_mu.clone(),
        target: obj.mu_d.clone(),
        offset: 0.5 * obj.sigma_d * objc.offset + 1.0,
    };
    let problem = ParametricProblem::new(form_a, form_k, form_l, form_j, big, bx, mu_check)?;
    let store = AssembledStore::new(matrices, vectors, product)?;
    let fom = FomSystem::new(problem, store)?;
    let summary = ProblemSummary {
        name: cfg.name.clone(),
        dofs: mesh.num_dofs(),
        parameters: p,
        walls: cfg.count_role(FeatureRole::Wall),
        doors: cfg.count_role(FeatureRole::Door),
        heaters: cfg.count_role(FeatureRole::Heater),
        windows: cfg.count_role(FeatureRole::Window),
        a_components: na,
        l_components: nl,
    };
    Ok(BuiltProblem { fom, mesh, summary })
}
