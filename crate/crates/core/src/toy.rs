//! Small reference problems for tests, examples and benchmarks.
//!
//! [`thermal_block`] builds a three-parameter diffusion problem on the unit square:
//! two conductivity blocks, one heater, Robin exchange on the whole boundary and
//! a tracking functional on a central domain of interest. With
//! `nonaffine = true` every form gets μ-dependent, curved coefficients so that
//! all first- and second-derivative terms of the NCD machinery are exercised.

use crate::error::Result;
use crate::fem::{
    assemble_boundary_mass_component, assemble_load_component, assemble_objective_components,
    assemble_stiffness_component, build_mesh, AssembledStore, DesiredState, Geometry, IndicatorField,
    Rect, Role,
};
use crate::fom::FomSystem;
use crate::linalg::CsrMatrix;
use crate::model::{FormKind, ParameterBox, ParametricProblem, SeparableForm, Theta};

#[derive(Debug, Clone)]
pub struct ToyOptions {
    /// Cells per side.
    pub n: usize,
    pub nonaffine: bool,
    pub sigma_d: f64,
    pub target: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self { n: 8, nonaffine: false, sigma_d: 1.0, target: 2.0 }
    }
}

pub fn thermal_block(opts: &ToyOptions) -> Result<FomSystem> {
    let mesh = build_mesh(1.0, 1.0, opts.n, opts.n)?;
    let left = Rect { x0: 0.0, x1: 0.5, y0: 0.0, y1: 1.0 };
    let right = Rect { x0: 0.5, x1: 1.0, y0: 0.0, y1: 1.0 };
    let heater = Rect { x0: 0.0, x1: 0.25, y0: 0.25, y1: 0.75 };
    let d = Rect { x0: 0.5, x1: 0.75, y0: 0.25, y1: 0.75 };
    let boundary = IndicatorField::new(Role::Window, vec![Geometry::Boundary]);

    let matrices = vec![
        assemble_stiffness_component(&mesh, &IndicatorField::rect(Role::Wall, left))?,
        assemble_stiffness_component(&mesh, &IndicatorField::rect(Role::Wall, right))?,
        assemble_boundary_mass_component(&mesh, &boundary)?,
    ];
    let obj = assemble_objective_components(
        &mesh,
        &IndicatorField::rect(Role::DomainOfInterest, d),
        &DesiredState::Constant(opts.target),
    )?;
    let vectors = vec![
        assemble_load_component(&mesh, &IndicatorField::rect(Role::Heater, heater), 1.0)?,
        assemble_load_component(&mesh, &boundary, 1.0)?,
        obj.moment_d.iter().map(|m| -opts.sigma_d * m).collect(),
    ];
    let mut matrices = matrices;
    matrices.push(obj.mass_d);

    let s = opts.sigma_d;
    let (ta, tk, tl, tj) = if opts.nonaffine {
        (
            vec![
                Theta::Exponential { scale: 1.0, rate: 0.5, index: 0 },
                Theta::affine(0.2, vec![(1, 1.0)]),
                Theta::constant(2.0),
            ],
            vec![Theta::Exponential { scale: 0.5 * s, rate: 0.3, index: 1 }],
            vec![
                Theta::Tikhonov { weights: vec![0.0, 0.0, 0.6], target: vec![0.0, 0.0, -1.0], offset: 0.0 },
                Theta::affine(2.0, vec![(0, 0.4)]),
            ],
            vec![Theta::Exponential { scale: 1.0, rate: -0.2, index: 2 }],
        )
    } else {
        (
            vec![Theta::coordinate(0), Theta::coordinate(1), Theta::constant(2.0)],
            vec![Theta::constant(0.5 * s)],
            vec![Theta::coordinate(2), Theta::constant(2.0)],
            vec![Theta::constant(1.0)],
        )
    };
    let a = SeparableForm::new(FormKind::BilinearA, vec![0, 1, 2], ta)?;
    let k = SeparableForm::new(FormKind::BilinearK, vec![3], tk)?;
    let l = SeparableForm::new(FormKind::LinearL, vec![0, 1], tl)?;
    let j = SeparableForm::new(FormKind::LinearJ, vec![2], tj)?;
    let big = Theta::Tikhonov {
        weights: vec![0.1, 0.1, 0.01],
        target: vec![1.0, 1.0, 1.0],
        offset: 0.5 * s * obj.offset + 1.0,
    };
    let bx = ParameterBox::new(vec![0.5, 0.5, 0.0], vec![2.0, 2.0, 5.0])?;
    let mu_check = vec![1.0, 1.0, 1.0];
    let problem = ParametricProblem::new(a, k, l, j, big, bx, mu_check.clone())?;

    let coeffs = problem.a.coefficients(&mu_check);
    let refs: Vec<&CsrMatrix> = matrices[..3].iter().collect();
    let product = CsrMatrix::linear_combination(&coeffs, &refs)?;
    let store = AssembledStore::new(matrices, vectors, product)?;
    FomSystem::new(problem, store)
}

/// Two parameters: conductivity of the left block and heater power.
///
/// Ĵ is quadratic in the heater power and, with the default data, convex on
/// the whole box; the heater bound is active at the minimizer. Meant for
/// brute-force comparisons.
pub fn two_parameter_block(n: usize) -> Result<FomSystem> {
    let mesh = build_mesh(1.0, 1.0, n, n)?;
    let left = Rect { x0: 0.0, x1: 0.5, y0: 0.0, y1: 1.0 };
    let right = Rect { x0: 0.5, x1: 1.0, y0: 0.0, y1: 1.0 };
    let heater = Rect { x0: 0.0, x1: 0.25, y0: 0.25, y1: 0.75 };
    let d = Rect { x0: 0.5, x1: 0.75, y0: 0.25, y1: 0.75 };
    let boundary = IndicatorField::new(Role::Window, vec![Geometry::Boundary]);
    let obj = assemble_objective_components(
        &mesh,
        &IndicatorField::rect(Role::DomainOfInterest, d),
        &DesiredState::Constant(1.6),
    )?;
    let matrices = vec![
        assemble_stiffness_component(&mesh, &IndicatorField::rect(Role::Wall, left))?,
        assemble_stiffness_component(&mesh, &IndicatorField::rect(Role::Wall, right))?,
        assemble_boundary_mass_component(&mesh, &boundary)?,
        obj.mass_d,
    ];
    let vectors = vec![
        assemble_load_component(&mesh, &IndicatorField::rect(Role::Heater, heater), 1.0)?,
        assemble_load_component(&mesh, &boundary, 1.0)?,
        obj.moment_d.iter().map(|m| -m).collect(),
    ];
    let a = SeparableForm::new(
        FormKind::BilinearA,
        vec![0, 1, 2],
        vec![Theta::coordinate(0), Theta::constant(1.0), Theta::constant(2.0)],
    )?;
    let k = SeparableForm::new(FormKind::BilinearK, vec![3], vec![Theta::constant(0.5)])?;
    let l = SeparableForm::new(FormKind::LinearL, vec![0, 1], vec![Theta::coordinate(1), Theta::constant(2.0)])?;
    let j = SeparableForm::new(FormKind::LinearJ, vec![2], vec![Theta::constant(1.0)])?;
    let big = Theta::Tikhonov { weights: vec![0.5, 0.1], target: vec![1.3, 2.5], offset: 0.5 * obj.offset + 0.1 };
    let bx = ParameterBox::new(vec![0.5, 0.0], vec![2.0, 2.0])?;
    let mu_check = vec![1.0, 1.0];
    let problem = ParametricProblem::new(a, k, l, j, big, bx, mu_check.clone())?;
    let coeffs = problem.a.coefficients(&mu_check);
    let refs: Vec<&CsrMatrix> = matrices[..3].iter().collect();
    let product = CsrMatrix::linear_combination(&coeffs, &refs)?;
    FomSystem::new(problem, AssembledStore::new(matrices, vectors, product)?)
}
