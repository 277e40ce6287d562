#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use trrb_core::fem::{
    assemble_boundary_mass_component, assemble_load_component, assemble_mass_component, assemble_stiffness_component,
    build_mesh, AssembledStore, Geometry, IndicatorField, Rect, Role,
};
use trrb_core::fom::FomSystem;
use trrb_core::linalg::CsrMatrix;
use trrb_core::model::{FormKind, ParameterBox, ParametricProblem, SeparableForm, Theta};
use trrb_core::toy::{thermal_block, ToyOptions};

pub fn toy(n: usize, nonaffine: bool) -> FomSystem {
    thermal_block(&ToyOptions { n, nonaffine, ..Default::default() }).unwrap()
}

pub fn random_mus(fom: &FomSystem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let bx = &fom.problem().bx;
    (0..count).map(|_| bx.from_unit(&(0..bx.dim()).map(|_| rng.random::<f64>()).collect::<Vec<_>>())).collect()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Every PDE coefficient constant; only the Tikhonov term depends on μ.
pub fn parameter_free_pde(n: usize) -> FomSystem {
    parameter_free_pde_with(n, vec![2.0, 0.5], vec![0.3, 0.7], 1.0)
}

/// As [`parameter_free_pde`] with a chosen Tikhonov term; negative weights make Ĵ concave.
pub fn parameter_free_pde_with(n: usize, weights: Vec<f64>, target: Vec<f64>, offset: f64) -> FomSystem {
    let mesh = build_mesh(1.0, 1.0, n, n).unwrap();
    let everywhere = IndicatorField::everywhere(Role::Background);
    let boundary = IndicatorField::new(Role::Window, vec![Geometry::Boundary]);
    let d = IndicatorField::rect(Role::DomainOfInterest, Rect { x0: 0.25, x1: 0.75, y0: 0.25, y1: 0.75 });
    let s = assemble_stiffness_component(&mesh, &everywhere).unwrap();
    let b = assemble_boundary_mass_component(&mesh, &boundary).unwrap();
    let m = assemble_mass_component(&mesh, &d).unwrap();
    let load = assemble_load_component(&mesh, &everywhere, 1.0).unwrap();
    let jv: Vec<f64> = m.matvec(&vec![-1.0; mesh.num_dofs()]);
    let product = CsrMatrix::linear_combination(&[1.0, 1.0], &[&s, &b]).unwrap();
    let store = AssembledStore::new(vec![s, b, m], vec![load, jv], product).unwrap();
    let prob = ParametricProblem::new(
        SeparableForm::new(FormKind::BilinearA, vec![0, 1], vec![Theta::constant(1.0), Theta::constant(1.0)]).unwrap(),
        SeparableForm::new(FormKind::BilinearK, vec![2], vec![Theta::constant(0.5)]).unwrap(),
        SeparableForm::new(FormKind::LinearL, vec![0], vec![Theta::constant(3.0)]).unwrap(),
        SeparableForm::new(FormKind::LinearJ, vec![1], vec![Theta::constant(1.0)]).unwrap(),
        Theta::Tikhonov { weights, target, offset },
        ParameterBox::new(vec![0.0; 2], vec![1.0; 2]).unwrap(),
        vec![0.5, 0.5],
    )
    .unwrap();
    FomSystem::new(prob, store).unwrap()
}

/// The M-dimensional unit vectors, which span V_h.
pub fn unit_vectors(dofs: usize) -> Vec<Vec<f64>> {
    (0..dofs)
        .map(|i| {
            let mut e = vec![0.0; dofs];
            e[i] = 1.0;
            e
        })
        .collect()
}
