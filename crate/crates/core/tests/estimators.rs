mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use trrb_core::estimators::{
    basic_estimates, delta_hessian, delta_mu, delta_sensitivity, estimate_report, largest_generalized_eigenvalue, zeta,
};
use trrb_core::fom::FomSystem;
use trrb_core::linalg::spectral_norm;
use trrb_core::model::{Deriv, FormKind, ParameterBox};
use trrb_core::rom::{EnrichmentStrategy, RomModel};

fn rom_with(fom: &FomSystem, mus: &[Vec<f64>]) -> RomModel {
    let mut rom = RomModel::new(fom).unwrap();
    for mu in mus {
        rom = rom.enrich(fom, mu, EnrichmentStrategy::Lagrangian).unwrap().0;
    }
    rom
}

/// Generalized eigenvalues of (A, K) via the Cholesky factor of K.
fn generalized_eigenvalues(a: &DMatrix<f64>, k: &DMatrix<f64>) -> DVector<f64> {
    let l = k.clone().cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let s = &li * a * li.transpose();
    ((&s + s.transpose()) * 0.5).symmetric_eigenvalues()
}

#[test]
fn coercivity_bound_examples() {
    let fom = toy(3, true);
    let rom = RomModel::new(&fom).unwrap();
    let b = rom.bundle();
    assert!((b.coercivity_lb(&[1.0, 1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    let k = fom.store().product().to_dense();
    for mu in random_mus(&fom, 5, 1) {
        let a = fom.operator(&mu).unwrap().to_dense();
        let lb = b.coercivity_lb(&mu).unwrap();
        assert!(lb <= generalized_eigenvalues(&a, &k).min() * (1.0 + 1e-12));
        let ub = b.continuity_ub(FormKind::BilinearA, Deriv::Value, &mu).unwrap();
        assert!(ub >= generalized_eigenvalues(&a, &k).max() * (1.0 - 1e-12));
    }
    let single = parameter_free_pde(2);
    let rom = RomModel::new(&single).unwrap();
    assert!((rom.bundle().coercivity_lb(&[0.1, 0.9]).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn continuity_bound_examples() {
    let fom = toy(3, false);
    let rom = RomModel::new(&fom).unwrap();
    let b = rom.bundle();
    let check = [1.0, 1.0, 1.0];
    assert!((b.continuity_ub(FormKind::BilinearA, Deriv::Value, &check).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(b.continuity_ub(FormKind::BilinearA, Deriv::Second(0, 1), &check).unwrap(), 0.0);
    assert_eq!(b.continuity_ub(FormKind::BilinearA, Deriv::Second(0, 0), &check).unwrap(), 0.0);
    // l = μ2·heater + 2·boundary: ∂_2 picks the heater dual norm, via a dense inverse
    let kinv = fom.store().product().to_dense().try_inverse().unwrap();
    let heater = DVector::from_column_slice(fom.vector(0));
    let dense_norm = heater.dot(&(&kinv * &heater)).sqrt();
    let g = b.continuity_ub(FormKind::LinearL, Deriv::Partial(2), &check).unwrap();
    assert!((g - dense_norm).abs() <= 1e-12 * dense_norm);
    assert_eq!(b.continuity_ub(FormKind::LinearL, Deriv::Partial(0), &check).unwrap(), 0.0);
    // k-form eigenvalue against the dense generalized eigenproblem
    let mass = fom.matrix(3).to_dense();
    let exact = generalized_eigenvalues(&mass, &fom.store().product().to_dense()).max();
    let power = largest_generalized_eigenvalue(&fom, fom.matrix(3));
    assert!((power - exact).abs() <= 1e-6 * exact, "{power} vs {exact}");
    assert!(b.k_eigenvalues()[0] == power);
}

#[test]
fn estimators_vanish_at_snapshots() {
    let fom = toy(6, true);
    let mus = random_mus(&fom, 3, 17);
    let rom = rom_with(&fom, &mus);
    for mu in &mus {
        let pt = rom.evaluate(mu).unwrap();
        let e = basic_estimates(&rom, &pt).unwrap();
        assert!(e.delta_pr <= 1e-10 && e.delta_du <= 1e-10 && e.delta_j <= 1e-10, "{e:?}");
    }
    // parameter-independent PDE: the full hessian bound vanishes at the snapshot
    let free = parameter_free_pde(4);
    let rom = RomModel::initialize(&free, &[0.4, 0.4]).unwrap();
    let pt = rom.evaluate(&[0.4, 0.4]).unwrap();
    let h = delta_hessian(&rom, &pt).unwrap();
    assert!(h.total <= 1e-10, "{}", h.total);
    for i in 0..2 {
        let s = delta_sensitivity(&rom, &pt, i, None).unwrap();
        assert!(s.delta_dpr <= 1e-10 && s.delta_ddu <= 1e-10);
    }
}

#[test]
fn prop_bounds_dominate_true_errors() {
    let tol = 1e-11;
    for nonaffine in [false, true] {
        let fom = toy(8, nonaffine);
        let rom = rom_with(&fom, &random_mus(&fom, 4, 100));
        let store = fom.store();
        let mut worst_eff: f64 = f64::INFINITY;
        for mu in random_mus(&fom, 20, 200) {
            let fp = fom.evaluate(&mu).unwrap();
            let pt = rom.evaluate(&mu).unwrap();
            let e = basic_estimates(&rom, &pt).unwrap();
            let err_u = store.energy_norm(&sub(&fp.u, &rom.lift_primal(&pt.u)));
            let err_p = store.energy_norm(&sub(&fp.p, &rom.lift_dual(&pt.p)));
            let err_j = (fom.objective(&mu, &fp.u) - rom.objective_ncd(&pt)).abs();
            assert!(e.delta_pr + tol >= err_u, "pr {} < {err_u}", e.delta_pr);
            assert!(e.delta_du + tol >= err_p, "du {} < {err_p}", e.delta_du);
            assert!(e.delta_j + tol >= err_j, "J {} < {err_j}", e.delta_j);
            if err_u > 0.0 {
                let eff = e.delta_pr / err_u;
                assert!(eff.is_finite());
                worst_eff = worst_eff.min(eff);
            }
            for i in 0..3 {
                let mut nu = vec![0.0; 3];
                nu[i] = 1.0;
                let (du, dp) = fom.sensitivities(&fp, &nu).unwrap();
                let s = rom.sensitivities(&pt, &nu).unwrap();
                let est = delta_sensitivity(&rom, &pt, i, Some(&s)).unwrap();
                let e_du = store.energy_norm(&sub(&du, &rom.lift_primal(&s.du)));
                let e_dp = store.energy_norm(&sub(&dp, &rom.lift_dual(&s.dp)));
                assert!(est.delta_dpr + tol >= e_du, "dpr[{i}] {} < {e_du}", est.delta_dpr);
                assert!(est.delta_ddu + tol >= e_dp, "ddu[{i}] {} < {e_dp}", est.delta_ddu);
            }
            let hh = fom.full_hessian(&fp).unwrap();
            let hr = rom.full_hessian(&pt).unwrap();
            let bound = delta_hessian(&rom, &pt).unwrap();
            let err_h = spectral_norm(&(hh - hr));
            assert!(bound.total + tol >= err_h, "H {} < {err_h}", bound.total);
            // auxiliary bound (i)
            assert!(bound.aux[0].z + tol >= pt.z.norm());
            assert!(bound.aux[0].w + tol >= pt.w.norm());
        }
        assert!(worst_eff >= 1.0 - 1e-9);
    }
}

#[test]
fn hessian_bound_two_code_paths() {
    let fom = toy(6, true);
    let rom = rom_with(&fom, &random_mus(&fom, 2, 31));
    let mu = random_mus(&fom, 1, 32).remove(0);
    let pt = rom.evaluate(&mu).unwrap();
    let got = delta_hessian(&rom, &pt).unwrap();
    // independent re-evaluation grouped by constant instead of by estimator
    let g = rom.bundle().constants(&mu).unwrap();
    let b = basic_estimates(&rom, &pt).unwrap();
    let a = g.coercivity;
    let (nu, np) = (pt.u.norm(), pt.p.norm());
    let z = b.residual_primal / a;
    let w = (b.residual_dual + 2.0 * g.k * z) / a;
    for l in 0..3 {
        let mut e = vec![0.0; 3];
        e[l] = 1.0;
        let s = rom.sensitivities(&pt, &e).unwrap();
        let se = delta_sensitivity(&rom, &pt, l, Some(&s)).unwrap();
        let (ndu, ndp) = (s.du.norm(), s.dp.norm());
        let dz = (se.residual_primal + g.da[l] * z) / a;
        let dw = (se.residual_dual + 2.0 * g.k * dz + 2.0 * g.dk[l] * z + g.da[l] * w) / a;
        for i in 0..3 {
            let (x, y, sp, sd) = (b.delta_pr, b.delta_du, se.delta_dpr, se.delta_ddu);
            let by_ddj = g.ddj[(i, l)] * (x + z);
            let by_ddk = g.ddk[(i, l)] * (2.0 * x * nu + x * x + 2.0 * z * nu);
            let by_dda = g.dda[(i, l)] * (x * np + y * nu + x * y + w * nu + z * np);
            let by_ddl = g.ddl[(i, l)] * (y + w);
            let by_dj = g.dj[i] * (sp + dz);
            let by_dk = g.dk[i] * (2.0 * x * ndu + 2.0 * sp * nu + 2.0 * x * sp + 2.0 * z * ndu + 2.0 * dz * nu);
            let by_da = g.da[i]
                * (x * ndp + sp * np + y * ndu + sd * nu + x * sd + sp * y + ndu * w + nu * dw + z * ndp + dz * np);
            let by_dl = g.dl[i] * (sd + dw);
            let expected = by_ddj + by_ddk + by_dda + by_ddl + by_dj + by_dk + by_da + by_dl;
            let v = got.entries[(i, l)];
            assert!((v - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "({i},{l}) {v} {expected}");
        }
    }
    assert!(got.entries.iter().all(|&x| x >= 0.0));
}

#[test]
fn exact_sensitivity_snapshot_kills_the_residual_term() {
    let fom = toy(6, true);
    let mu = [1.3, 0.9, 2.2];
    let rom = RomModel::initialize(&fom, &mu).unwrap();
    let fp = fom.evaluate(&mu).unwrap();
    let nu = [1.0, 0.0, 0.0];
    let (du, dp) = fom.sensitivities(&fp, &nu).unwrap();
    let (rich, _, _) = rom.extended(&fom, &[du], &[dp]).unwrap();
    let pt = rich.evaluate(&mu).unwrap();
    let est = delta_sensitivity(&rich, &pt, 0, None).unwrap();
    assert!(est.residual_primal <= 1e-10 && est.residual_dual <= 1e-10, "{est:?}");
    let before = delta_sensitivity(&rom, &rom.evaluate(&mu).unwrap(), 0, None).unwrap();
    assert!(before.residual_primal > 1e-6);
}

#[test]
fn report_entries_are_nonnegative() {
    let fom = toy(4, true);
    let rom = rom_with(&fom, &random_mus(&fom, 2, 3));
    let pt = rom.evaluate(&random_mus(&fom, 1, 4)[0]).unwrap();
    let r = estimate_report(&rom, &pt, true).unwrap();
    let all = [r.delta_pr, r.delta_du, r.delta_j, r.delta_h.unwrap()];
    assert!(all.iter().chain(&r.delta_dpr).chain(&r.delta_ddu).all(|&x| x >= 0.0 && x.is_finite()));
}

#[test]
fn stale_points_are_rejected() {
    let fom = toy(4, false);
    let rom = RomModel::initialize(&fom, &[1.0, 1.0, 1.0]).unwrap();
    let pt = rom.evaluate(&[1.2, 1.2, 1.2]).unwrap();
    let (bigger, _) = rom.enrich(&fom, &[1.8, 0.6, 4.0], EnrichmentStrategy::Lagrangian).unwrap();
    assert!(matches!(basic_estimates(&bigger, &pt), Err(trrb_core::Error::Dimension { .. })));
}

#[test]
fn zeta_cases_and_parameter_bound() {
    let bx = ParameterBox::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
    let z = zeta(&[0.0, 1.0, 0.5], &[2.0, -3.0, 0.25], &bx);
    assert_eq!(z, vec![0.0, 0.0, -0.25]);
    let z = zeta(&[0.0, 1.0, 0.5], &[-2.0, 3.0, 0.0], &bx);
    assert_eq!(z, vec![2.0, -3.0, 0.0]);
    let free = parameter_free_pde(3);
    let b = delta_mu(&free, &[0.3, 0.7]).unwrap();
    assert_eq!(b.bound, Some(0.0));
    assert!((b.lambda_min - 0.5).abs() < 1e-12);
    let b = delta_mu(&free, &[0.35, 0.7]).unwrap();
    // quadratic: 2‖∇‖/λ_min = 2·(2·0.05)/0.5
    assert!((b.bound.unwrap() - 0.4).abs() < 1e-12);
}
