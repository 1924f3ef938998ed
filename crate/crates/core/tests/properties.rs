//! Randomised invariants over generated instances.

use grokflow_core::flows::{integrate_gd, integrate_regularized, IntegratorSpec, RecordSchedule};
use grokflow_core::oracles::{l1_min_enumerate, l1_min_interpolant, srebro_gap, L1Options, LinRegClosedForm};
use grokflow_core::problems::{fd_check, regularized_value, DiagonalNet, LinearRegression, MatrixCompletion, Objective};
use grokflow_core::rng::{gaussian_matrix, gaussian_vector, sample_cells, seeded};
use grokflow_core::spectral::{nullspace_projector, pinv_apply, svd, sym_eig, SpectralTolerances};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn psd(seed: u64, d: usize, r: usize) -> DMatrix<f64> {
    let b = gaussian_matrix::<f64>(&mut seeded(seed), d, r, 1.0);
    &b * b.transpose()
}

fn masked(seed: u64, n: usize, m: usize, rank: usize, fraction: f64) -> MatrixCompletion<f64> {
    let mut g = seeded(seed);
    let target = gaussian_matrix::<f64>(&mut g, n, 2, 1.0) * gaussian_matrix::<f64>(&mut g, m, 2, 1.0).transpose();
    let count = ((n * m) as f64 * fraction).ceil() as usize;
    MatrixCompletion::new(target, sample_cells(&mut g, n, m, count), rank).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_an_orthogonal_projection(seed in any::<u64>(), d in 1usize..=24, r in 0usize..24) {
        let r = r % d;
        let h = psd(seed, d, r);
        let pr = nullspace_projector(&h, SpectralTolerances::default()).unwrap();
        let p = &pr.projector;
        prop_assert!((p * p - p).norm() <= 1e-10);
        prop_assert!((p - p.transpose()).norm() <= 1e-12);
        prop_assert_eq!(pr.gap_index, d - r);
        prop_assert!((p.trace() - (d - r) as f64).abs() <= 1e-9);
        prop_assert!((&h * p).norm() <= 1e-9 * (1.0 + h.norm()));
    }

    #[test]
    fn svd_and_eigen_agree_on_psd(seed in any::<u64>(), d in 1usize..=16, r in 1usize..=16) {
        let h = psd(seed, d, r.min(d));
        let e = sym_eig(&h).unwrap();
        let s = svd(&h).unwrap();
        let scale = h.norm().max(1.0);
        for i in 0..d {
            prop_assert!((s.singular_values[i] - e.eigenvalues[d - 1 - i].max(0.0)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn pseudo_inverse_solution_avoids_the_kernel(seed in any::<u64>(), n in 1usize..=6, d in 2usize..=12, r in 1usize..=6) {
        let mut g = seeded(seed);
        let r = r.min(n).min(d);
        let m = gaussian_matrix::<f64>(&mut g, n, r, 1.0) * gaussian_matrix::<f64>(&mut g, d, r, 1.0).transpose();
        let y = gaussian_vector::<f64>(&mut g, n, 1.0);
        let x = pinv_apply(&m, &y).unwrap();
        let ker = nullspace_projector(&(m.transpose() * &m), SpectralTolerances::default()).unwrap();
        prop_assert!(ker.project(&x).norm() <= 1e-8 * y.norm().max(1e-300));
        // normal equations
        prop_assert!((m.transpose() * (&m * &x - &y)).norm() <= 1e-8 * (1.0 + m.norm().powi(2) * y.norm()));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences(seed in any::<u64>()) {
        let mut g = seeded(seed);
        let x = gaussian_matrix::<f64>(&mut g, 3, 6, 1.0);
        let y = gaussian_vector::<f64>(&mut g, 3, 1.0);
        let lr = LinearRegression::new(x.clone(), y.clone()).unwrap();
        let dn = DiagonalNet::new(x, y).unwrap();
        let mc = masked(seed, 4, 5, 3, 0.6);
        for (p, w) in [
            (&lr as &dyn Objective<f64>, gaussian_vector::<f64>(&mut g, 6, 1.0)),
            (&dn, gaussian_vector::<f64>(&mut g, 12, 1.0)),
            (&mc, gaussian_vector::<f64>(&mut g, 27, 1.0)),
        ] {
            let r = fd_check(p, &w);
            prop_assert!(r.grad_rel_error <= 1e-5, "gradient {}", r.grad_rel_error);
            prop_assert!(r.hess_rel_error <= 1e-5, "hessian {}", r.hess_rel_error);
        }
    }

    #[test]
    fn factor_rotation_leaves_the_loss_unchanged(seed in any::<u64>()) {
        let mc = masked(seed, 5, 4, 3, 0.7);
        let mut g = seeded(seed ^ 1);
        let w = gaussian_vector::<f64>(&mut g, mc.dim(), 1.0);
        let (u, v) = mc.unpack(&w);
        let q = gaussian_matrix::<f64>(&mut g, 3, 3, 1.0).qr().q();
        let rotated = MatrixCompletion::pack(&(&u * &q), &(&v * &q));
        prop_assert!((mc.value(&rotated) - mc.value(&w)).abs() <= 1e-10 * (1.0 + mc.value(&w)));
        prop_assert!((mc.reconstruction(&rotated) - mc.reconstruction(&w)).norm() <= 1e-10 * (1.0 + u.norm() * v.norm()));
    }

    #[test]
    fn srebro_inequality(seed in any::<u64>(), n in 1usize..=6, m in 1usize..=6, r in 1usize..=4) {
        let mut g = seeded(seed);
        let u = gaussian_matrix::<f64>(&mut g, n, r, 1.0);
        let v = gaussian_matrix::<f64>(&mut g, m, r, 1.0);
        prop_assert!(srebro_gap(&u, &v).unwrap() >= -1e-10 * (1.0 + u.norm_squared() + v.norm_squared()));
    }

    #[test]
    fn l1_oracle_matches_enumeration(seed in any::<u64>(), n in 1usize..=4, extra in 1usize..=6) {
        let mut g = seeded(seed);
        let d = n + extra;
        let x = gaussian_matrix::<f64>(&mut g, n, d, 1.0);
        let y = gaussian_vector::<f64>(&mut g, n, 1.0);
        let s = l1_min_interpolant(&x, &y, L1Options::default()).unwrap();
        let (best, _) = l1_min_enumerate(&x, &y).unwrap();
        prop_assert!(s.l1_norm <= best + 1e-6, "admm {} enumeration {best}", s.l1_norm);
        prop_assert!((&x * &s.beta - &y).norm() <= 1e-6 * (1.0 + y.norm()));
    }

    #[test]
    fn regularised_flow_matches_closed_form(seed in any::<u64>(), lambda_exp in 0u32..=4) {
        let mut g = seeded(seed);
        let x = gaussian_matrix::<f64>(&mut g, 3, 7, 1.0);
        let y = gaussian_vector::<f64>(&mut g, 3, 1.0);
        let w0 = gaussian_vector::<f64>(&mut g, 7, 1.0);
        let lambda = if lambda_exp == 0 { 0.0 } else { 10f64.powi(-(lambda_exp as i32)) };
        let lr = LinearRegression::new(x.clone(), y.clone()).unwrap();
        let cf = LinRegClosedForm::new(&x, &y, &w0).unwrap();
        let spec = IntegratorSpec::default().with_record(RecordSchedule::LogSpaced { points: 20, first: Some(1e-2) });
        let tr = integrate_regularized(&lr, &w0, lambda, 30.0, &spec).unwrap();
        for (t, w) in tr.times().iter().zip(tr.states()) {
            let exact = cf.eval(*t, lambda);
            prop_assert!((w - &exact).norm() <= 1e-6 * exact.norm().max(1.0));
        }
    }

    #[test]
    fn small_step_descent_never_increases_the_objective(seed in any::<u64>()) {
        let mc = masked(seed, 4, 4, 3, 0.75);
        let mut g = seeded(seed ^ 2);
        let w0 = gaussian_vector::<f64>(&mut g, mc.dim(), 0.5);
        let lambda = 1e-2;
        let tr = integrate_gd(&mc, &w0, lambda, 1e-3, 5000, &RecordSchedule::Stride(50)).unwrap();
        let f0 = regularized_value(&mc, &w0, lambda);
        for pair in tr.states().windows(2) {
            let (a, b) = (regularized_value(&mc, &pair[0], lambda), regularized_value(&mc, &pair[1], lambda));
            prop_assert!(b <= a + 1e-10 * (1.0 + f0));
        }
    }
}

#[test]
fn balanced_factors_close_the_srebro_gap() {
    let m = gaussian_matrix::<f64>(&mut seeded(3), 6, 4, 1.0);
    let s = svd(&m).unwrap();
    let root = DMatrix::from_diagonal(&s.singular_values.map(f64::sqrt));
    let gap = srebro_gap(&(&s.u * &root), &(&s.v * &root)).unwrap();
    assert!(gap.abs() <= 1e-12 * m.norm_squared(), "gap {gap}");
}

#[test]
fn diagonal_net_sign_flips() {
    let mut g = seeded(4);
    let dn = DiagonalNet::new(gaussian_matrix::<f64>(&mut g, 4, 8, 1.0), gaussian_vector::<f64>(&mut g, 4, 1.0)).unwrap();
    let w = gaussian_vector::<f64>(&mut g, 16, 1.0);
    for j in 0..16 {
        let mut f = w.clone();
        f[j] = -f[j];
        assert!((dn.value(&f) - dn.value(&w)).abs() <= 1e-12);
    }
    let beta: DVector<f64> = dn.beta(&w);
    assert_eq!(beta.len(), 8);
}
