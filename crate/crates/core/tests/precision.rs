//! The same entry points instantiated at f32, checked against f64.

use grokflow_core::flows::{integrate_gd, integrate_regularized, phi_map, IntegratorSpec, PhiStop, RecordSchedule};
use grokflow_core::manifold::kkt_residual;
use grokflow_core::oracles::{srebro_gap, LinRegClosedForm};
use grokflow_core::problems::{fd_check, DiagonalNet, LinearRegression, MatrixCompletion, Objective};
use grokflow_core::rng::{gaussian_matrix, gaussian_vector, seeded};
use grokflow_core::spectral::{nullspace_projector, pinv_apply, svd, sym_eig, SpectralTolerances};
use grokflow_core::Real;
use nalgebra::{DMatrix, DVector};

fn narrow(m: &DMatrix<f64>) -> DMatrix<f32> {
    m.map(|x| x as f32)
}

fn widen(v: &DVector<f32>) -> DVector<f64> {
    v.map(f64::from)
}

fn linreg<T: Real>(seed: u64) -> (LinearRegression<T>, DVector<T>) {
    let mut g = seeded(seed);
    let x = gaussian_matrix::<T>(&mut g, 4, 9, 1.0);
    let y = gaussian_vector::<T>(&mut g, 4, 1.0);
    let w0 = gaussian_vector::<T>(&mut g, 9, 1.0);
    (LinearRegression::new(x, y).unwrap(), w0)
}

#[test]
fn generators_agree_across_precisions() {
    let a = gaussian_matrix::<f64>(&mut seeded(1), 3, 3, 1.0);
    let b = gaussian_matrix::<f32>(&mut seeded(1), 3, 3, 1.0);
    assert!((narrow(&a) - b).norm() <= 1e-6);
}

#[test]
fn spectral_routines_in_single_precision() {
    let b = gaussian_matrix::<f64>(&mut seeded(2), 8, 3, 1.0);
    let h64 = &b * b.transpose();
    let h32 = narrow(&h64);
    let e = sym_eig(&h32).unwrap();
    let s = svd(&h32).unwrap();
    let e64 = sym_eig(&h64).unwrap();
    for i in 0..8 {
        assert!((f64::from(e.eigenvalues[i]) - e64.eigenvalues[i]).abs() <= 1e-4 * h64.norm());
        assert!((f64::from(s.singular_values[i]) - e64.eigenvalues[7 - i].max(0.0)).abs() <= 1e-4 * h64.norm());
    }
    let pr = nullspace_projector(&h32, SpectralTolerances::default()).unwrap();
    assert_eq!(pr.gap_index, 5);
    let p = &pr.projector;
    assert!((p * p - p).norm() <= 1e-5);
    let y = gaussian_vector::<f32>(&mut seeded(3), 8, 1.0);
    let x = pinv_apply(&h32, &y).unwrap();
    assert!(pr.project(&x).norm() <= 1e-3 * y.norm());
}

#[test]
fn derivatives_in_single_precision() {
    let (lr, w) = linreg::<f32>(4);
    let r = fd_check(&lr, &w);
    assert!(r.grad_rel_error <= 1e-2, "{}", r.grad_rel_error);
    let mut g = seeded(5);
    let dn = DiagonalNet::new(gaussian_matrix::<f32>(&mut g, 3, 5, 1.0), gaussian_vector::<f32>(&mut g, 3, 1.0)).unwrap();
    let w = gaussian_vector::<f32>(&mut g, 10, 1.0);
    assert!(fd_check(&dn, &w).grad_rel_error <= 1e-2);
}

#[test]
fn flow_in_single_precision_tracks_double() {
    let (lr32, w32) = linreg::<f32>(6);
    let (lr64, w64) = linreg::<f64>(6);
    let spec = IntegratorSpec::rk45(1e-5, 1e-6).with_record(RecordSchedule::LogSpaced { points: 20, first: Some(1e-2) });
    let a = integrate_regularized(&lr32, &w32, 1e-2, 20.0, &spec).unwrap();
    let b = integrate_regularized(&lr64, &w64, 1e-2, 20.0, &spec).unwrap();
    let cf = LinRegClosedForm::new(lr64.design(), lr64.targets(), &w64).unwrap();
    for (t, w) in a.times().iter().zip(a.states()) {
        let exact = cf.eval(f64::from(*t), 1e-2);
        assert!((widen(w) - &exact).norm() <= 1e-3 * exact.norm().max(1.0));
    }
    assert_eq!(a.times().len(), b.times().len());
    assert!(!a.to_csv().is_empty());
}

#[test]
fn gradient_descent_and_limit_map_in_single_precision() {
    let mut g = seeded(7);
    let target = gaussian_matrix::<f32>(&mut g, 4, 1, 1.0) * gaussian_matrix::<f32>(&mut g, 4, 1, 1.0).transpose();
    let mc = MatrixCompletion::full(target, 2).unwrap();
    let w0 = gaussian_vector::<f32>(&mut g, mc.dim(), 0.5);
    let tr = integrate_gd(&mc, &w0, 0.0, 1e-2, 20_000, &RecordSchedule::Stride(1000)).unwrap();
    let end = tr.final_state().unwrap();
    assert!(mc.value(end) <= 1e-6 * mc.value(&w0).max(1.0), "loss {}", mc.value(end));
    let (u, v) = mc.unpack(end);
    assert!(srebro_gap(&u, &v).unwrap() >= -1e-4);

    let (lr, w0) = linreg::<f32>(8);
    let stop = PhiStop { grad_tol: Some(1e-4), max_time: Some(1e4) };
    let phi = phi_map(&lr, &w0, stop, &IntegratorSpec::rk45(1e-5, 1e-6)).unwrap();
    assert!(phi.converged);
    assert!(kkt_residual(&lr, &phi.point).unwrap().value.is_finite());
}
