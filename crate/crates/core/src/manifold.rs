//! Slow-limit dynamics on the critical manifold `M ⊂ ∇F⁻¹(0)`.
//!
//! On `M` the tangent space is `Ker ∇²F(w)`, so the Riemannian gradient of
//! `ℓ₂(w) = ½‖w‖²` is the projection `P_{Ker ∇²F(w)} w`.

use std::cell::{Cell, RefCell};

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::flows::solver::{drive, Control};
use crate::flows::{phi_map, FlowError, FlowFailure, FlowResult, IntegratorSpec, PhiStop, RecordSchedule, Timescale, Trajectory};
use crate::problems::{check_param, Objective};
use crate::scalar::Real;
use crate::spectral::{probe_from_eig, sym_eig, symmetrize, SpectralProbe, SpectralTolerances};

pub const KKT_RESIDUAL: &str = "kkt_residual";
pub const ETA_ESTIMATE: &str = "eta_estimate";
pub const GAP_INDEX: &str = "gap_index";

/// `1e-8 · (1 + η)`, or `1e-8` when the spectrum has no nonzero part.
pub fn default_on_manifold_tol<T: Real>(eta: T) -> T {
    scaled_tol(1e-8, eta)
}

/// `1e-10 · (1 + η)`: stationarity target of each retraction.
pub fn default_retraction_tol<T: Real>(eta: T) -> T {
    scaled_tol(1e-10, eta)
}

fn scaled_tol<T: Real>(base: f64, eta: T) -> T {
    if eta.is_finite() {
        T::lit(base) * (T::one() + eta)
    } else {
        T::lit(base)
    }
}

pub fn probe<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w: &DVector<T>,
    tol: SpectralTolerances<T>,
) -> Result<SpectralProbe<T>> {
    check_param(p.dim(), w)?;
    let eig = sym_eig(&symmetrize(&p.hessian(w)))?;
    Ok(probe_from_eig(eig, tol))
}

/// A point accepted as lying on the critical manifold.
#[derive(Debug, Clone)]
pub struct ManifoldPoint<T: Real> {
    pub state: DVector<T>,
    pub probe: SpectralProbe<T>,
    pub residual_grad_norm: T,
    /// `2 √((F(w) − F*)/η)` with the `F*` given at construction.
    pub quadratic_growth_distance: Option<T>,
}

impl<T: Real> ManifoldPoint<T> {
    /// Default spectral tolerances, `on_manifold_tol = 1e-8·(1+η)`, `F* = 0`.
    pub fn new<P: Objective<T> + ?Sized>(p: &P, w: DVector<T>) -> Result<Self> {
        Self::with_options(p, w, SpectralTolerances::default(), None, T::zero())
    }

    pub fn with_options<P: Objective<T> + ?Sized>(
        p: &P,
        w: DVector<T>,
        tol: SpectralTolerances<T>,
        on_manifold_tol: Option<T>,
        f_star: T,
    ) -> Result<Self> {
        let probe = probe(p, &w, tol)?;
        let g = p.gradient(&w).norm();
        let accept = on_manifold_tol.unwrap_or_else(|| default_on_manifold_tol(probe.eta_estimate));
        if !(g <= accept) {
            return Err(Error::OffManifold {
                residual_grad_norm: g.as_f64(),
                tolerance: accept.as_f64(),
            });
        }
        if probe.gap_index == 0 {
            return Err(invalid("Hessian has trivial kernel: the critical set is isolated here"));
        }
        if probe.saddle {
            log::warn!("start point has a negative Hessian eigenvalue; Morse–Bott structure fails");
        }
        let quadratic_growth_distance = if probe.eta_estimate.is_finite() {
            Some(quadratic_growth_distance(p, &w, f_star, probe.eta_estimate)?)
        } else {
            None
        };
        Ok(Self {
            state: w,
            probe,
            residual_grad_norm: g,
            quadratic_growth_distance,
        })
    }
}

/// `P_{Ker ∇²F(w)} w` at a point within the on-manifold tolerance.
pub fn riemannian_grad_l2<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w: &DVector<T>,
    tol: SpectralTolerances<T>,
) -> Result<DVector<T>> {
    let pr = probe(p, w, tol)?;
    let g = p.gradient(w).norm();
    let accept = default_on_manifold_tol(pr.eta_estimate);
    if !(g <= accept) {
        return Err(Error::OffManifold {
            residual_grad_norm: g.as_f64(),
            tolerance: accept.as_f64(),
        });
    }
    Ok(pr.project(w))
}

/// KKT residual of `min_{w∈M} ‖w‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual<T> {
    /// `max(projected_norm, grad_norm)`.
    pub value: T,
    /// `‖P_{Ker ∇²F(w)} w‖`.
    pub projected_norm: T,
    /// `‖∇F(w)‖`.
    pub grad_norm: T,
}

pub fn kkt_residual<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> Result<KktResidual<T>> {
    kkt_residual_with(p, w, SpectralTolerances::default())
}

pub fn kkt_residual_with<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w: &DVector<T>,
    tol: SpectralTolerances<T>,
) -> Result<KktResidual<T>> {
    let pr = probe(p, w, tol)?;
    Ok(kkt_from_probe(p, w, &pr))
}

fn kkt_from_probe<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>, pr: &SpectralProbe<T>) -> KktResidual<T> {
    let projected_norm = pr.project(w).norm();
    let grad_norm = p.gradient(w).norm();
    KktResidual {
        value: projected_norm.max(grad_norm),
        projected_norm,
        grad_norm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseBott<T> {
    /// Smallest Hessian eigenvalue above the zero threshold.
    pub eta: T,
    /// Nullity of the Hessian.
    pub gap_index: usize,
    pub saddle: bool,
}

pub fn morse_bott_gap<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> Result<MorseBott<T>> {
    let pr = probe(p, w, SpectralTolerances::default())?;
    if pr.saddle {
        log::warn!("negative Hessian curvature: not a Morse–Bott minimum");
    }
    Ok(MorseBott {
        eta: pr.eta_estimate,
        gap_index: pr.gap_index,
        saddle: pr.saddle,
    })
}

/// `2 √((F(w) − F*)/η)`, an upper estimate of `d(w, M)`.
pub fn quadratic_growth_distance<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w: &DVector<T>,
    f_star: T,
    eta: T,
) -> Result<T> {
    check_param(p.dim(), w)?;
    if !(eta > T::zero()) {
        return Err(invalid("eta must be positive"));
    }
    let f = p.value(w);
    if f < f_star - T::lit(1e-12) {
        return Err(Error::InconsistentMinimum {
            value: f.as_f64(),
            f_star: f_star.as_f64(),
        });
    }
    let gap = (f - f_star).max(T::zero());
    Ok(T::lit(2.0) * (gap / eta).sqrt())
}

/// Pull-back onto `M` by short unregularised gradient-flow runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Retraction {
    /// Retract after this many accepted steps (and before every recorded sample).
    pub every: usize,
    /// Stationarity target; defaults to `1e-10·(1+η)` with the current `η`.
    pub gf_tol: Option<f64>,
    /// Flow-time budget of one pull-back.
    pub max_time: f64,
    pub spec: IntegratorSpec,
}

impl Default for Retraction {
    fn default() -> Self {
        Self {
            every: 5,
            gf_tol: None,
            max_time: 1e6,
            spec: IntegratorSpec::default(),
        }
    }
}

/// Integrates `ẇ = −P_{Ker ∇²F(w)} w` from `start` on `[0, horizon]`.
///
/// The kernel threshold is `η/10` from the latest probe, refreshed after
/// every retraction. A change of nullity halts the run with a warning and the
/// samples so far. Output lives on the slow clock with `λ = 0` and carries the
/// extra series `kkt_residual`, `eta_estimate`, `gap_index`.
pub fn integrate_riemannian_flow<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    start: &ManifoldPoint<T>,
    horizon: f64,
    spec: &IntegratorSpec,
    retraction: &Retraction,
) -> FlowResult<T> {
    check_param(p.dim(), &start.state)?;
    spec.validate()?;
    retraction.spec.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive and finite, got {horizon}")).into());
    }
    if retraction.every == 0 {
        return Err(invalid("retraction period must be at least 1").into());
    }
    let threshold_for = |pr: &SpectralProbe<T>| {
        if pr.eta_estimate.is_finite() {
            pr.eta_estimate / T::lit(10.0)
        } else {
            pr.threshold
        }
    };
    let gap0 = start.probe.gap_index;
    let tau = Cell::new(threshold_for(&start.probe));
    let eta = Cell::new(start.probe.eta_estimate);
    let tau_history = RefCell::new(vec![(T::zero(), tau.get())]);
    let warnings = RefCell::new(Vec::<String>::new());
    let saddle_warned = Cell::new(start.probe.saddle);

    let tangent = |w: &DVector<T>, out: &mut DVector<T>| {
        let h = symmetrize(&p.hessian(w));
        match sym_eig(&h) {
            Ok(eig) => {
                let pr = probe_from_eig(eig, SpectralTolerances::absolute(tau.get()));
                out.copy_from(&(-pr.project(w)));
            }
            Err(_) => out.fill(T::lit(f64::NAN)),
        }
    };

    let hook = |t: T, w: &mut DVector<T>, steps: usize, recording: bool| {
        if steps % retraction.every != 0 && !recording {
            return Ok(Control::Continue);
        }
        let gf_tol = retraction.gf_tol.unwrap_or_else(|| default_retraction_tol(eta.get()).as_f64());
        let stop = PhiStop {
            grad_tol: Some(gf_tol),
            max_time: Some(retraction.max_time),
        };
        let back = phi_map(p, w, stop, &retraction.spec).map_err(|e| e.failure)?;
        if !back.converged {
            return Err(FlowFailure::ManifoldEscape {
                time: t.as_f64(),
                grad_norm: back.grad_norm.as_f64(),
                tolerance: gf_tol,
            });
        }
        w.copy_from(&back.point);
        let pr = probe(p, w, SpectralTolerances::absolute(tau.get())).map_err(FlowFailure::Problem)?;
        if pr.saddle && !saddle_warned.get() {
            saddle_warned.set(true);
            warnings
                .borrow_mut()
                .push(format!("negative Hessian curvature at t = {:e}: Morse–Bott assumption violated", t.as_f64()));
        }
        if pr.gap_index != gap0 {
            warnings.borrow_mut().push(format!(
                "Hessian nullity changed from {gap0} to {} at t = {:e}: singular stratum reached, run halted",
                pr.gap_index,
                t.as_f64()
            ));
            return Ok(Control::Stop);
        }
        eta.set(pr.eta_estimate);
        tau.set(threshold_for(&pr));
        tau_history.borrow_mut().push((t, tau.get()));
        Ok(Control::Modified)
    };

    let record_f64 = spec.record.times(horizon);
    let record: Option<Vec<T>> = record_f64.map(|v| v.into_iter().map(T::lit).collect());
    let stride = match spec.record {
        RecordSchedule::Stride(n) => n,
        _ => 1,
    };
    let free = Cell::new(T::infinity());
    // the start only needs `on_manifold_tol`; tighten it to the retraction target
    let mut w0 = start.state.clone();
    if let Err(f) = hook(T::zero(), &mut w0, 0, true) {
        return Err(FlowError { failure: f, partial: None });
    }
    let result = drive(tangent, &w0, T::lit(horizon), spec, record.as_deref(), stride, &free, hook);
    let (solved, failure) = match result {
        Ok(s) => (s, None),
        Err((f, s)) => (s, Some(f)),
    };

    let build = || -> Result<Trajectory<T>> {
        let mut tr = Trajectory::evaluate(p, T::zero(), solved.times.clone(), solved.states.clone(), Timescale::Slow)?;
        let hist = tau_history.borrow();
        let (mut kkt, mut etas, mut gaps) = (Vec::new(), Vec::new(), Vec::new());
        for (t, w) in solved.times.iter().zip(&solved.states) {
            let k = hist.partition_point(|(s, _)| s <= t).max(1) - 1;
            let pr = probe(p, w, SpectralTolerances::absolute(hist[k].1))?;
            kkt.push(kkt_from_probe(p, w, &pr).value);
            etas.push(pr.eta_estimate);
            gaps.push(T::from_usize_lossy(pr.gap_index));
        }
        tr.push_observable(KKT_RESIDUAL, kkt)?;
        tr.push_observable(ETA_ESTIMATE, etas)?;
        tr.push_observable(GAP_INDEX, gaps)?;
        for w in warnings.borrow().iter() {
            tr.push_warning(w.clone());
        }
        Ok(tr)
    };
    match failure {
        None => Ok(build()?),
        Some(failure) => Err(FlowError {
            failure,
            partial: build().ok().map(Box::new),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{FlowError, WEIGHT_NORM_SQ};
    use crate::problems::{DiagonalNet, LinearRegression, MatrixCompletion};
    use crate::rng;
    use nalgebra::DMatrix;

    fn linreg(seed: u64, n: usize, d: usize) -> LinearRegression<f64> {
        let mut g = rng::seeded(seed);
        let x = rng::gaussian_matrix(&mut g, n, d, 1.0);
        let y = rng::gaussian_vector(&mut g, n, 1.0);
        LinearRegression::new(x, y).unwrap()
    }

    fn kernel_vector(p: &LinearRegression<f64>, seed: u64) -> DVector<f64> {
        let mut g = rng::seeded(seed);
        let z = rng::gaussian_vector::<f64>(&mut g, p.design().ncols(), 1.0);
        let row = p.design().transpose() * crate::spectral::pinv_apply(&p.design().transpose(), &z).unwrap();
        z - row
    }

    #[test]
    fn linreg_riemannian_gradient_is_kernel_part() {
        let p = linreg(1, 3, 6);
        let star = p.min_norm_solution().clone();
        let v = kernel_vector(&p, 2);
        let tol = SpectralTolerances::default();
        let pv = riemannian_grad_l2(&p, &(&star + &v), tol).unwrap();
        assert!((pv - &v).norm() < 1e-10);
        assert!(riemannian_grad_l2(&p, &star, tol).unwrap().norm() < 1e-10);
        let far = &star + DVector::from_element(6, 1.0);
        assert!(matches!(riemannian_grad_l2(&p, &far, tol), Err(Error::OffManifold { .. })));
    }

    #[test]
    fn linreg_kkt_and_gap() {
        let p = linreg(3, 3, 7);
        let star = p.min_norm_solution().clone();
        assert!(kkt_residual(&p, &star).unwrap().value < 1e-8);
        let v = kernel_vector(&p, 4);
        let k = kkt_residual(&p, &(&star + &v)).unwrap();
        assert!((k.value - v.norm()).abs() < 1e-8);
        let mb = morse_bott_gap(&p, &star).unwrap();
        assert_eq!(mb.gap_index, 4);
        assert!((mb.eta - p.sigma_min().powi(2)).abs() < 1e-10 * mb.eta.max(1.0));
    }

    #[test]
    fn diagonal_net_manifold_dimension() {
        let mut g = rng::seeded(5);
        let (n, d) = (3, 6);
        let x = rng::gaussian_matrix::<f64>(&mut g, n, d, 1.0);
        let w = rng::gaussian_vector::<f64>(&mut g, 2 * d, 1.0);
        let beta = DVector::from_fn(d, |i, _| w[i] * w[i] - w[d + i] * w[d + i]);
        let p = DiagonalNet::new(x.clone(), &x * beta).unwrap();
        assert_eq!(morse_bott_gap(&p, &w).unwrap().gap_index, 2 * d - n);
    }

    /// Jacobian of the observed entries with respect to the packed factors.
    fn observed_jacobian(p: &MatrixCompletion<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, _) = p.shape();
        let r = p.rank();
        let (u, v) = p.unpack(w);
        let mut j = DMatrix::zeros(p.mask().len(), w.len());
        for (row, &(a, b)) in p.mask().iter().enumerate() {
            for k in 0..r {
                j[(row, a * r + k)] = v[(b, k)];
                j[(row, n * r + b * r + k)] = u[(a, k)];
            }
        }
        j
    }

    #[test]
    fn matrix_completion_nullity_matches_constraint_rank() {
        let mut g = rng::seeded(6);
        let (n, m, r) = (5, 4, 2);
        let u = rng::gaussian_matrix::<f64>(&mut g, n, r, 1.0);
        let v = rng::gaussian_matrix::<f64>(&mut g, m, r, 1.0);
        let w = MatrixCompletion::pack(&u, &v);
        let full = MatrixCompletion::full(&u * v.transpose(), r).unwrap();
        assert_eq!(morse_bott_gap(&full, &w).unwrap().gap_index, r * r);
        let mask = rng::sample_cells(&mut g, n, m, 14);
        let part = MatrixCompletion::new(&u * v.transpose(), mask, r).unwrap();
        let rank = crate::spectral::svd(&observed_jacobian(&part, &w)).unwrap().rank(1e-9);
        assert_eq!(morse_bott_gap(&part, &w).unwrap().gap_index, w.len() - rank);
    }

    #[test]
    fn symmetry_directions_are_tangent() {
        let mut g = rng::seeded(7);
        let (n, m, r) = (4, 3, 3);
        let u = rng::gaussian_matrix::<f64>(&mut g, n, r, 1.0);
        let v = rng::gaussian_matrix::<f64>(&mut g, m, r, 1.0);
        let p = MatrixCompletion::full(&u * v.transpose(), r).unwrap();
        let w = MatrixCompletion::pack(&u, &v);
        let pw = riemannian_grad_l2(&p, &w, SpectralTolerances::default()).unwrap();
        for trial in 0..3 {
            let a = rng::gaussian_matrix::<f64>(&mut rng::seeded(100 + trial), r, r, 1.0);
            let id = DMatrix::<f64>::identity(r, r);
            let curve = |e: f64| MatrixCompletion::pack(&(&u * (&id + &a * e)), &(&v * (&id - a.transpose() * e)));
            let l2 = |w: DVector<f64>| 0.5 * w.norm_squared();
            let eps = 1e-5;
            let fd = (l2(curve(eps)) - l2(curve(-eps))) / (2.0 * eps);
            let z = MatrixCompletion::pack(&(&u * &a), &(-(&v * a.transpose())));
            let an = pw.dot(&z);
            assert!((an - fd).abs() <= 1e-4 * fd.abs().max(1e-12), "{an} vs {fd}");
        }
    }

    #[test]
    fn projection_lies_in_kernel() {
        let mut g = rng::seeded(8);
        let u = rng::gaussian_matrix::<f64>(&mut g, 4, 3, 1.0);
        let v = rng::gaussian_matrix::<f64>(&mut g, 4, 3, 1.0);
        let p = MatrixCompletion::full(&u * v.transpose(), 3).unwrap();
        let w = MatrixCompletion::pack(&u, &v);
        let pr = probe(&p, &w, SpectralTolerances::default()).unwrap();
        let pw = pr.project(&w);
        let hpw = p.hessian(&w) * &pw;
        assert!(hpw.norm() <= 1e-6 * pr.eta_estimate * pw.norm() + 1e-10);
    }

    #[test]
    fn quadratic_growth_examples() {
        let p = linreg(9, 3, 5);
        let eta = p.sigma_min().powi(2);
        let star = p.min_norm_solution().clone();
        assert!(quadratic_growth_distance(&p, &star, 0.0, eta).unwrap() < 1e-12);
        let mut g = rng::seeded(10);
        for _ in 0..20 {
            let w = &star + rng::gaussian_vector::<f64>(&mut g, 5, 0.1);
            let res = p.design() * &w - p.targets();
            let exact = crate::spectral::pinv_apply(p.design(), &res).unwrap().norm();
            assert!(quadratic_growth_distance(&p, &w, 0.0, eta).unwrap() >= exact);
        }
        let w = &star + DVector::from_element(5, 0.3);
        let f = p.value(&w);
        let a = quadratic_growth_distance(&p, &w, 0.0, eta).unwrap();
        let b = quadratic_growth_distance(&p, &w, -f, eta).unwrap();
        assert!((b / a - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            quadratic_growth_distance(&p, &w, f + 1.0, eta),
            Err(Error::InconsistentMinimum { .. })
        ));
    }

    #[test]
    fn linreg_flow_matches_closed_form() {
        let p = linreg(11, 3, 6);
        let star = p.min_norm_solution().clone();
        let v = kernel_vector(&p, 12);
        let start = ManifoldPoint::new(&p, &star + &v).unwrap();
        let spec = IntegratorSpec::default().with_record(RecordSchedule::LogSpaced {
            points: 40,
            first: Some(1e-3),
        });
        let tr = integrate_riemannian_flow(&p, &start, 5.0, &spec, &Retraction::default()).unwrap();
        for (t, w) in tr.times().iter().zip(tr.states()) {
            let exact = &star + &v * (-t).exp();
            assert!((w - &exact).norm() <= 1e-6 * exact.norm(), "t = {t}");
        }
        let norms = tr.series(WEIGHT_NORM_SQ).unwrap();
        assert!(norms.windows(2).all(|s| s[1] <= s[0] + 1e-8 * (1.0 + norms[0])));
        assert!(tr.series(KKT_RESIDUAL).unwrap().last().unwrap() < &(v.norm() * 1e-2));
        assert!(tr.series(GAP_INDEX).unwrap().iter().all(|&g| g == 3.0));
        assert!(tr.warnings().is_empty());
    }

    #[test]
    fn stationary_start_is_constant() {
        let p = linreg(13, 2, 4);
        let start = ManifoldPoint::new(&p, p.min_norm_solution().clone()).unwrap();
        let tr = integrate_riemannian_flow(&p, &start, 2.0, &IntegratorSpec::default(), &Retraction::default()).unwrap();
        for w in tr.states() {
            assert!((w - &start.state).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_off_manifold_start() {
        let p = linreg(14, 2, 4);
        let w = DVector::from_element(4, 5.0);
        assert!(matches!(ManifoldPoint::new(&p, w), Err(Error::OffManifold { .. })));
    }

    #[test]
    fn nullity_change_halts_with_warning() {
        // The pair with β₂ = 0 is driven to u₂ = v₂ = 0, where its Hessian
        // block vanishes and the nullity jumps.
        let x = DMatrix::<f64>::identity(2, 2);
        let p = DiagonalNet::new(x, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let w = DVector::from_vec(vec![1.2, 0.5, 0.44f64.sqrt(), 0.5]);
        let start = ManifoldPoint::new(&p, w).unwrap();
        let res = integrate_riemannian_flow(&p, &start, 40.0, &IntegratorSpec::default(), &Retraction::default());
        let tr = match res {
            Ok(tr) => tr,
            Err(FlowError { partial, .. }) => *partial.unwrap(),
        };
        assert!(!tr.warnings().is_empty(), "expected a stratum warning");
        assert!(tr.final_time().unwrap() < 40.0);
    }
}
