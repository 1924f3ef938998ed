//! Gradient flow, its weight-decay perturbation, gradient descent, and the
//! limit map `Φ(w0) = lim_{t→∞} w^GF(t)`.

use std::cell::Cell;

use nalgebra::DVector;
use thiserror::Error;

use crate::error::{invalid, Error, Result};
use crate::problems::{check_param, Objective};
use crate::scalar::Real;

mod bounds;
pub mod sidecar;
pub(crate) mod solver;
mod spec;
mod trajectory;

pub use bounds::{gronwall_bound, hessian_norm_estimate, junction_time, lipschitz_estimate};
pub use spec::{IntegratorSpec, Method, RecordSchedule};
pub use trajectory::{Timescale, Trajectory, GRAD_NORM, LOSS, REG_LOSS, WEIGHT_NORM_SQ};

use solver::{drive, Control, DIVERGENCE_NORM};

/// Why an integration stopped before its horizon.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowFailure {
    #[error("step size underflow at t = {time:e} (h = {step:e}); the problem is too stiff for the tolerances")]
    StepUnderflow { time: f64, step: f64 },
    #[error("divergence at t = {time:e}{}: |w| = {norm:e}", fmt_iter(.iteration))]
    Divergence {
        time: f64,
        iteration: Option<usize>,
        norm: f64,
    },
    #[error("non-finite state at t = {time:e}")]
    NonFinite { time: f64 },
    #[error("retraction failed at t = {time:e}: |grad F| = {grad_norm:e} did not reach {tolerance:e}")]
    ManifoldEscape {
        time: f64,
        grad_norm: f64,
        tolerance: f64,
    },
    #[error("step budget of {steps} exhausted at t = {time:e}")]
    MaxSteps { time: f64, steps: usize },
    #[error(transparent)]
    Problem(#[from] Error),
}

fn fmt_iter(it: &Option<usize>) -> String {
    it.map_or(String::new(), |k| format!(" (iteration {k})"))
}

/// A failed integration together with the samples recorded before failing.
#[derive(Debug, Clone, Error)]
#[error("{failure}")]
pub struct FlowError<T: Real> {
    pub failure: FlowFailure,
    pub partial: Option<Box<Trajectory<T>>>,
}

impl<T: Real> From<Error> for FlowError<T> {
    fn from(e: Error) -> Self {
        Self {
            failure: FlowFailure::Problem(e),
            partial: None,
        }
    }
}

pub type FlowResult<T, R = Trajectory<T>> = std::result::Result<R, FlowError<T>>;

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
    }
    Ok(())
}

fn lit_times<T: Real>(ts: Option<Vec<f64>>) -> Option<Vec<T>> {
    ts.map(|v| v.into_iter().map(T::lit).collect())
}

/// Unregularised gradient flow `ẇ = −∇F(w)` on `[0, horizon]`.
pub fn integrate_gf<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w0: &DVector<T>,
    horizon: f64,
    spec: &IntegratorSpec,
) -> FlowResult<T> {
    integrate_regularized(p, w0, 0.0, horizon, spec)
}

/// Regularised gradient flow `ẇ = −∇F(w) − λw` on `[0, horizon]`.
pub fn integrate_regularized<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w0: &DVector<T>,
    lambda: f64,
    horizon: f64,
    spec: &IntegratorSpec,
) -> FlowResult<T> {
    check_param(p.dim(), w0)?;
    check_horizon(horizon)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("lambda must be nonnegative, got {lambda}")).into());
    }
    spec.validate()?;
    let lam = T::lit(lambda);
    let record = lit_times::<T>(spec.record.times(horizon));
    let stride = match spec.record {
        RecordSchedule::Stride(n) => n,
        _ => 1,
    };
    let rhs = |w: &DVector<T>, out: &mut DVector<T>| {
        p.gradient_into(w, out);
        out.axpy(-lam, w, -T::one());
    };
    let finish = |times, states| Trajectory::evaluate(p, lam, times, states, Timescale::Fast);
    let free = Cell::new(T::infinity());
    match drive(rhs, w0, T::lit(horizon), spec, record.as_deref(), stride, &free, |_, _, _, _| {
        Ok(Control::Continue)
    }) {
        Ok(s) => Ok(finish(s.times, s.states)?),
        Err((failure, s)) => Err(FlowError {
            failure,
            partial: finish(s.times, s.states).ok().map(Box::new),
        }),
    }
}

/// Iteration indices to record for `iterations` steps of size `gamma`.
fn gd_record_indices(record: &RecordSchedule, gamma: f64, iterations: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = match record.times(gamma * iterations as f64) {
        Some(ts) => ts
            .into_iter()
            .map(|t| ((t / gamma).round() as usize).min(iterations))
            .collect(),
        None => {
            let RecordSchedule::Stride(n) = record else { unreachable!() };
            (0..=iterations).step_by(*n).collect()
        }
    };
    ks.push(0);
    ks.push(iterations);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Gradient descent with weight decay, `w ← w − γ(∇F(w) + λw)`, recorded
/// against the rescaled time `t_k = γk`.
pub fn integrate_gd<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w0: &DVector<T>,
    lambda: f64,
    gamma: f64,
    iterations: usize,
    record: &RecordSchedule,
) -> FlowResult<T> {
    check_param(p.dim(), w0)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!("step size must be positive, got {gamma}")).into());
    }
    if iterations == 0 {
        return Err(invalid("gradient descent needs at least one iteration").into());
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("lambda must be nonnegative, got {lambda}")).into());
    }
    let ks = gd_record_indices(record, gamma, iterations);
    let (g_t, lam) = (T::lit(gamma), T::lit(lambda));
    let shrink = T::one() - g_t * lam;
    let mut w = w0.clone();
    let mut g = DVector::zeros(p.dim());
    let mut times = Vec::with_capacity(ks.len());
    let mut states = Vec::with_capacity(ks.len());
    let mut next = 0usize;
    let tk = |k: usize| g_t * T::from_usize_lossy(k);
    for k in 0..=iterations {
        if next < ks.len() && ks[next] == k {
            times.push(tk(k));
            states.push(w.clone());
            next += 1;
        }
        if k == iterations {
            break;
        }
        p.gradient_into(&w, &mut g);
        w *= shrink;
        w.axpy(-g_t, &g, T::one());
        let n = w.norm();
        if !(n <= T::lit(DIVERGENCE_NORM)) {
            let failure = FlowFailure::Divergence {
                time: (gamma * (k + 1) as f64),
                iteration: Some(k + 1),
                norm: n.as_f64(),
            };
            let partial = Trajectory::evaluate(p, lam, times, states, Timescale::Fast).ok();
            return Err(FlowError {
                failure,
                partial: partial.map(Box::new),
            });
        }
    }
    Ok(Trajectory::evaluate(p, lam, times, states, Timescale::Fast)?)
}

/// Stopping rule for [`phi_map`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhiStop {
    /// Defaults to `1e-10 · (1 + ‖∇F(w0)‖)`.
    pub grad_tol: Option<f64>,
    /// Defaults to `1e6`.
    pub max_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiResult<T: Real> {
    pub point: DVector<T>,
    pub converged: bool,
    pub stop_time: T,
    pub grad_norm: T,
}

/// Runs the unregularised flow until `‖∇F‖ ≤ grad_tol` or `max_time`.
pub fn phi_map<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w0: &DVector<T>,
    stop: PhiStop,
    spec: &IntegratorSpec,
) -> FlowResult<T, PhiResult<T>> {
    check_param(p.dim(), w0)?;
    spec.validate()?;
    let g0 = p.gradient(w0).norm();
    let tol = match stop.grad_tol {
        Some(t) if !(t.is_finite() && t > 0.0) => {
            return Err(invalid(format!("grad_tol must be positive, got {t}")).into());
        }
        Some(t) => T::lit(t),
        None => T::lit(1e-10) * (T::one() + g0),
    };
    let max_time = stop.max_time.unwrap_or(1e6);
    check_horizon(max_time)?;
    if g0 <= tol {
        return Ok(PhiResult {
            point: w0.clone(),
            converged: true,
            stop_time: T::zero(),
            grad_norm: g0,
        });
    }
    let horizon = T::lit(max_time);
    let record = [T::zero(), horizon];
    let rhs = |w: &DVector<T>, out: &mut DVector<T>| {
        p.gradient_into(w, out);
        out.neg_mut();
    };
    // Near the limit an explicit scheme would otherwise grow its step to the
    // edge of its stability region and stall at the tolerance floor.
    let cap = |w: &DVector<T>| T::lit(1.5) / (T::lit(1.2) * hessian_norm_estimate(p, w, 30)).max(T::eps());
    let max_step = Cell::new(cap(w0));
    let mut g = DVector::zeros(p.dim());
    let mut last_norm = g0;
    let hook = |_: T, w: &mut DVector<T>, steps: usize, _: bool| {
        p.gradient_into(w, &mut g);
        last_norm = g.norm();
        if steps % 64 == 0 {
            max_step.set(cap(w));
        }
        Ok(if last_norm <= tol { Control::Stop } else { Control::Continue })
    };
    match drive(rhs, w0, horizon, spec, Some(&record), 1, &max_step, hook) {
        Ok(s) => Ok(PhiResult {
            point: s.states.last().expect("at least one sample").clone(),
            converged: s.stopped || last_norm <= tol,
            stop_time: *s.times.last().expect("at least one sample"),
            grad_norm: last_norm,
        }),
        Err((failure, s)) => {
            let partial = Trajectory::evaluate(p, T::zero(), s.times, s.states, Timescale::Fast).ok();
            Err(FlowError {
                failure,
                partial: partial.map(Box::new),
            })
        }
    }
}

/// `w̃(s) = w(s/λ)`: the same samples on the slow clock `s = λt`.
pub fn slow_reparam<T: Real>(traj: &Trajectory<T>) -> Result<Trajectory<T>> {
    if !(traj.lambda() > T::zero()) {
        return Err(invalid("slow reparameterisation needs lambda > 0"));
    }
    if traj.timescale() == Timescale::Slow {
        return Err(invalid("trajectory is already on the slow clock"));
    }
    Ok(traj.rescaled(traj.lambda(), Timescale::Slow))
}

/// Inverse of [`slow_reparam`].
pub fn fast_reparam<T: Real>(traj: &Trajectory<T>) -> Result<Trajectory<T>> {
    if !(traj.lambda() > T::zero()) {
        return Err(invalid("fast reparameterisation needs lambda > 0"));
    }
    if traj.timescale() == Timescale::Fast {
        return Err(invalid("trajectory is already on the fast clock"));
    }
    Ok(traj.rescaled(T::one() / traj.lambda(), Timescale::Fast))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{LinearRegression, Quadratic};
    use nalgebra::DMatrix;

    fn scalar_quad() -> Quadratic<f64> {
        Quadratic::diagonal(&[1.0]).unwrap()
    }

    fn one(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn scalar_gf_matches_exponential() {
        let tr = integrate_gf(&scalar_quad(), &one(1.0), 1.0, &IntegratorSpec::default()).unwrap();
        let w1 = tr.final_state().unwrap()[0];
        assert!((w1 - (-1.0f64).exp()).abs() <= 1e-8);
        assert_eq!(tr.final_time(), Some(1.0));
        assert_eq!(tr.times()[0], 0.0);
    }

    #[test]
    fn scalar_regularized_flow() {
        let tr = integrate_regularized(&scalar_quad(), &one(1.0), 0.5, 2.0, &IntegratorSpec::default()).unwrap();
        for (t, w) in tr.times().iter().zip(tr.states()) {
            assert!((w[0] - (-1.5 * t).exp()).abs() <= 1e-8);
        }
    }

    #[test]
    fn zero_lambda_equals_gf() {
        let p = Quadratic::diagonal(&[1.0, 3.0]).unwrap();
        let w0 = DVector::from_vec(vec![1.0, -2.0]);
        let spec = IntegratorSpec::default();
        let a = integrate_gf(&p, &w0, 3.0, &spec).unwrap();
        let b = integrate_regularized(&p, &w0, 0.0, 3.0, &spec).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn stationary_start_stays_put() {
        let p = scalar_quad();
        let tr = integrate_gf(&p, &one(0.0), 10.0, &IntegratorSpec::default()).unwrap();
        assert!(tr.states().iter().all(|s| s[0] == 0.0));
        let phi = phi_map(&p, &one(0.0), PhiStop::default(), &IntegratorSpec::default()).unwrap();
        assert!(phi.converged);
        assert_eq!(phi.stop_time, 0.0);
    }

    #[test]
    fn phi_of_decoupled_regression() {
        let x = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = LinearRegression::new(x, DVector::from_vec(vec![1.0])).unwrap();
        let w0 = DVector::from_vec(vec![0.0, 3.0]);
        let phi = phi_map(&p, &w0, PhiStop::default(), &IntegratorSpec::default()).unwrap();
        assert!(phi.converged, "{phi:?}");
        assert!((phi.point[0] - 1.0).abs() < 1e-9);
        assert_eq!(phi.point[1], 3.0);
    }

    #[test]
    fn phi_reports_non_convergence() {
        let p = Quadratic::diagonal(&[1e-3]).unwrap();
        let stop = PhiStop {
            grad_tol: Some(1e-12),
            max_time: Some(1.0),
        };
        let phi = phi_map(&p, &one(1.0), stop, &IntegratorSpec::default()).unwrap();
        assert!(!phi.converged);
        assert_eq!(phi.stop_time, 1.0);
    }

    #[test]
    fn gd_matches_recursion_and_time_axis() {
        let p = scalar_quad();
        let tr = integrate_gd(&p, &one(1.0), 0.1, 0.1, 10, &RecordSchedule::Stride(1)).unwrap();
        assert_eq!(tr.len(), 11);
        assert!((tr.times()[10] - 1.0).abs() < 1e-15);
        let expected = (1.0f64 - 0.1 * 1.1).powi(10);
        assert!((tr.final_state().unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn gd_at_stability_edge_oscillates() {
        let p = scalar_quad();
        let tr = integrate_gd(&p, &one(1.0), 0.0, 2.0, 6, &RecordSchedule::Stride(1)).unwrap();
        let vals: Vec<f64> = tr.states().iter().map(|s| s[0]).collect();
        assert_eq!(vals, vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn gd_divergence_reports_iteration() {
        let p = scalar_quad();
        let err = integrate_gd(&p, &one(1.0), 0.0, 3.0, 100, &RecordSchedule::Stride(1)).unwrap_err();
        match err.failure {
            FlowFailure::Divergence { iteration: Some(k), .. } => assert_eq!(k, 40),
            f => panic!("unexpected {f:?}"),
        }
        assert_eq!(err.partial.unwrap().len(), 40);
    }

    #[test]
    fn gd_converges_to_flow_at_first_order() {
        let p = scalar_quad();
        let exact = (-1.1f64).exp();
        let err = |gamma: f64| {
            let k = (1.0 / gamma).round() as usize;
            let tr = integrate_gd(&p, &one(1.0), 0.1, gamma, k, &RecordSchedule::Stride(k)).unwrap();
            (tr.final_state().unwrap()[0] - exact).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn reparam_round_trip() {
        let p = scalar_quad();
        let tr = integrate_regularized(&p, &one(1.0), 0.1, 20.0, &IntegratorSpec::default()).unwrap();
        let slow = slow_reparam(&tr).unwrap();
        assert!((slow.final_time().unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(slow.timescale(), Timescale::Slow);
        let back = slow_reparam(&fast_reparam(&slow).unwrap()).unwrap();
        for (a, b) in back.times().iter().zip(slow.times()) {
            assert!((a - b).abs() <= 1e-15 * b.max(1.0));
        }
        let unreg = integrate_gf(&p, &one(1.0), 1.0, &IntegratorSpec::default()).unwrap();
        assert!(slow_reparam(&unreg).is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = scalar_quad();
        let spec = IntegratorSpec::default();
        assert!(integrate_gf(&p, &one(1.0), 0.0, &spec).is_err());
        assert!(integrate_regularized(&p, &one(1.0), -1.0, 1.0, &spec).is_err());
        assert!(integrate_gf(&p, &DVector::zeros(2), 1.0, &spec).is_err());
        assert!(integrate_gd(&p, &one(1.0), 0.0, 0.0, 1, &RecordSchedule::Stride(1)).is_err());
    }
}
