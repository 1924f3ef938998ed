//! Autonomous ODE driver shared by every continuous-time flow.

use std::cell::Cell;

use nalgebra::DVector;

use super::spec::{IntegratorSpec, Method};
use super::FlowFailure;
use crate::scalar::Real;

pub(crate) const DIVERGENCE_NORM: f64 = 1e12;

/// What the per-step hook asks the driver to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Control {
    Continue,
    /// The hook changed the state in place; derivative caches are dropped.
    Modified,
    Stop,
}

#[derive(Debug, Clone)]
pub(crate) struct Solved<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    /// `true` when the hook ended the run before the horizon.
    pub stopped: bool,
    pub steps: usize,
}

impl<T: Real> Solved<T> {
    fn push(&mut self, t: T, w: &DVector<T>) {
        if self.times.last().is_some_and(|&last| last >= t) {
            // a stop on a record time would otherwise duplicate the sample
            *self.states.last_mut().unwrap() = w.clone();
            return;
        }
        self.times.push(t);
        self.states.push(w.clone());
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// `out = w + h Σ cᵢ kᵢ`.
fn combine<T: Real>(out: &mut DVector<T>, w: &DVector<T>, h: T, terms: &[(f64, &DVector<T>)]) {
    out.copy_from(w);
    for &(c, k) in terms {
        if c != 0.0 {
            out.axpy(h * T::lit(c), k, T::one());
        }
    }
}

struct Workspace<T: Real> {
    k: [DVector<T>; 7],
    tmp: DVector<T>,
    next: DVector<T>,
    err: DVector<T>,
}

impl<T: Real> Workspace<T> {
    fn new(d: usize) -> Self {
        let z = || DVector::zeros(d);
        Self {
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            next: z(),
            err: z(),
        }
    }
}

/// One Dormand–Prince step from `w` given `k[0] = f(w)`. Leaves the
/// fifth-order solution in `ws.next`, `f(next)` in `ws.k[6]`, and returns
/// the scaled RMS error estimate.
fn dopri_step<T: Real, F>(f: &mut F, w: &DVector<T>, h: T, rel: T, abs: T, ws: &mut Workspace<T>) -> T
where
    F: FnMut(&DVector<T>, &mut DVector<T>),
{
    let Workspace { k, tmp, next, err } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;
    combine(tmp, w, h, &[(A21, k1)]);
    f(tmp, k2);
    combine(tmp, w, h, &[(A31, k1), (A32, k2)]);
    f(tmp, k3);
    combine(tmp, w, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    f(tmp, k4);
    combine(tmp, w, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    f(tmp, k5);
    combine(tmp, w, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    f(tmp, k6);
    combine(next, w, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    f(next, k7);
    err.fill(T::zero());
    for (c, k) in [(E1, &*k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)] {
        err.axpy(h * T::lit(c), k, T::one());
    }
    let mut acc = T::zero();
    for i in 0..w.len() {
        let sc = abs + rel * w[i].abs().max(next[i].abs());
        let e = err[i] / sc;
        acc += e * e;
    }
    (acc / T::from_usize_lossy(w.len().max(1))).sqrt()
}

fn rk4_step<T: Real, F>(f: &mut F, w: &DVector<T>, h: T, ws: &mut Workspace<T>)
where
    F: FnMut(&DVector<T>, &mut DVector<T>),
{
    let Workspace { k, tmp, next, .. } = ws;
    let [k1, k2, k3, k4, ..] = k;
    f(w, k1);
    combine(tmp, w, h, &[(0.5, k1)]);
    f(tmp, k2);
    combine(tmp, w, h, &[(0.5, k2)]);
    f(tmp, k3);
    combine(tmp, w, h, &[(1.0, k3)]);
    f(tmp, k4);
    combine(next, w, h, &[(1.0 / 6.0, k1), (1.0 / 3.0, k2), (1.0 / 3.0, k3), (1.0 / 6.0, k4)]);
}

fn scaled_norm<T: Real>(v: &DVector<T>, w: &DVector<T>, rel: T, abs: T) -> T {
    let mut acc = T::zero();
    for i in 0..v.len() {
        let e = v[i] / (abs + rel * w[i].abs());
        acc += e * e;
    }
    (acc / T::from_usize_lossy(v.len().max(1))).sqrt()
}

/// Starting step for the adaptive scheme.
fn initial_step<T: Real, F>(f: &mut F, w: &DVector<T>, f0: &DVector<T>, rel: T, abs: T, horizon: T) -> T
where
    F: FnMut(&DVector<T>, &mut DVector<T>),
{
    let small = T::lit(1e-5);
    let d0 = scaled_norm(w, w, rel, abs);
    let d1 = scaled_norm(f0, w, rel, abs);
    let h0 = if d0 < small || d1 < small {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    let h0 = h0.min(horizon);
    let w1 = w + f0 * h0;
    let mut f1 = DVector::zeros(w.len());
    f(&w1, &mut f1);
    let d2 = scaled_norm(&(&f1 - f0), w, rel, abs) / h0;
    let m = d1.max(d2);
    let h1 = if m <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / m).powf(T::lit(0.2))
    };
    (h0 * T::lit(100.0)).min(h1).min(horizon)
}

fn check_state<T: Real>(w: &DVector<T>, t: T) -> Result<(), FlowFailure> {
    let n = w.norm();
    if !n.is_finite() {
        return Err(FlowFailure::NonFinite { time: t.as_f64() });
    }
    if n > T::lit(DIVERGENCE_NORM) {
        return Err(FlowFailure::Divergence {
            time: t.as_f64(),
            iteration: None,
            norm: n.as_f64(),
        });
    }
    Ok(())
}

/// Integrates `ẇ = f(w)` on `[0, horizon]`.
///
/// `hook(t, w, steps, recording)` runs after every accepted step, with
/// `recording` set when the sample is about to be kept; `max_step` caps the
/// step and may be lowered by the hook. Record times are hit
/// exactly; `record == None` records every `stride`-th step instead. On
/// failure the samples gathered so far are returned with the reason.
pub(crate) fn drive<T, F, H>(
    mut f: F,
    w0: &DVector<T>,
    horizon: T,
    spec: &IntegratorSpec,
    record: Option<&[T]>,
    stride: usize,
    max_step: &Cell<T>,
    mut hook: H,
) -> Result<Solved<T>, (FlowFailure, Solved<T>)>
where
    T: Real,
    F: FnMut(&DVector<T>, &mut DVector<T>),
    H: FnMut(T, &mut DVector<T>, usize, bool) -> Result<Control, FlowFailure>,
{
    let d = w0.len();
    let mut out = Solved {
        times: Vec::new(),
        states: Vec::new(),
        stopped: false,
        steps: 0,
    };
    let mut w = w0.clone();
    let mut t = T::zero();
    out.push(t, &w);
    if let Err(e) = check_state(&w, t) {
        return Err((e, out));
    }

    let mut ws = Workspace::new(d);
    let mut next_rec = 1usize;
    let target_of = |next_rec: usize| match record {
        Some(ts) => ts.get(next_rec).copied().unwrap_or(horizon).min(horizon),
        None => horizon,
    };

    let (adaptive, mut h, rel, abs) = match spec.method {
        Method::Rk45 { rel_tol, abs_tol } => {
            // tolerances below round-off only stall the controller
            let rel = T::lit(rel_tol).max(T::lit(4.0) * T::eps());
            let abs = T::lit(abs_tol);
            f(&w, &mut ws.k[0]);
            let f0 = ws.k[0].clone();
            (true, initial_step(&mut f, &w, &f0, rel, abs, horizon), rel, abs)
        }
        Method::Rk4 { step } | Method::Euler { step } => (false, T::lit(step), T::zero(), T::zero()),
    };
    let mut fsal_valid = adaptive;

    while t < horizon {
        if out.steps >= spec.max_steps {
            return Err((
                FlowFailure::MaxSteps {
                    time: t.as_f64(),
                    steps: out.steps,
                },
                out,
            ));
        }
        let target = target_of(next_rec);
        let remaining = target - t;
        h = h.min(max_step.get());
        let (h_try, lands) = if h >= remaining {
            (remaining, true)
        } else {
            (h, false)
        };

        match spec.method {
            Method::Rk45 { .. } => {
                if !fsal_valid {
                    f(&w, &mut ws.k[0]);
                    fsal_valid = true;
                }
                let err = dopri_step(&mut f, &w, h_try, rel, abs, &mut ws);
                if !err.is_finite() || err > T::one() {
                    let factor = if err.is_finite() {
                        (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.2))
                    } else {
                        T::lit(0.1)
                    };
                    h = h_try * factor;
                    if h <= T::lit(16.0) * T::eps() * t.abs().max(T::one()) {
                        return Err((
                            FlowFailure::StepUnderflow {
                                time: t.as_f64(),
                                step: h.as_f64(),
                            },
                            out,
                        ));
                    }
                    continue;
                }
                let factor = if err == T::zero() {
                    T::lit(5.0)
                } else {
                    (T::lit(0.9) * err.powf(T::lit(-0.2))).clamp(T::lit(0.2), T::lit(5.0))
                };
                // a step shortened to land on a record time keeps the larger proposal
                h = if lands { h.max(h_try * factor) } else { h_try * factor };
                std::mem::swap(&mut w, &mut ws.next);
                let (k0, rest) = ws.k.split_at_mut(1);
                std::mem::swap(&mut k0[0], &mut rest[5]);
            }
            Method::Rk4 { .. } => {
                rk4_step(&mut f, &w, h_try, &mut ws);
                std::mem::swap(&mut w, &mut ws.next);
            }
            Method::Euler { .. } => {
                f(&w, &mut ws.k[0]);
                w.axpy(h_try, &ws.k[0], T::one());
            }
        }
        t = if lands { target } else { t + h_try };
        out.steps += 1;

        if let Err(e) = check_state(&w, t) {
            return Err((e, out));
        }
        let on_record = match record {
            Some(_) => lands,
            None => out.steps % stride.max(1) == 0 || t >= horizon,
        };
        let ctrl = match hook(t, &mut w, out.steps, on_record) {
            Ok(c) => c,
            Err(e) => {
                out.push(t, &w);
                return Err((e, out));
            }
        };
        if ctrl == Control::Modified {
            fsal_valid = false;
        }
        if on_record {
            out.push(t, &w);
            next_rec += 1;
        }
        if ctrl == Control::Stop {
            out.push(t, &w);
            out.stopped = true;
            break;
        }
    }
    if out.times.last().is_some_and(|&last| last < t) {
        out.push(t, &w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(w: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&(-w));
    }

    fn free() -> Cell<f64> {
        Cell::new(f64::INFINITY)
    }

    fn no_hook(_: f64, _: &mut DVector<f64>, _: usize, _: bool) -> Result<Control, FlowFailure> {
        Ok(Control::Continue)
    }

    #[test]
    fn adaptive_hits_record_times() {
        let w0 = DVector::from_vec(vec![1.0]);
        let rec = [0.0, 0.25, 0.5, 1.0];
        let s = drive(decay, &w0, 1.0, &IntegratorSpec::default(), Some(&rec), 1, &free(), no_hook).unwrap();
        assert_eq!(s.times, rec.to_vec());
        for (t, w) in s.times.iter().zip(&s.states) {
            assert!((w[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_order_four() {
        let w0 = DVector::from_vec(vec![1.0]);
        let rec = [0.0, 1.0];
        let err = |h: f64| {
            let s = drive(decay, &w0, 1.0, &IntegratorSpec::rk4(h), Some(&rec), 1, &free(), no_hook).unwrap();
            (s.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn hook_can_stop_early() {
        let w0 = DVector::from_vec(vec![1.0]);
        let rec = [0.0, 10.0];
        let s = drive(decay, &w0, 10.0, &IntegratorSpec::default(), Some(&rec), 1, &free(), |_, w: &mut DVector<f64>, _, _| {
            Ok(if w[0] < 0.5 { Control::Stop } else { Control::Continue })
        })
        .unwrap();
        assert!(s.stopped);
        assert!(*s.times.last().unwrap() < 10.0);
    }

    #[test]
    fn blow_up_is_reported_with_partial_samples() {
        let w0 = DVector::from_vec(vec![1.0]);
        let rec = [0.0, 1.0, 100.0];
        let grow = |w: &DVector<f64>, out: &mut DVector<f64>| out.copy_from(&(w * 1.0));
        let spec = IntegratorSpec::rk4(0.01);
        let (fail, partial) = drive(grow, &w0, 100.0, &spec, Some(&rec), 1, &free(), no_hook).unwrap_err();
        assert!(matches!(fail, FlowFailure::Divergence { .. }));
        assert_eq!(partial.times, vec![0.0, 1.0]);
    }

    #[test]
    fn max_steps_is_enforced() {
        let w0 = DVector::from_vec(vec![1.0]);
        let rec = [0.0, 1.0];
        let spec = IntegratorSpec::rk4(1e-3).with_max_steps(10);
        let (fail, _) = drive(decay, &w0, 1.0, &spec, Some(&rec), 1, &free(), no_hook).unwrap_err();
        assert!(matches!(fail, FlowFailure::MaxSteps { steps: 10, .. }));
    }
}
