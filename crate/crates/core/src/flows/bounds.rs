use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::problems::Objective;
use crate::scalar::Real;
use crate::spectral::{spectral_norm_sym, symmetrize};

/// `λ t e^{ct} R`: bound on the distance between the regularised and
/// unregularised flows at time `t`, for `∇F` `c`-Lipschitz and `sup ‖w‖ ≤ R`.
pub fn gronwall_bound<T: Real>(lambda: T, t: T, c: T, r: T) -> Result<T> {
    for (x, name) in [(lambda, "lambda"), (t, "t"), (c, "c"), (r, "R")] {
        if !(x >= T::zero()) {
            return Err(invalid(format!("{name} must be nonnegative")));
        }
    }
    if lambda == T::zero() || t == T::zero() || r == T::zero() {
        return Ok(T::zero());
    }
    Ok(lambda * t * (c * t).exp() * r)
}

/// `−λ ln λ / (2c)`, the slow time at which the fast and slow phases meet.
pub fn junction_time<T: Real>(lambda: T, c: T) -> Result<T> {
    if !(lambda > T::zero() && lambda < T::one()) {
        return Err(invalid("junction time needs 0 < lambda < 1"));
    }
    if !(c > T::zero() && c.is_finite()) {
        return Err(invalid("junction time needs c > 0"));
    }
    Ok(-lambda * lambda.ln() / (T::lit(2.0) * c))
}

/// Twice the largest Hessian spectral norm over `states`.
pub fn lipschitz_estimate<'a, T, P, I>(p: &P, states: I) -> Result<T>
where
    T: Real,
    P: Objective<T> + ?Sized,
    I: IntoIterator<Item = &'a DVector<T>>,
{
    let mut best = T::zero();
    for w in states {
        crate::problems::check_param(p.dim(), w)?;
        best = best.max(spectral_norm_sym(&symmetrize(&p.hessian(w)))?);
    }
    Ok(T::lit(2.0) * best)
}

/// Power-iteration estimate of `‖∇²F(w)‖₂` from Hessian-vector products.
pub fn hessian_norm_estimate<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>, iters: usize) -> T {
    let d = p.dim();
    // deterministic start with every coordinate excited
    let mut x = DVector::from_fn(d, |i, _| T::one() + T::lit(0.618_033_988_75 * i as f64).sin() * T::lit(0.5));
    x /= x.norm();
    let mut est = T::zero();
    for _ in 0..iters.max(1) {
        let hx = p.hessian_vec(w, &x);
        let n = hx.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return if n.is_finite() { est } else { T::infinity() };
        }
        est = n;
        x = hx / n;
    }
    est
}
