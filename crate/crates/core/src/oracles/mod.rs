//! Closed-form and brute-force references for the dynamical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problems::{check_param, Objective};
use crate::scalar::Real;
use crate::spectral::{pinv_apply, svd};

mod l1;
mod timescale;

pub use l1::{l1_min_enumerate, l1_min_interpolant, L1Options, L1Solution};
pub use timescale::{timescale_report, timescale_report_from_series, RunSeries, TimescaleOptions, TimescaleReport};

/// Exact regularised gradient flow for `F = ½‖Xw − y‖²` in the right
/// singular basis of `X`.
///
/// With `z = Vᵀw` on the row space,
/// `zᵢ(t) = zᵢ^∞ + e^{−(σᵢ²+λ)t}(zᵢ(0) − zᵢ^∞)`, `zᵢ^∞ = σᵢ²/(σᵢ²+λ) z*ᵢ`,
/// and the kernel component decays as `e^{−λt}`.
#[derive(Debug, Clone)]
pub struct LinRegClosedForm<T: Real> {
    pub u: DMatrix<T>,
    pub sigma: DVector<T>,
    /// Right singular vectors spanning the row space (thin).
    pub v: DMatrix<T>,
    /// Row-space coordinates of `X⁺y`.
    pub z_star: DVector<T>,
    /// Row-space coordinates of `w0`.
    pub z0: DVector<T>,
    /// `P_{Ker X} w0`.
    pub w0_kernel: DVector<T>,
}

impl<T: Real> LinRegClosedForm<T> {
    pub fn new(x: &DMatrix<T>, y: &DVector<T>, w0: &DVector<T>) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "regression targets",
                expected: n,
                got: y.len(),
            });
        }
        if w0.len() != d {
            return Err(Error::DimensionMismatch {
                what: "initial point",
                expected: d,
                got: w0.len(),
            });
        }
        let s = svd(x)?;
        let rank = s.rank(crate::spectral::default_pinv_rcond::<T>(n, d));
        let u = s.u.columns(0, rank).into_owned();
        let v = s.v.columns(0, rank).into_owned();
        let sigma = s.singular_values.rows(0, rank).into_owned();
        let uty = u.transpose() * y;
        let z_star = DVector::from_fn(rank, |i, _| uty[i] / sigma[i]);
        let z0 = v.transpose() * w0;
        let w0_kernel = w0 - &v * &z0;
        Ok(Self {
            u,
            sigma,
            v,
            z_star,
            z0,
            w0_kernel,
        })
    }

    /// `w^λ(t)`.
    pub fn eval(&self, t: T, lambda: T) -> DVector<T> {
        let z = DVector::from_fn(self.sigma.len(), |i, _| {
            let s2 = self.sigma[i] * self.sigma[i];
            let z_inf = s2 / (s2 + lambda) * self.z_star[i];
            z_inf + (-(s2 + lambda) * t).exp() * (self.z0[i] - z_inf)
        });
        &self.v * z + &self.w0_kernel * (-lambda * t).exp()
    }

    /// `lim_{t→∞} w^λ(t)`: the ridge solution for `λ > 0`, `Φ(w0)` for `λ = 0`.
    pub fn limit(&self, lambda: T) -> DVector<T> {
        let z = DVector::from_fn(self.sigma.len(), |i, _| {
            let s2 = self.sigma[i] * self.sigma[i];
            s2 / (s2 + lambda) * self.z_star[i]
        });
        let base = &self.v * z;
        if lambda > T::zero() {
            base
        } else {
            base + &self.w0_kernel
        }
    }

    pub fn min_norm_solution(&self) -> DVector<T> {
        &self.v * &self.z_star
    }
}

/// `X⁺y`, the least-norm interpolant.
pub fn min_norm_solution<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    pinv_apply(x, y)
}

/// Sum of singular values.
pub fn nuclear_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    Ok(svd(m)?.singular_values.iter().fold(T::zero(), |a, s| a + *s))
}

/// `½(‖U‖² + ‖V‖²) − ‖UVᵀ‖_*`, nonnegative and zero exactly for balanced factors.
pub fn srebro_gap<T: Real>(u: &DMatrix<T>, v: &DMatrix<T>) -> Result<T> {
    if u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch {
            what: "factor ranks",
            expected: u.ncols(),
            got: v.ncols(),
        });
    }
    let half = T::lit(0.5) * (u.norm_squared() + v.norm_squared());
    Ok(half - nuclear_norm(&(u * v.transpose()))?)
}

/// `‖∇F(w0)‖ / ‖w_GF‖`: weight decay well below this separates the two phases.
///
/// Returns `0` with a warning when `w0` is stationary.
pub fn grok_threshold<T: Real, P: Objective<T> + ?Sized>(p: &P, w0: &DVector<T>, w_gf_limit: &DVector<T>) -> Result<T> {
    check_param(p.dim(), w0)?;
    check_param(p.dim(), w_gf_limit)?;
    let denom = w_gf_limit.norm();
    if !(denom > T::zero()) {
        return Err(crate::error::invalid("gradient-flow limit must be nonzero"));
    }
    let g = p.gradient(w0).norm();
    if g == T::zero() {
        log::warn!("degenerate initialisation: the gradient vanishes at w0");
        return Ok(T::zero());
    }
    Ok(g / denom)
}
