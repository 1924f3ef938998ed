use nalgebra::{DMatrix, DVector};

use super::{DataSet, Inputs, Layout, LossScale, Objective};
use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, Real};

/// Overparameterised least squares `F(w) = ½ ‖Xw − y‖²`, `X ∈ R^{n×d}`, `n ≤ d`.
#[derive(Debug, Clone)]
pub struct LinearRegression<T: Real> {
    x: DMatrix<T>,
    y: DVector<T>,
    gram: DMatrix<T>,
    data: DataSet<T>,
    min_norm: DVector<T>,
    sigma_min: T,
    sigma_max: T,
    rank_deficient: bool,
}

impl<T: Real> LinearRegression<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "regression targets",
                expected: n,
                got: y.len(),
            });
        }
        if n == 0 || n > d {
            return Err(invalid(format!(
                "linear regression requires 1 <= n <= d, got n = {n}, d = {d}"
            )));
        }
        if !all_finite(x.iter()) || !all_finite(y.iter()) {
            return Err(Error::NonFinite("regression data"));
        }
        let svd = crate::spectral::svd(&x)?;
        let sigma_max = svd.singular_values[0];
        let sigma_min = svd.singular_values[n - 1];
        let rank_deficient = sigma_min < T::lit(1e-10) * sigma_max;
        if rank_deficient {
            log::warn!(
                "design matrix is numerically rank deficient (sigma_min/sigma_max = {:e})",
                (sigma_min / sigma_max).as_f64()
            );
        }
        let min_norm = crate::spectral::pinv_apply(&x, &y)?;
        let data = DataSet::new(Inputs::Features(x.clone()), y.iter().copied().collect())?;
        Ok(Self {
            gram: x.transpose() * &x,
            x,
            y,
            data,
            min_norm,
            sigma_min,
            sigma_max,
            rank_deficient,
        })
    }

    pub fn design(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn targets(&self) -> &DVector<T> {
        &self.y
    }

    pub fn data(&self) -> &DataSet<T> {
        &self.data
    }

    /// `X⁺ y`.
    pub fn min_norm_solution(&self) -> &DVector<T> {
        &self.min_norm
    }

    pub fn sigma_min(&self) -> T {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> T {
        self.sigma_max
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn loss_scale(&self) -> LossScale {
        LossScale::HalfSum
    }
}

impl<T: Real> Objective<T> for LinearRegression<T> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, w: &DVector<T>) -> T {
        let r = &self.x * w - &self.y;
        T::lit(0.5) * r.norm_squared()
    }

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        let r = &self.x * w - &self.y;
        out.gemv_tr(T::one(), &self.x, &r, T::zero());
    }

    fn hessian(&self, _w: &DVector<T>) -> DMatrix<T> {
        self.gram.clone()
    }

    fn hessian_vec(&self, _w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        self.x.transpose() * (&self.x * v)
    }

    fn layout(&self) -> Layout {
        Layout::Flat { dim: self.dim() }
    }

    fn extra_names(&self) -> Vec<String> {
        vec!["min_norm_distance".into()]
    }

    fn extras(&self, w: &DVector<T>) -> Vec<T> {
        vec![(w - &self.min_norm).norm()]
    }
}
