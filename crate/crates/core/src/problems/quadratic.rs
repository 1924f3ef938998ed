use nalgebra::{DMatrix, DVector};

use super::{Layout, Objective};
use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, Real};

/// `F(w) = ½ (w − c)ᵀ A (w − c)` with `A` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct Quadratic<T: Real> {
    a: DMatrix<T>,
    center: DVector<T>,
}

impl<T: Real> Quadratic<T> {
    pub fn new(a: DMatrix<T>, center: DVector<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(invalid("quadratic form must be square"));
        }
        if center.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "quadratic center",
                expected: a.nrows(),
                got: center.len(),
            });
        }
        if !all_finite(a.iter()) || !all_finite(center.iter()) {
            return Err(Error::NonFinite("quadratic"));
        }
        let a = crate::spectral::symmetrize(&a);
        let eig = crate::spectral::sym_eig(&a)?;
        let scale = eig.eigenvalues.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if eig.eigenvalues.iter().any(|l| *l < -T::lit(1e-12) * (T::one() + scale)) {
            return Err(invalid("quadratic form must be positive semidefinite"));
        }
        Ok(Self { a, center })
    }

    /// `F(w) = ½ Σ aᵢ wᵢ²`.
    pub fn diagonal(diag: &[T]) -> Result<Self> {
        let d = diag.len();
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            DVector::zeros(d),
        )
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }
}

impl<T: Real> Objective<T> for Quadratic<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, w: &DVector<T>) -> T {
        let r = w - &self.center;
        T::lit(0.5) * r.dot(&(&self.a * &r))
    }

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        let r = w - &self.center;
        out.gemv(T::one(), &self.a, &r, T::zero());
    }

    fn hessian(&self, _w: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }

    fn hessian_vec(&self, _w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        &self.a * v
    }

    fn layout(&self) -> Layout {
        Layout::Flat { dim: self.dim() }
    }
}
