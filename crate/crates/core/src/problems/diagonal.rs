use nalgebra::{DMatrix, DVector};

use super::{DataSet, Inputs, Layout, LossScale, Objective};
use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, Real};

/// Diagonal linear network `F(u, v) = s · ½ ‖X(u⊙u − v⊙v) − y‖²`, with
/// `s = 1` or `1/n` depending on the [`LossScale`].
///
/// The effective linear predictor is `β = u⊙u − v⊙v`.
#[derive(Debug, Clone)]
pub struct DiagonalNet<T: Real> {
    x: DMatrix<T>,
    y: DVector<T>,
    gram: DMatrix<T>,
    scale: LossScale,
    data: DataSet<T>,
    test: Option<DataSet<T>>,
}

impl<T: Real> DiagonalNet<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        Self::with_scale(x, y, LossScale::HalfSum)
    }

    pub fn with_scale(x: DMatrix<T>, y: DVector<T>, scale: LossScale) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "diagonal net targets",
                expected: n,
                got: y.len(),
            });
        }
        if n == 0 || n > d {
            return Err(invalid(format!(
                "diagonal network requires 1 <= n <= d, got n = {n}, d = {d}"
            )));
        }
        if !all_finite(x.iter()) || !all_finite(y.iter()) {
            return Err(Error::NonFinite("diagonal net data"));
        }
        let data = DataSet::new(Inputs::Features(x.clone()), y.iter().copied().collect())?;
        Ok(Self {
            gram: x.transpose() * &x,
            x,
            y,
            scale,
            data,
            test: None,
        })
    }

    /// Attaches held-out feature rows and targets.
    pub fn with_test_set(mut self, x_test: DMatrix<T>, y_test: Vec<T>) -> Result<Self> {
        if x_test.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "test features",
                expected: self.x.ncols(),
                got: x_test.ncols(),
            });
        }
        self.test = Some(DataSet::new(Inputs::Features(x_test), y_test)?);
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
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

    pub fn test_data(&self) -> Option<&DataSet<T>> {
        self.test.as_ref()
    }

    /// `β(w) = u⊙u − v⊙v`.
    pub fn beta(&self, w: &DVector<T>) -> DVector<T> {
        let d = self.features();
        DVector::from_fn(d, |i, _| w[i] * w[i] - w[d + i] * w[d + i])
    }

    /// Predictions `⟨β, x⟩` for the rows of `x`.
    pub fn predict(&self, w: &DVector<T>, x: &DMatrix<T>) -> DVector<T> {
        x * self.beta(w)
    }

    fn s(&self) -> T {
        self.scale.factor(self.x.nrows())
    }

    /// `s · Xᵀ(Xβ − y)`.
    fn outer_grad(&self, beta: &DVector<T>) -> DVector<T> {
        let r = &self.x * beta - &self.y;
        self.x.transpose() * r * self.s()
    }
}

impl<T: Real> Objective<T> for DiagonalNet<T> {
    fn dim(&self) -> usize {
        2 * self.features()
    }

    fn value(&self, w: &DVector<T>) -> T {
        let r = &self.x * self.beta(w) - &self.y;
        T::lit(0.5) * self.s() * r.norm_squared()
    }

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        let d = self.features();
        let g = self.outer_grad(&self.beta(w));
        let two = T::lit(2.0);
        for i in 0..d {
            out[i] = two * w[i] * g[i];
            out[d + i] = -two * w[d + i] * g[i];
        }
    }

    fn hessian(&self, w: &DVector<T>) -> DMatrix<T> {
        let d = self.features();
        let g = self.outer_grad(&self.beta(w));
        let four_s = T::lit(4.0) * self.s();
        // signed per-coordinate Jacobian of β: (2u, −2v)
        let c = |k: usize| if k < d { w[k] } else { -w[k] };
        let mut h = DMatrix::from_fn(2 * d, 2 * d, |a, b| four_s * c(a) * c(b) * self.gram[(a % d, b % d)]);
        let two = T::lit(2.0);
        for i in 0..d {
            h[(i, i)] += two * g[i];
            h[(d + i, d + i)] -= two * g[i];
        }
        h
    }

    fn hessian_vec(&self, w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let d = self.features();
        let g = self.outer_grad(&self.beta(w));
        let two = T::lit(2.0);
        let dbeta = DVector::from_fn(d, |i, _| two * (w[i] * v[i] - w[d + i] * v[d + i]));
        let dg = &self.gram * dbeta * self.s();
        let mut out = DVector::zeros(2 * d);
        for i in 0..d {
            out[i] = two * (w[i] * dg[i] + v[i] * g[i]);
            out[d + i] = -two * (w[d + i] * dg[i] + v[d + i] * g[i]);
        }
        out
    }

    fn layout(&self) -> Layout {
        Layout::Diagonal { d: self.features() }
    }

    fn extra_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.test.is_some() {
            names.push("test_loss".to_string());
        }
        names.push("beta_l1".to_string());
        names
    }

    fn extras(&self, w: &DVector<T>) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(t) = self.test_loss(w) {
            out.push(t);
        }
        out.push(self.beta(w).iter().fold(T::zero(), |a, b| a + b.abs()));
        out
    }

    /// Mean squared error on the attached test set.
    fn test_loss(&self, w: &DVector<T>) -> Option<T> {
        let test = self.test.as_ref()?;
        let Inputs::Features(xt) = &test.inputs else {
            return None;
        };
        let pred = self.predict(w, xt);
        let n = T::from_usize_lossy(test.len().max(1));
        let sse = pred
            .iter()
            .zip(&test.targets)
            .fold(T::zero(), |a, (p, y)| a + (*p - *y) * (*p - *y));
        Some(sse / n)
    }
}

/// Fourier feature map
/// `φ(x) = [1, cos(πx/2), …, cos(π d_f x/2), sin(πx/2), …, sin(π d_f x/2)]`.
pub fn fourier_features<T: Real>(x: T, d_f: usize) -> Vec<T> {
    let half_pi = T::frac_pi_2();
    let mut row = Vec::with_capacity(2 * d_f + 1);
    row.push(T::one());
    row.extend((1..=d_f).map(|k| (half_pi * T::from_usize_lossy(k) * x).cos()));
    row.extend((1..=d_f).map(|k| (half_pi * T::from_usize_lossy(k) * x).sin()));
    row
}

/// Sparse Fourier teacher `1 + cos(6πx/2) + sin(21πx/2)`.
pub fn fourier_teacher<T: Real>(x: T) -> T {
    let half_pi = T::frac_pi_2();
    T::one() + (half_pi * T::lit(6.0) * x).cos() + (half_pi * T::lit(21.0) * x).sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{fd_check, test_util::hessian_vec_matches_columns};
    use crate::rng;

    fn instance(seed: u64) -> (DiagonalNet<f64>, DVector<f64>) {
        let mut g = rng::seeded(seed);
        let x = rng::gaussian_matrix(&mut g, 2, 5, 1.0);
        let y = rng::gaussian_vector(&mut g, 2, 1.0);
        let p = DiagonalNet::new(x, y).unwrap();
        let w = rng::gaussian_vector(&mut g, 10, 1.0);
        (p, w)
    }

    #[test]
    fn symmetric_weights_cancel() {
        let (p, w) = instance(1);
        let d = p.features();
        let mut sym = w.clone();
        for i in 0..d {
            sym[d + i] = sym[i];
        }
        assert!(p.beta(&sym).norm() == 0.0);
        assert!((p.value(&sym) - 0.5 * p.targets().norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..5 {
            let (p, w) = instance(seed);
            let rep = fd_check(&p, &w);
            assert!(rep.grad_rel_error <= 1e-6, "{rep:?}");
            assert!(rep.hess_rel_error <= 1e-6, "{rep:?}");
            assert!(hessian_vec_matches_columns(&p, &w) <= 1e-10);
        }
    }

    #[test]
    fn sign_flips_leave_value_unchanged() {
        let (p, w) = instance(3);
        let mut f = w.clone();
        f[0] = -f[0];
        f[7] = -f[7];
        assert!((p.value(&f) - p.value(&w)).abs() <= 1e-12);
    }

    #[test]
    fn fourier_config_dimensions() {
        let row = fourier_features(0.3f64, 30);
        assert_eq!(row.len(), 61);
        assert_eq!(row[0], 1.0);
        assert!((row[6] - (3.0 * std::f64::consts::PI * 0.3).cos()).abs() < 1e-14);
        assert!((fourier_teacher(0.0f64) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mean_scale_divides_by_n() {
        let (p, w) = instance(6);
        let q = DiagonalNet::with_scale(p.design().clone(), p.targets().clone(), LossScale::HalfMean).unwrap();
        assert!((q.value(&w) * 2.0 - p.value(&w)).abs() < 1e-12);
        let rep = fd_check(&q, &w);
        assert!(rep.grad_rel_error <= 1e-6);
    }
}
