//! Differentiable training objectives with analytic derivatives.
//!
//! Every objective is a nonnegative squared loss. The residual sums carry a
//! factor ½ so that for linear regression the Hessian is exactly `XᵀX`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

mod diagonal;
mod fd;
mod linear;
mod matrix;
mod quadratic;
mod two_layer;

pub use diagonal::{fourier_features, fourier_teacher, DiagonalNet};
pub use fd::{fd_check, fd_check_with_step, FdReport};
pub use linear::LinearRegression;
pub use matrix::MatrixCompletion;
pub use quadratic::Quadratic;
pub use two_layer::{Activation, ReluTeacher, ReluUnit, TwoLayerNet};

/// Dense parameter vector `w ∈ Rᵈ`.
pub type ParamVector<T> = DVector<T>;

/// Normalisation of the residual sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossScale {
    /// `½ Σ rᵢ²`
    #[default]
    HalfSum,
    /// `1/(2n) Σ rᵢ²`
    HalfMean,
}

impl LossScale {
    pub(crate) fn factor<T: Real>(self, n: usize) -> T {
        match self {
            LossScale::HalfSum => T::one(),
            LossScale::HalfMean => T::one() / T::from_usize_lossy(n.max(1)),
        }
    }
}

/// How a flat parameter vector packs structured parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// Plain coordinates.
    Flat { dim: usize },
    /// `U ∈ R^{n×r}` row-major, followed by `V ∈ R^{m×r}` row-major.
    Factors { n: usize, m: usize, rank: usize },
    /// `u ∈ Rᵈ` followed by `v ∈ Rᵈ`.
    Diagonal { d: usize },
    /// Outer weights `u`, inner weights `v`, biases `b`, each of length `width`.
    TwoLayer { width: usize },
}

impl Layout {
    pub fn dim(&self) -> usize {
        match *self {
            Layout::Flat { dim } => dim,
            Layout::Factors { n, m, rank } => (n + m) * rank,
            Layout::Diagonal { d } => 2 * d,
            Layout::TwoLayer { width } => 3 * width,
        }
    }
}

/// Input side of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs<T: Real> {
    /// One feature vector per row.
    Features(DMatrix<T>),
    /// Scalar inputs (1-D regression).
    Scalars(Vec<T>),
    /// Observed matrix cells `(i, j)`.
    Cells(Vec<(usize, usize)>),
}

impl<T: Real> Inputs<T> {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Features(x) => x.nrows(),
            Inputs::Scalars(x) => x.len(),
            Inputs::Cells(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet<T: Real> {
    pub inputs: Inputs<T>,
    pub targets: Vec<T>,
}

impl<T: Real> DataSet<T> {
    pub fn new(inputs: Inputs<T>, targets: Vec<T>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset targets",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if !all_finite(targets.iter()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// One row per sample: input columns then the target.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.inputs {
            Inputs::Features(x) => {
                let hdr: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
                out.push_str(&hdr.join(","));
                out.push_str(",y\n");
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        out.push_str(&format!("{:e},", x[(i, j)].as_f64()));
                    }
                    out.push_str(&format!("{:e}\n", self.targets[i].as_f64()));
                }
            }
            Inputs::Scalars(x) => {
                out.push_str("x,y\n");
                for (xi, yi) in x.iter().zip(&self.targets) {
                    out.push_str(&format!("{:e},{:e}\n", xi.as_f64(), yi.as_f64()));
                }
            }
            Inputs::Cells(c) => {
                out.push_str("row,col,value\n");
                for ((i, j), v) in c.iter().zip(&self.targets) {
                    out.push_str(&format!("{i},{j},{:e}\n", v.as_f64()));
                }
            }
        }
        out
    }
}

/// A twice-differentiable objective `F: Rᵈ → R₊`.
///
/// Implementations assume `w` has the right length; use the checked free
/// functions of this module at API boundaries.
pub trait Objective<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, w: &DVector<T>) -> T;

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>);

    fn gradient(&self, w: &DVector<T>) -> DVector<T> {
        let mut g = DVector::zeros(self.dim());
        self.gradient_into(w, &mut g);
        g
    }

    /// Dense Hessian, symmetric.
    fn hessian(&self, w: &DVector<T>) -> DMatrix<T>;

    fn hessian_vec(&self, w: &DVector<T>, v: &DVector<T>) -> DVector<T>;

    fn layout(&self) -> Layout;

    /// `false` for objectives outside C³ (ReLU networks).
    fn is_smooth(&self) -> bool {
        true
    }

    /// Names of problem-specific observables, in the order of [`Objective::extras`].
    fn extra_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn extras(&self, _w: &DVector<T>) -> Vec<T> {
        Vec::new()
    }

    /// Generalisation error on held-out data, if the problem has any.
    fn test_loss(&self, _w: &DVector<T>) -> Option<T> {
        None
    }
}

/// `F_λ(w) = F(w) + λ/2 ‖w‖²`.
pub fn regularized_value<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>, lambda: T) -> T {
    p.value(w) + lambda * T::lit(0.5) * w.norm_squared()
}

pub(crate) fn check_param<T: Real>(dim: usize, w: &DVector<T>) -> Result<()> {
    if w.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: dim,
            got: w.len(),
        });
    }
    if !all_finite(w.iter()) {
        return Err(Error::NonFinite("parameter vector"));
    }
    Ok(())
}

/// Checked `F(w)`.
pub fn value<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> Result<T> {
    check_param(p.dim(), w)?;
    Ok(p.value(w))
}

/// Checked `∇F(w)`.
pub fn gradient<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> Result<DVector<T>> {
    check_param(p.dim(), w)?;
    Ok(p.gradient(w))
}

/// Checked `∇²F(w)`, symmetrised.
pub fn hessian<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> Result<DMatrix<T>> {
    check_param(p.dim(), w)?;
    Ok(crate::spectral::symmetrize(&p.hessian(w)))
}

/// Checked `∇²F(w) v`.
pub fn hessian_vec<T: Real, P: Objective<T> + ?Sized>(
    p: &P,
    w: &DVector<T>,
    v: &DVector<T>,
) -> Result<DVector<T>> {
    check_param(p.dim(), w)?;
    check_param(p.dim(), v)?;
    Ok(p.hessian_vec(w, v))
}

/// Closed set of the objectives shipped with the crate.
#[derive(Debug, Clone)]
pub enum Problem<T: Real> {
    Quadratic(Quadratic<T>),
    LinearRegression(LinearRegression<T>),
    MatrixCompletion(MatrixCompletion<T>),
    DiagonalNet(DiagonalNet<T>),
    TwoLayerNet(TwoLayerNet<T>),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::Quadratic($p) => $e,
            Problem::LinearRegression($p) => $e,
            Problem::MatrixCompletion($p) => $e,
            Problem::DiagonalNet($p) => $e,
            Problem::TwoLayerNet($p) => $e,
        }
    };
}

impl<T: Real> Problem<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::LinearRegression(_) => "linear_regression",
            Problem::MatrixCompletion(_) => "matrix_completion",
            Problem::DiagonalNet(_) => "diagonal_net",
            Problem::TwoLayerNet(_) => "two_layer_net",
        }
    }

    pub fn train_data(&self) -> Option<&DataSet<T>> {
        match self {
            Problem::Quadratic(_) => None,
            Problem::LinearRegression(p) => Some(p.data()),
            Problem::MatrixCompletion(p) => Some(p.data()),
            Problem::DiagonalNet(p) => Some(p.data()),
            Problem::TwoLayerNet(p) => Some(p.data()),
        }
    }
}

impl<T: Real> Objective<T> for Problem<T> {
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn value(&self, w: &DVector<T>) -> T {
        dispatch!(self, p => p.value(w))
    }
    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        dispatch!(self, p => p.gradient_into(w, out))
    }
    fn hessian(&self, w: &DVector<T>) -> DMatrix<T> {
        dispatch!(self, p => p.hessian(w))
    }
    fn hessian_vec(&self, w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        dispatch!(self, p => p.hessian_vec(w, v))
    }
    fn layout(&self) -> Layout {
        dispatch!(self, p => p.layout())
    }
    fn is_smooth(&self) -> bool {
        dispatch!(self, p => p.is_smooth())
    }
    fn extra_names(&self) -> Vec<String> {
        dispatch!(self, p => p.extra_names())
    }
    fn extras(&self, w: &DVector<T>) -> Vec<T> {
        dispatch!(self, p => p.extras(w))
    }
    fn test_loss(&self, w: &DVector<T>) -> Option<T> {
        dispatch!(self, p => p.test_loss(w))
    }
}

macro_rules! impl_from {
    ($($v:ident),*) => {$(
        impl<T: Real> From<$v<T>> for Problem<T> {
            fn from(p: $v<T>) -> Self {
                Problem::$v(p)
            }
        }
    )*};
}
impl_from!(Quadratic, LinearRegression, MatrixCompletion, DiagonalNet, TwoLayerNet);

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Column `i` of the Hessian against `H e_i`.
    pub fn hessian_vec_matches_columns<T: Real, P: Objective<T>>(p: &P, w: &DVector<T>) -> f64 {
        let h = p.hessian(w);
        let mut worst = 0.0f64;
        for i in 0..p.dim() {
            let mut e = DVector::zeros(p.dim());
            e[i] = T::one();
            let hv = p.hessian_vec(w, &e);
            let col = h.column(i).into_owned();
            let scale = col.norm().as_f64().max(h.norm().as_f64() * 1e-3).max(1e-300);
            worst = worst.max((hv - col).norm().as_f64() / scale);
        }
        worst
    }
}
