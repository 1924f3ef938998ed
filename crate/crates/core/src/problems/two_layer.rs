use nalgebra::{DMatrix, DVector};

use super::{DataSet, Inputs, Layout, LossScale, Objective};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `max(z, 0)` with `ReLU'(0) = 0`; second derivative taken as zero.
    Relu,
    /// `log(1 + e^{βz}) / β`.
    Softplus { beta: f64 },
}

impl Activation {
    /// `(σ(z), σ'(z), σ''(z))`.
    #[inline]
    fn eval<T: Real>(self, z: T) -> (T, T, T) {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
            Activation::Softplus { beta } => {
                let b = T::lit(beta);
                let bz = b * z;
                let value = if bz > T::zero() {
                    z + (-bz).exp().ln_1p() / b
                } else {
                    bz.exp().ln_1p() / b
                };
                let sig = if bz >= T::zero() {
                    T::one() / (T::one() + (-bz).exp())
                } else {
                    let e = bz.exp();
                    e / (T::one() + e)
                };
                (value, sig, b * sig * (T::one() - sig))
            }
        }
    }
}

/// One term `weight · ReLU(x − kink)` of a teacher function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluUnit {
    pub weight: f64,
    pub kink: f64,
}

/// Teacher `x ↦ Σ weight_k · ReLU(x − kink_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluTeacher {
    pub units: Vec<ReluUnit>,
}

impl Default for ReluTeacher {
    /// `ReLU(x+1) − 2·ReLU(x) + 1.5·ReLU(x−1)`.
    fn default() -> Self {
        Self {
            units: vec![
                ReluUnit { weight: 1.0, kink: -1.0 },
                ReluUnit { weight: -2.0, kink: 0.0 },
                ReluUnit { weight: 1.5, kink: 1.0 },
            ],
        }
    }
}

impl ReluTeacher {
    pub fn eval<T: Real>(&self, x: T) -> T {
        self.units.iter().fold(T::zero(), |acc, u| {
            let z = x - T::lit(u.kink);
            acc + T::lit(u.weight) * if z > T::zero() { z } else { T::zero() }
        })
    }
}

/// Two-layer scalar network `f_w(x) = Σⱼ uⱼ σ(vⱼ x + bⱼ)` trained on
/// `F(w) = 1/(2n) Σᵢ (f_w(xᵢ) − yᵢ)²`.
///
/// Parameters pack `(u, v, b)`, each of length `width`.
#[derive(Debug, Clone)]
pub struct TwoLayerNet<T: Real> {
    x: Vec<T>,
    y: Vec<T>,
    width: usize,
    activation: Activation,
    scale: LossScale,
    data: DataSet<T>,
    test: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> TwoLayerNet<T> {
    pub fn new(train: DataSet<T>, width: usize, activation: Activation) -> Result<Self> {
        if width == 0 {
            return Err(invalid("network width must be at least 1"));
        }
        if train.is_empty() {
            return Err(invalid("training set must be nonempty"));
        }
        if let Activation::Softplus { beta } = activation {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(invalid(format!("softplus sharpness must be positive, got {beta}")));
            }
        }
        let Inputs::Scalars(x) = &train.inputs else {
            return Err(invalid("two-layer network expects scalar inputs"));
        };
        if !crate::scalar::all_finite(x.iter()) {
            return Err(Error::NonFinite("network inputs"));
        }
        Ok(Self {
            x: x.clone(),
            y: train.targets.clone(),
            width,
            activation,
            scale: LossScale::HalfMean,
            data: train,
            test: None,
        })
    }

    pub fn with_test_set(mut self, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        let ds = DataSet::new(Inputs::Scalars(x), y)?;
        let Inputs::Scalars(x) = ds.inputs else { unreachable!() };
        self.test = Some((x, ds.targets));
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn data(&self) -> &DataSet<T> {
        &self.data
    }

    pub fn prediction(&self, w: &DVector<T>, x: T) -> T {
        let m = self.width;
        let mut out = T::zero();
        for j in 0..m {
            let (a, _, _) = self.activation.eval(w[m + j] * x + w[2 * m + j]);
            out += w[j] * a;
        }
        out
    }

    fn s(&self) -> T {
        self.scale.factor(self.x.len())
    }

    /// Jacobian row of `f_w(x)` and the residual for every sample.
    fn for_each_sample(&self, w: &DVector<T>, mut f: impl FnMut(T, T, &[(T, T, T)])) {
        let m = self.width;
        let mut acts = vec![(T::zero(), T::zero(), T::zero()); m];
        for (&xi, &yi) in self.x.iter().zip(&self.y) {
            let mut pred = T::zero();
            for j in 0..m {
                acts[j] = self.activation.eval(w[m + j] * xi + w[2 * m + j]);
                pred += w[j] * acts[j].0;
            }
            f(xi, pred - yi, &acts);
        }
    }

    fn jacobian_into(&self, w: &DVector<T>, x: T, acts: &[(T, T, T)], out: &mut [T]) {
        let m = self.width;
        for j in 0..m {
            let (a, da, _) = acts[j];
            out[j] = a;
            out[m + j] = w[j] * da * x;
            out[2 * m + j] = w[j] * da;
        }
    }
}

impl<T: Real> Objective<T> for TwoLayerNet<T> {
    fn dim(&self) -> usize {
        3 * self.width
    }

    fn value(&self, w: &DVector<T>) -> T {
        let mut acc = T::zero();
        self.for_each_sample(w, |_, r, _| acc += r * r);
        T::lit(0.5) * self.s() * acc
    }

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        let s = self.s();
        let mut jac = vec![T::zero(); self.dim()];
        out.fill(T::zero());
        self.for_each_sample(w, |x, r, acts| {
            self.jacobian_into(w, x, acts, &mut jac);
            for (o, j) in out.iter_mut().zip(&jac) {
                *o += s * r * *j;
            }
        });
    }

    fn hessian(&self, w: &DVector<T>) -> DMatrix<T> {
        let m = self.width;
        let d = self.dim();
        let s = self.s();
        let mut h = DMatrix::zeros(d, d);
        let mut jac = vec![T::zero(); d];
        self.for_each_sample(w, |x, r, acts| {
            self.jacobian_into(w, x, acts, &mut jac);
            for a in 0..d {
                let ja = s * jac[a];
                if ja == T::zero() {
                    continue;
                }
                for b in 0..d {
                    h[(a, b)] += ja * jac[b];
                }
            }
            let sr = s * r;
            for j in 0..m {
                let (_, da, dda) = acts[j];
                let (iu, iv, ib) = (j, m + j, 2 * m + j);
                let uv = sr * da * x;
                let ub = sr * da;
                h[(iu, iv)] += uv;
                h[(iv, iu)] += uv;
                h[(iu, ib)] += ub;
                h[(ib, iu)] += ub;
                let c = sr * w[j] * dda;
                h[(iv, iv)] += c * x * x;
                h[(iv, ib)] += c * x;
                h[(ib, iv)] += c * x;
                h[(ib, ib)] += c;
            }
        });
        h
    }

    fn hessian_vec(&self, w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let m = self.width;
        let d = self.dim();
        let s = self.s();
        let mut out = DVector::zeros(d);
        let mut jac = vec![T::zero(); d];
        self.for_each_sample(w, |x, r, acts| {
            self.jacobian_into(w, x, acts, &mut jac);
            let jd = jac.iter().zip(v.iter()).fold(T::zero(), |a, (j, vi)| a + *j * *vi);
            for (o, j) in out.iter_mut().zip(&jac) {
                *o += s * jd * *j;
            }
            let sr = s * r;
            for j in 0..m {
                let (_, da, dda) = acts[j];
                let (vu, vv, vb) = (v[j], v[m + j], v[2 * m + j]);
                let c = w[j] * dda;
                out[j] += sr * da * (x * vv + vb);
                out[m + j] += sr * (da * x * vu + c * x * (x * vv + vb));
                out[2 * m + j] += sr * (da * vu + c * (x * vv + vb));
            }
        });
        out
    }

    fn layout(&self) -> Layout {
        Layout::TwoLayer { width: self.width }
    }

    fn is_smooth(&self) -> bool {
        !matches!(self.activation, Activation::Relu)
    }

    fn extra_names(&self) -> Vec<String> {
        if self.test.is_some() {
            vec!["test_loss".to_string()]
        } else {
            Vec::new()
        }
    }

    fn extras(&self, w: &DVector<T>) -> Vec<T> {
        self.test_loss(w).into_iter().collect()
    }

    /// Mean squared error on the attached test points.
    fn test_loss(&self, w: &DVector<T>) -> Option<T> {
        let (x, y) = self.test.as_ref()?;
        let sse = x.iter().zip(y).fold(T::zero(), |a, (&xi, &yi)| {
            let e = self.prediction(w, xi) - yi;
            a + e * e
        });
        Some(sse / T::from_usize_lossy(x.len().max(1)))
    }
}
