//! Basis pursuit `min ‖β‖₁ s.t. Xβ = y`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Options {
    /// Duality-gap target; defaults to `1e-7 · (1 + ‖y‖)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 500_000,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution<T: Real> {
    pub beta: DVector<T>,
    pub l1_norm: T,
    /// Certified duality gap `‖β‖₁ − yᵀν` with `‖Xᵀν‖_∞ ≤ 1`.
    pub gap: T,
    pub iterations: usize,
}

fn soft<T: Real>(x: T, k: T) -> T {
    if x > k {
        x - k
    } else if x < -k {
        x + k
    } else {
        T::zero()
    }
}

fn l1<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |a, x| a + x.abs())
}

/// ADMM on the split `β = z` with `β` constrained to the affine set and `z`
/// carrying the ℓ₁ term. Stops once the dual certificate closes the gap.
pub fn l1_min_interpolant<T: Real>(x: &DMatrix<T>, y: &DVector<T>, opts: L1Options) -> Result<L1Solution<T>> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "basis pursuit targets",
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 || n > d {
        return Err(invalid("basis pursuit needs 1 <= n <= d"));
    }
    let chol = Cholesky::new(x * x.transpose()).ok_or_else(|| invalid("design must have full row rank"))?;
    let tol = T::lit(opts.tol.unwrap_or(1e-7 * (1.0 + y.norm().as_f64())));
    // projection onto {β : Xβ = y}
    let project = |v: &DVector<T>| -> DVector<T> {
        let r = x * v - y;
        v - x.transpose() * chol.solve(&r)
    };
    let mut rho = T::lit(opts.rho);
    let mut z = project(&DVector::zeros(d));
    let mut u = DVector::<T>::zeros(d);
    let mut best: Option<(T, DVector<T>)> = None;
    for it in 1..=opts.max_iter {
        let beta = project(&(&z - &u));
        let z_old = z.clone();
        let k = T::one() / rho;
        z = (&beta + &u).map(|v| soft(v, k));
        u += &beta - &z;

        if it % 10 == 0 || it == opts.max_iter {
            // ρu ∈ ∂‖z‖₁ and lies near the row space; its least-squares
            // preimage, rescaled into the dual ball, certifies the primal.
            let mut nu = chol.solve(&(x * (&u * rho)));
            let scale = (x.transpose() * &nu).amax();
            if scale > T::one() {
                nu /= scale;
            }
            let mut dual = y.dot(&nu);
            let mut beta = beta;
            if let Some((b, d)) = polish(x, y, &z, tol) {
                if l1(&b) <= l1(&beta) {
                    beta = b;
                }
                dual = dual.max(d);
            }
            let primal = l1(&beta);
            let gap = primal - dual;
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, beta.clone()));
            }
            if gap <= tol {
                return Ok(L1Solution {
                    l1_norm: primal,
                    beta,
                    gap,
                    iterations: it,
                });
            }
            let r = (&beta - &z).norm();
            let s = (&z - &z_old).norm() * rho;
            let two = T::lit(2.0);
            if r > T::lit(10.0) * s {
                rho *= two;
                u /= two;
            } else if s > T::lit(10.0) * r {
                rho /= two;
                u *= two;
            }
        }
    }
    let gap = best.map_or(T::infinity(), |(g, _)| g);
    Err(Error::OracleFailure {
        iterations: opts.max_iter,
        gap: gap.as_f64(),
    })
}

/// Basic solution on the support of `z` and the dual point solving
/// `X_Sᵀν = sign(z_S)`, rescaled into `‖Xᵀν‖_∞ ≤ 1`.
fn polish<T: Real>(x: &DMatrix<T>, y: &DVector<T>, z: &DVector<T>, tol: T) -> Option<(DVector<T>, T)> {
    let (n, d) = x.shape();
    let cut = z.amax() * T::lit(1e-8);
    let support: Vec<usize> = (0..d).filter(|&j| z[j].abs() > cut).collect();
    if support.is_empty() || support.len() > n {
        return None;
    }
    let xs = DMatrix::from_fn(n, support.len(), |r, c| x[(r, support[c])]);
    let eps = T::eps() * T::lit(100.0);
    let bs = xs.clone().svd(true, true).solve(y, eps).ok()?;
    if (&xs * &bs - y).norm() > tol {
        return None;
    }
    let signs = DVector::from_iterator(support.len(), support.iter().map(|&j| z[j].signum()));
    let mut nu = xs.transpose().svd(true, true).solve(&signs, eps).ok()?;
    let scale = (x.transpose() * &nu).amax();
    if scale > T::one() {
        nu /= scale;
    }
    let mut beta = DVector::zeros(d);
    for (k, &j) in support.iter().enumerate() {
        beta[j] = bs[k];
    }
    Some((beta, y.dot(&nu)))
}

/// Exhaustive minimum over basic solutions supported on `n` columns.
pub fn l1_min_enumerate<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<(T, DVector<T>)> {
    let (n, d) = x.shape();
    if d > 24 {
        return Err(invalid("support enumeration limited to d <= 24"));
    }
    if y.len() != n || n == 0 || n > d {
        return Err(invalid("enumeration needs 1 <= n <= d and matching targets"));
    }
    let mut best: Option<(T, DVector<T>)> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sub = DMatrix::from_fn(n, n, |r, c| x[(r, idx[c])]);
        if let Some(lu) = sub.clone().lu().solve(y) {
            let resid = (&sub * &lu - y).norm();
            if resid <= T::lit(1e-9) * (T::one() + y.norm()) {
                let val = l1(&lu);
                if best.as_ref().is_none_or(|(b, _)| val < *b) {
                    let mut beta = DVector::zeros(d);
                    for (k, &j) in idx.iter().enumerate() {
                        beta[j] = lu[k];
                    }
                    best = Some((val, beta));
                }
            }
        }
        // next combination in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                return best.ok_or_else(|| invalid("no nonsingular support found"));
            }
            i -= 1;
            if idx[i] < d - n + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_design() {
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = l1_min_interpolant(&x, &y, L1Options::default()).unwrap();
        assert!((s.beta - y).norm() < 1e-7);
    }

    #[test]
    fn cross_polytope_face() {
        let x = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0]);
        let s = l1_min_interpolant(&x, &y, L1Options::default()).unwrap();
        assert!((s.l1_norm - 1.0).abs() < 1e-6);
        assert!((&x * &s.beta - &y).norm() <= 1e-7 * 2.0);
    }

    #[test]
    fn matches_enumeration() {
        for seed in 0..6 {
            let mut g = rng::seeded(seed);
            let (n, d) = (2 + seed as usize % 5, 8 + seed as usize % 5);
            let x = rng::gaussian_matrix::<f64>(&mut g, n, d, 1.0);
            let y = rng::gaussian_vector::<f64>(&mut g, n, 1.0);
            let s = l1_min_interpolant(&x, &y, L1Options::default()).unwrap();
            let (best, _) = l1_min_enumerate(&x, &y).unwrap();
            assert!((s.l1_norm - best).abs() <= 1e-6, "seed {seed}: {} vs {best}", s.l1_norm);
            assert!((&x * &s.beta - &y).norm() <= 1e-7 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn reports_non_convergence() {
        let mut g = rng::seeded(9);
        let x = rng::gaussian_matrix::<f64>(&mut g, 3, 9, 1.0);
        let y = rng::gaussian_vector::<f64>(&mut g, 3, 1.0);
        let opts = L1Options {
            tol: Some(1e-14),
            max_iter: 1,
            rho: 1.0,
        };
        assert!(matches!(l1_min_interpolant(&x, &y, opts), Err(Error::OracleFailure { .. })));
    }
}
