use nalgebra::{DMatrix, DVector};

use super::Objective;
use crate::scalar::Real;

/// Relative Frobenius errors of the analytic derivatives against central
/// differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub grad_rel_error: f64,
    pub hess_rel_error: f64,
}

fn rel_err<T: Real>(approx: T, exact: T, diff: T) -> f64 {
    let scale = approx.max(exact);
    if scale <= T::eps() {
        diff.as_f64()
    } else {
        (diff / scale).as_f64()
    }
}

/// Finite-difference check with step `1e-5 · (1 + ‖w‖∞)`.
pub fn fd_check<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>) -> FdReport {
    let winf = w.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    fd_check_with_step(p, w, T::lit(1e-5) * (T::one() + winf))
}

pub fn fd_check_with_step<T: Real, P: Objective<T> + ?Sized>(p: &P, w: &DVector<T>, h: T) -> FdReport {
    let d = p.dim();
    let two_h = h + h;
    let mut g_fd = DVector::zeros(d);
    let mut h_fd = DMatrix::zeros(d, d);
    let mut wp = w.clone();
    let mut gp = DVector::zeros(d);
    let mut gm = DVector::zeros(d);
    for i in 0..d {
        let wi = w[i];
        wp[i] = wi + h;
        let fp = p.value(&wp);
        p.gradient_into(&wp, &mut gp);
        wp[i] = wi - h;
        let fm = p.value(&wp);
        p.gradient_into(&wp, &mut gm);
        wp[i] = wi;
        g_fd[i] = (fp - fm) / two_h;
        h_fd.set_column(i, &((&gp - &gm) / two_h));
    }
    let h_fd = crate::spectral::symmetrize(&h_fd);
    let g = p.gradient(w);
    let hess = p.hessian(w);
    FdReport {
        grad_rel_error: rel_err(g_fd.norm(), g.norm(), (&g_fd - &g).norm()),
        hess_rel_error: rel_err(h_fd.norm(), hess.norm(), (&h_fd - &hess).norm()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Quadratic;

    #[test]
    fn quadratic_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = Quadratic::new(a, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let rep = fd_check(&q, &DVector::from_vec(vec![0.3, 2.0]));
        assert!(rep.grad_rel_error <= 1e-9, "{rep:?}");
        assert!(rep.hess_rel_error <= 1e-9, "{rep:?}");
    }
}
