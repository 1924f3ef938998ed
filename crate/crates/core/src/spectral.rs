//! Dense symmetric eigendecomposition, SVD, pseudoinverse and Hessian
//! nullspace projectors.
//!
//! The decompositions are thin wrappers over nalgebra's dense routines with
//! input validation and a fixed ordering convention (eigenvalues ascending,
//! singular values descending).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, Real};

const MAX_SWEEPS: usize = 10_000;

/// Eigen-pairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig<T: Real> {
    pub eigenvalues: DVector<T>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> SymEig<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    /// `n × k` with orthonormal columns, `k = min(n, m)`.
    pub u: DMatrix<T>,
    /// Non-negative, descending.
    pub singular_values: DVector<T>,
    /// `m × k` with orthonormal columns.
    pub v: DMatrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let smax = self.singular_values.iter().copied().fold(T::zero(), T::max);
        if smax == T::zero() {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|s| **s > rel_tol * smax)
            .count()
    }
}

/// Thresholds used to classify an eigenvalue as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTolerances<T> {
    pub abs_tol: T,
    pub rel_tol: T,
}

impl<T: Real> Default for SpectralTolerances<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-8),
            rel_tol: T::lit(1e-6),
        }
    }
}

impl<T: Real> SpectralTolerances<T> {
    /// Pure absolute threshold, used when a curvature scale is already known.
    pub fn absolute(abs_tol: T) -> Self {
        Self {
            abs_tol,
            rel_tol: T::zero(),
        }
    }
}

/// Spectrum of a Hessian with its zero/nonzero split.
#[derive(Debug, Clone)]
pub struct SpectralProbe<T: Real> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
    /// Number of eigenvalues classified as zero.
    pub gap_index: usize,
    /// Smallest eigenvalue above the threshold; `+∞` if every eigenvalue is zero.
    pub eta_estimate: T,
    /// Orthogonal projector onto the zero eigenspace.
    pub projector: DMatrix<T>,
    /// Classification threshold actually used.
    pub threshold: T,
    /// Set when an eigenvalue lies below `-10 · threshold`: the point is not a
    /// local minimiser and the Morse–Bott picture does not apply.
    pub saddle: bool,
}

impl<T: Real> SpectralProbe<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn project(&self, w: &DVector<T>) -> DVector<T> {
        &self.projector * w
    }

    /// Orthonormal basis of the zero eigenspace (columns).
    pub fn nullspace_basis(&self) -> DMatrix<T> {
        let (zero_idx, _) = self.partition();
        select_columns(&self.eigenvectors, &zero_idx)
    }

    fn partition(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.dim()).partition(|&i| self.eigenvalues[i].abs() <= self.threshold)
    }
}

fn select_columns<T: Real>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

fn check_finite<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if all_finite(m.iter()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Symmetric part `(H + Hᵀ)/2`.
pub fn symmetrize<T: Real>(h: &DMatrix<T>) -> DMatrix<T> {
    (h + h.transpose()) * T::lit(0.5)
}

/// Eigendecomposition of a symmetric matrix; the input is symmetrised first.
pub fn sym_eig<T: Real>(h: &DMatrix<T>) -> Result<SymEig<T>> {
    if h.nrows() != h.ncols() {
        return Err(invalid(format!(
            "sym_eig needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    check_finite(h, "symmetric matrix")?;
    let d = h.nrows();
    if d == 0 {
        return Ok(SymEig {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(symmetrize(h), T::eps(), MAX_SWEEPS)
        .ok_or_else(|| invalid("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(SymEig {
        eigenvalues: DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i])),
        eigenvectors: select_columns(&eig.eigenvectors, &order),
    })
}

/// Thin SVD with singular values sorted descending.
///
/// One-sided Jacobi on the taller orientation: columns are rotated until
/// pairwise orthogonal to working precision, so small singular values keep
/// full relative accuracy. nalgebra's bidiagonal SVD misplaces them on
/// rank-deficient inputs.
pub fn svd<T: Real>(m: &DMatrix<T>) -> Result<Svd<T>> {
    check_finite(m, "matrix")?;
    let (n, p) = m.shape();
    if n < p {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    if p == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(p, 0),
        });
    }
    let mut a = m.clone();
    let mut v = DMatrix::<T>::identity(p, p);
    let eps = T::eps();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p - 1 {
            for j in i + 1..p {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(invalid("SVD did not converge"));
    }
    let sigma: Vec<T> = (0..p).map(|i| a.column(i).norm()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = DMatrix::<T>::zeros(n, p);
    let mut filled = Vec::with_capacity(p);
    for (k, &i) in order.iter().enumerate() {
        if sigma[i] > T::zero() {
            u.set_column(k, &(a.column(i) / sigma[i]));
            filled.push(k);
        }
    }
    // exact zeros: complete U to an orthonormal set
    let mut e = 0;
    for k in 0..p {
        if filled.contains(&k) {
            continue;
        }
        loop {
            let mut c = DVector::<T>::zeros(n);
            c[e % n] = T::one();
            e += 1;
            for &f in &filled {
                let dot = u.column(f).dot(&c);
                c.axpy(-dot, &u.column(f), T::one());
            }
            let norm = c.norm();
            if norm > T::lit(0.5) {
                u.set_column(k, &(c / norm));
                filled.push(k);
                break;
            }
        }
    }
    Ok(Svd {
        u,
        singular_values: DVector::from_iterator(p, order.iter().map(|&i| sigma[i])),
        v: select_columns(&v, &order),
    })
}

fn rotate_columns<T: Real>(m: &mut DMatrix<T>, i: usize, j: usize, c: T, s: T) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// Default relative cutoff for the pseudoinverse: `max(n, m) · ε`.
pub fn default_pinv_rcond<T: Real>(n: usize, m: usize) -> T {
    T::from_usize_lossy(n.max(m).max(1)) * T::eps()
}

/// Minimum-norm least-squares solution `M⁺ y`.
pub fn pinv_apply<T: Real>(m: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    pinv_apply_rcond(m, y, default_pinv_rcond(m.nrows(), m.ncols()))
}

/// `M⁺ y` with singular values below `rcond · σ_max` treated as zero.
pub fn pinv_apply_rcond<T: Real>(m: &DMatrix<T>, y: &DVector<T>, rcond: T) -> Result<DVector<T>> {
    if y.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            what: "pinv_apply right-hand side",
            expected: m.nrows(),
            got: y.len(),
        });
    }
    if !all_finite(y.iter()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let dec = svd(m)?;
    let smax = dec.singular_values.iter().copied().fold(T::zero(), T::max);
    let mut out = DVector::zeros(m.ncols());
    if smax == T::zero() {
        return Ok(out);
    }
    let cut = rcond * smax;
    for (i, s) in dec.singular_values.iter().enumerate() {
        if *s > cut {
            let coef = dec.u.column(i).dot(y) / *s;
            out.axpy(coef, &dec.v.column(i), T::one());
        }
    }
    Ok(out)
}

/// Classifies the spectrum of `h` and builds the projector onto its
/// (numerical) kernel.
///
/// An eigenvalue is zero when `|λ| ≤ max(abs_tol, rel_tol · max|λ|)`.
pub fn nullspace_projector<T: Real>(
    h: &DMatrix<T>,
    tol: SpectralTolerances<T>,
) -> Result<SpectralProbe<T>> {
    if !(tol.abs_tol > T::zero() || tol.rel_tol > T::zero())
        || tol.abs_tol < T::zero()
        || tol.rel_tol < T::zero()
    {
        return Err(invalid("spectral tolerances must be non-negative and not both zero"));
    }
    let eig = sym_eig(h)?;
    Ok(probe_from_eig(eig, tol))
}

pub(crate) fn probe_from_eig<T: Real>(eig: SymEig<T>, tol: SpectralTolerances<T>) -> SpectralProbe<T> {
    let d = eig.eigenvalues.len();
    let max_abs = eig.eigenvalues.iter().fold(T::zero(), |a, x| a.max(x.abs()));
    let threshold = tol.abs_tol.max(tol.rel_tol * max_abs);
    let mut projector = DMatrix::zeros(d, d);
    let mut gap_index = 0;
    let mut eta = T::infinity();
    let mut saddle = false;
    for i in 0..d {
        let lam = eig.eigenvalues[i];
        if lam.abs() <= threshold {
            gap_index += 1;
            let v = eig.eigenvectors.column(i);
            projector.ger(T::one(), &v, &v, T::one());
        } else if lam > threshold {
            eta = eta.min(lam);
        }
        if lam < -threshold * T::lit(10.0) {
            saddle = true;
        }
    }
    let projector = symmetrize(&projector);
    SpectralProbe {
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        gap_index,
        eta_estimate: eta,
        projector,
        threshold,
        saddle,
    }
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
pub fn spectral_norm_sym<T: Real>(h: &DMatrix<T>) -> Result<T> {
    if h.nrows() != h.ncols() {
        return Err(invalid("spectral norm needs a square matrix"));
    }
    check_finite(h, "symmetric matrix")?;
    let d = h.nrows();
    if d == 0 {
        return Ok(T::zero());
    }
    // Deterministic start with no special alignment to coordinate axes.
    let mut x = DVector::from_fn(d, |i, _| T::one() + T::lit(((i * 7919) % 97) as f64 / 97.0));
    x /= x.norm();
    let mut est = T::zero();
    // Power iteration on H² gives the dominant |λ| even with a ± pair at the top.
    for _ in 0..5000 {
        let y = h * &x;
        let z = h * &y;
        let nz = z.norm();
        if nz == T::zero() {
            return Ok(T::zero());
        }
        let new_est = y.norm();
        x = z / nz;
        if (new_est - est).abs() <= T::lit(1e-12) * new_est {
            return Ok(new_est.max(est));
        }
        est = new_est;
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn rank_one_rectangular_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = randn(&mut rng, 5, 1) * randn(&mut rng, 4, 1).transpose();
            let s = svd(&m).unwrap();
            assert!((s.reconstruct() - &m).norm() <= 1e-12 * m.norm());
            assert!((s.singular_values[0] - m.norm()).abs() <= 1e-12 * m.norm());
        }
    }

    #[test]
    fn diagonal_eigenpairs_are_sorted() {
        let h = DMatrix::<f64>::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let e = sym_eig(&h).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[0.0, 2.0]);
        assert!((e.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((e.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let e = sym_eig(&DMatrix::<f64>::zeros(3, 3)).unwrap();
        assert!(e.eigenvalues.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn eig_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 8, 8);
        let h = symmetrize(&a);
        let e = sym_eig(&h).unwrap();
        assert!((e.reconstruct() - &h).norm() <= 1e-9 * h.norm());
        assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_non_finite() {
        let mut h = DMatrix::<f64>::identity(2, 2);
        h[(0, 1)] = f64::NAN;
        assert_eq!(sym_eig(&h).unwrap_err(), Error::NonFinite("symmetric matrix"));
        assert!(svd(&h).is_err());
    }

    #[test]
    fn svd_examples() {
        let s = svd(&DMatrix::<f64>::identity(2, 2)).unwrap();
        assert!((s.singular_values[0] - 1.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);

        let u = DVector::<f64>::from_vec(vec![2.0, 0.0, 0.0]);
        let v = DVector::<f64>::from_vec(vec![0.0, 3.0, 0.0, 0.0]);
        let s = svd(&(&u * v.transpose())).unwrap();
        assert!((s.singular_values[0] - 6.0).abs() < 1e-12);
        assert!(s.singular_values.iter().skip(1).all(|x| x.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = randn(&mut rng, 5, 7);
        let s = svd(&m).unwrap();
        assert!((s.reconstruct() - &m).norm() <= 1e-9 * m.norm());
        assert!(s.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!((s.u.transpose() * &s.u - DMatrix::identity(5, 5)).norm() < 1e-12);
        assert!((s.v.transpose() * &s.v - DMatrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn pinv_examples() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let x = pinv_apply(&m, &DVector::from_vec(vec![3.0])).unwrap();
        assert!((x - DVector::from_vec(vec![3.0, 0.0])).norm() < 1e-14);

        let z = pinv_apply(&DMatrix::<f64>::zeros(2, 3), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(z, DVector::zeros(3));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = randn(&mut rng, 4, 4) + DMatrix::identity(4, 4) * 3.0;
        let b = DVector::from_fn(4, |i, _| i as f64 - 1.5);
        let direct = a.clone().lu().solve(&b).unwrap();
        let x = pinv_apply(&a, &b).unwrap();
        assert!((x - &direct).norm() <= 1e-9 * direct.norm());
    }

    #[test]
    fn pinv_dimension_mismatch() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            pinv_apply(&m, &DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projector_examples() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let p = nullspace_projector(&h, SpectralTolerances::default()).unwrap();
        assert_eq!(p.gap_index, 1);
        assert_eq!(p.eta_estimate, 2.0);
        assert!((p.projector.clone() - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).norm() < 1e-14);
        assert!(!p.saddle);

        let p = nullspace_projector(&DMatrix::<f64>::zeros(4, 4), SpectralTolerances::default()).unwrap();
        assert_eq!(p.gap_index, 4);
        assert!(p.eta_estimate.is_infinite());
        assert!((p.projector - DMatrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn projector_annihilates_row_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn(&mut rng, 3, 5);
        let p = nullspace_projector(&(x.transpose() * &x), SpectralTolerances::default()).unwrap();
        assert_eq!(p.gap_index, 2);
        assert!((&p.projector * x.transpose()).norm() <= 1e-8);
        // kernel from the SVD of X
        let s = svd(&x).unwrap();
        let row = &s.v * s.v.transpose();
        assert!((&p.projector + row - DMatrix::identity(5, 5)).norm() < 1e-9);
    }

    #[test]
    fn saddle_flag() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.0, 3.0]));
        let p = nullspace_projector(&h, SpectralTolerances::default()).unwrap();
        assert!(p.saddle);
        assert_eq!(p.gap_index, 1);
    }

    #[test]
    fn power_iteration_matches_eig() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = randn(&mut rng, 6, 6);
        let h = symmetrize(&a);
        let e = sym_eig(&h).unwrap();
        let exact = e.eigenvalues[0].abs().max(e.eigenvalues[5].abs());
        let est = spectral_norm_sym(&h).unwrap();
        assert!((est - exact).abs() < 1e-8 * exact, "{est} vs {exact}");
    }

    #[test]
    fn works_in_single_precision() {
        let h = DMatrix::<f32>::from_diagonal(&DVector::from_vec(vec![3.0, 0.0, 1.0]));
        let p = nullspace_projector(&h, SpectralTolerances::default()).unwrap();
        assert_eq!(p.gap_index, 1);
        assert_eq!(p.eta_estimate, 1.0);
    }
}
