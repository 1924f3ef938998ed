use nalgebra::{DMatrix, DVector};

use super::{DataSet, Inputs, Layout, Objective};
use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, Real};

/// Factorised matrix completion `F(U, V) = ½ Σ_{(i,j)∈Ω} ((UVᵀ)ᵢⱼ − M*ᵢⱼ)²`.
///
/// Parameters pack `U ∈ R^{n×r}` row-major followed by `V ∈ R^{m×r}`
/// row-major, so row `i` of `U` is the contiguous slice `w[i·r .. (i+1)·r]`.
#[derive(Debug, Clone)]
pub struct MatrixCompletion<T: Real> {
    target: DMatrix<T>,
    cells: Vec<(usize, usize)>,
    rank: usize,
    data: DataSet<T>,
}

impl<T: Real> MatrixCompletion<T> {
    pub fn new(target: DMatrix<T>, mask: Vec<(usize, usize)>, rank: usize) -> Result<Self> {
        let (n, m) = target.shape();
        if rank == 0 {
            return Err(invalid("factor rank must be at least 1"));
        }
        if mask.is_empty() {
            return Err(invalid("observed set must be nonempty"));
        }
        if !all_finite(target.iter()) {
            return Err(Error::NonFinite("target matrix"));
        }
        let mut cells = mask;
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= n || j >= m) {
            return Err(invalid(format!("observed cell ({i}, {j}) outside a {n}x{m} matrix")));
        }
        cells.sort_unstable();
        let before = cells.len();
        cells.dedup();
        if cells.len() != before {
            return Err(invalid("observed set contains duplicate cells"));
        }
        let targets = cells.iter().map(|&(i, j)| target[(i, j)]).collect();
        let data = DataSet::new(Inputs::Cells(cells.clone()), targets)?;
        Ok(Self {
            target,
            cells,
            rank,
            data,
        })
    }

    /// Every cell observed.
    pub fn full(target: DMatrix<T>, rank: usize) -> Result<Self> {
        let (n, m) = target.shape();
        let mask = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        Self::new(target, mask, rank)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn target(&self) -> &DMatrix<T> {
        &self.target
    }

    pub fn mask(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn data(&self) -> &DataSet<T> {
        &self.data
    }

    /// Splits `w` into `(U, V)`.
    pub fn unpack(&self, w: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let (n, m) = self.shape();
        let r = self.rank;
        let u = DMatrix::from_row_slice(n, r, &w.as_slice()[..n * r]);
        let v = DMatrix::from_row_slice(m, r, &w.as_slice()[n * r..]);
        (u, v)
    }

    pub fn pack(u: &DMatrix<T>, v: &DMatrix<T>) -> DVector<T> {
        let mut out = Vec::with_capacity(u.len() + v.len());
        for mat in [u, v] {
            for i in 0..mat.nrows() {
                out.extend(mat.row(i).iter().copied());
            }
        }
        DVector::from_vec(out)
    }

    /// `UVᵀ`.
    pub fn reconstruction(&self, w: &DVector<T>) -> DMatrix<T> {
        let (u, v) = self.unpack(w);
        u * v.transpose()
    }

    #[inline]
    fn rows<'a>(&self, w: &'a [T], i: usize, j: usize) -> (&'a [T], &'a [T]) {
        let r = self.rank;
        let off = self.target.nrows() * r;
        (&w[i * r..(i + 1) * r], &w[off + j * r..off + (j + 1) * r])
    }

    #[inline]
    fn residual(&self, w: &[T], i: usize, j: usize) -> T {
        let (ui, vj) = self.rows(w, i, j);
        let mut s = -self.target[(i, j)];
        for k in 0..self.rank {
            s += ui[k] * vj[k];
        }
        s
    }
}

impl<T: Real> Objective<T> for MatrixCompletion<T> {
    fn dim(&self) -> usize {
        let (n, m) = self.shape();
        (n + m) * self.rank
    }

    fn value(&self, w: &DVector<T>) -> T {
        let ws = w.as_slice();
        let mut acc = T::zero();
        for &(i, j) in &self.cells {
            let res = self.residual(ws, i, j);
            acc += res * res;
        }
        T::lit(0.5) * acc
    }

    fn gradient_into(&self, w: &DVector<T>, out: &mut DVector<T>) {
        let r = self.rank;
        let off = self.target.nrows() * r;
        let ws = w.as_slice();
        out.fill(T::zero());
        let gs = out.as_mut_slice();
        for &(i, j) in &self.cells {
            let res = self.residual(ws, i, j);
            for k in 0..r {
                let uik = ws[i * r + k];
                let vjk = ws[off + j * r + k];
                gs[i * r + k] += res * vjk;
                gs[off + j * r + k] += res * uik;
            }
        }
    }

    fn hessian(&self, w: &DVector<T>) -> DMatrix<T> {
        let r = self.rank;
        let off = self.target.nrows() * r;
        let ws = w.as_slice();
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for &(i, j) in &self.cells {
            let res = self.residual(ws, i, j);
            let (ui, vj) = self.rows(ws, i, j);
            let (bu, bv) = (i * r, off + j * r);
            for k in 0..r {
                for l in 0..r {
                    // Gauss–Newton part: ∇r ∇rᵀ with ∂r/∂U_ik = V_jk, ∂r/∂V_jk = U_ik
                    h[(bu + k, bu + l)] += vj[k] * vj[l];
                    h[(bv + k, bv + l)] += ui[k] * ui[l];
                    h[(bu + k, bv + l)] += vj[k] * ui[l];
                    h[(bv + l, bu + k)] += vj[k] * ui[l];
                }
                // residual times ∂²r/∂U_ik∂V_jk = 1
                h[(bu + k, bv + k)] += res;
                h[(bv + k, bu + k)] += res;
            }
        }
        h
    }

    fn hessian_vec(&self, w: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let r = self.rank;
        let off = self.target.nrows() * r;
        let ws = w.as_slice();
        let vs = v.as_slice();
        let mut out = DVector::zeros(self.dim());
        let os = out.as_mut_slice();
        for &(i, j) in &self.cells {
            let res = self.residual(ws, i, j);
            let (bu, bv) = (i * r, off + j * r);
            // directional derivative of the residual: (A Vᵀ + U Bᵀ)_ij
            let mut jd = T::zero();
            for k in 0..r {
                jd += vs[bu + k] * ws[bv + k] + ws[bu + k] * vs[bv + k];
            }
            for k in 0..r {
                os[bu + k] += jd * ws[bv + k] + res * vs[bv + k];
                os[bv + k] += jd * ws[bu + k] + res * vs[bu + k];
            }
        }
        out
    }

    fn layout(&self) -> Layout {
        let (n, m) = self.shape();
        Layout::Factors { n, m, rank: self.rank }
    }

    fn extra_names(&self) -> Vec<String> {
        let (n, m) = self.shape();
        let mut names = vec!["test_loss".to_string()];
        names.extend((1..=n.min(m).min(self.rank)).map(|k| format!("sv_{k}")));
        names
    }

    fn extras(&self, w: &DVector<T>) -> Vec<T> {
        let rec = self.reconstruction(w);
        let mut out = vec![(&self.target - &rec).norm()];
        let k = self.shape().0.min(self.shape().1).min(self.rank);
        match crate::spectral::svd(&rec) {
            Ok(s) => out.extend(s.singular_values.iter().take(k).copied()),
            Err(_) => out.extend(std::iter::repeat_n(T::lit(f64::NAN), k)),
        }
        out
    }

    /// Unmasked reconstruction error `‖M* − UVᵀ‖_F`.
    fn test_loss(&self, w: &DVector<T>) -> Option<T> {
        Some((&self.target - self.reconstruction(w)).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{fd_check, test_util::hessian_vec_matches_columns};
    use crate::rng;

    fn instance(seed: u64) -> (MatrixCompletion<f64>, DVector<f64>) {
        let mut g = rng::seeded(seed);
        let a = rng::gaussian_matrix::<f64>(&mut g, 5, 2, 1.0);
        let b = rng::gaussian_matrix(&mut g, 4, 2, 1.0);
        let mask = rng::sample_cells(&mut g, 5, 4, 12);
        let p = MatrixCompletion::new(a * b.transpose(), mask, 3).unwrap();
        let w = rng::gaussian_vector(&mut g, p.dim(), 1.0);
        (p, w)
    }

    #[test]
    fn zero_parameters_give_masked_energy() {
        let (p, _) = instance(2);
        let expected: f64 = p.mask().iter().map(|&(i, j)| p.target()[(i, j)].powi(2)).sum();
        let z = DVector::zeros(p.dim());
        assert!((p.value(&z) - 0.5 * expected).abs() < 1e-12);
        assert_eq!(p.gradient(&z).norm(), 0.0);
    }

    #[test]
    fn exact_factorisation_has_zero_loss() {
        let mut g = rng::seeded(4);
        let u = rng::gaussian_matrix::<f64>(&mut g, 4, 2, 1.0);
        let v = rng::gaussian_matrix(&mut g, 3, 2, 1.0);
        let p = MatrixCompletion::full(&u * v.transpose(), 2).unwrap();
        let w = MatrixCompletion::pack(&u, &v);
        assert!(p.value(&w) < 1e-25);
        let (u2, v2) = p.unpack(&w);
        assert_eq!(u2, u);
        assert_eq!(v2, v);
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
    fn rejects_out_of_range_cells() {
        let t = DMatrix::<f64>::zeros(2, 2);
        assert!(MatrixCompletion::new(t.clone(), vec![(2, 0)], 1).is_err());
        assert!(MatrixCompletion::new(t.clone(), vec![], 1).is_err());
        assert!(MatrixCompletion::new(t.clone(), vec![(0, 0), (0, 0)], 1).is_err());
        assert!(MatrixCompletion::new(t, vec![(0, 0)], 0).is_err());
    }

    #[test]
    fn extras_report_test_loss_and_spectrum() {
        let (p, w) = instance(7);
        let names = p.extra_names();
        let vals = p.extras(&w);
        assert_eq!(names.len(), vals.len());
        assert_eq!(names[0], "test_loss");
        assert_eq!(vals[0], p.test_loss(&w).unwrap());
        assert!(vals[1..].windows(2).all(|s| s[0] >= s[1]));
    }
}
