//! Problem instances and initial points generated from a config and its seed.

use grokflow_core::problems::{
    fourier_features, fourier_teacher, Activation, DataSet, DiagonalNet, Inputs, LinearRegression, LossScale,
    MatrixCompletion, Objective, Problem, Quadratic, ReluTeacher, ReluUnit, TwoLayerNet,
};
use grokflow_core::{rng, spectral};
use nalgebra::{DMatrix, DVector};

use crate::config::{ActivationSpec, ExperimentConfig, FeatureSpec, InitSpec, LossSpec, ProblemSpec};
use crate::error::{HarnessError, HarnessResult};

/// Singular values of `UVᵀ` above this fraction of `σ₁(M*)` count towards the
/// detected rank.
pub const RANK_CUTOFF: f64 = 1e-3;

/// Decorrelates the initialisation stream from the data stream of one seed.
const INIT_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

/// Equispaced evaluation points of a 1-D problem with the teacher values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x: Vec<f64>,
    pub teacher: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem<f64>,
    pub w0: DVector<f64>,
    pub grid: Option<Grid>,
}

fn equispaced(range: [f64; 2], points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (range[0] + range[1])],
        _ => (0..points)
            .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn fourier_design(x: &[f64], degree: usize) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = x.iter().map(|&xi| fourier_features(xi, degree)).collect();
    DMatrix::from_fn(x.len(), 2 * degree + 1, |i, j| rows[i][j])
}

fn relu_teacher(units: &Option<Vec<[f64; 2]>>) -> ReluTeacher {
    match units {
        Some(u) => ReluTeacher {
            units: u.iter().map(|&[weight, kink]| ReluUnit { weight, kink }).collect(),
        },
        None => ReluTeacher::default(),
    }
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig) -> HarnessResult<Self> {
        let mut data = rng::seeded(cfg.seed);
        let (problem, grid): (Problem<f64>, Option<Grid>) = match &cfg.problem {
            ProblemSpec::Quadratic { diagonal } => (Quadratic::diagonal(diagonal)?.into(), None),
            ProblemSpec::LinearRegression { n, d, design, targets } => {
                let (x, y) = match (design, targets) {
                    (Some(rows), Some(t)) => {
                        if rows.len() != *n || rows.iter().any(|r| r.len() != *d) || t.len() != *n {
                            return Err(HarnessError::Config("explicit design must be n rows of length d".into()));
                        }
                        (DMatrix::from_fn(*n, *d, |i, j| rows[i][j]), DVector::from_vec(t.clone()))
                    }
                    _ => (
                        rng::gaussian_matrix::<f64>(&mut data, *n, *d, 1.0),
                        rng::gaussian_vector::<f64>(&mut data, *n, 1.0),
                    ),
                };
                (LinearRegression::new(x, y)?.into(), None)
            }
            ProblemSpec::MatrixCompletion {
                rows,
                cols,
                true_rank,
                factor_rank,
                observed_fraction,
            } => {
                let a = rng::gaussian_matrix::<f64>(&mut data, *rows, *true_rank, 1.0);
                let b = rng::gaussian_matrix::<f64>(&mut data, *cols, *true_rank, 1.0);
                let target = &a * b.transpose();
                let p = if *observed_fraction >= 1.0 {
                    MatrixCompletion::full(target, *factor_rank)?
                } else {
                    let count = ((observed_fraction * (rows * cols) as f64).round() as usize).max(1);
                    let mask = rng::sample_cells(&mut data, *rows, *cols, count);
                    MatrixCompletion::new(target, mask, *factor_rank)?
                };
                (p.into(), None)
            }
            ProblemSpec::DiagonalNet {
                n,
                features,
                degree,
                d,
                x_range,
                test_points,
                loss,
            } => {
                let scale = match loss {
                    LossSpec::HalfSum => LossScale::HalfSum,
                    LossSpec::HalfMean => LossScale::HalfMean,
                };
                match features {
                    FeatureSpec::Fourier => {
                        let degree = degree.expect("validated");
                        let xs: Vec<f64> = (0..*n).map(|_| rng::uniform(&mut data, x_range[0], x_range[1])).collect();
                        let y = DVector::from_iterator(*n, xs.iter().map(|&x| fourier_teacher(x)));
                        let mut p = DiagonalNet::with_scale(fourier_design(&xs, degree), y, scale)?;
                        let grid = (*test_points > 0).then(|| {
                            let x = equispaced(*x_range, *test_points);
                            let teacher = x.iter().map(|&t| fourier_teacher(t)).collect();
                            Grid { x, teacher }
                        });
                        if let Some(g) = &grid {
                            p = p.with_test_set(fourier_design(&g.x, degree), g.teacher.clone())?;
                        }
                        (p.into(), grid)
                    }
                    FeatureSpec::Gaussian => {
                        let d = d.expect("validated");
                        let x = rng::gaussian_matrix::<f64>(&mut data, *n, d, 1.0);
                        let y = rng::gaussian_vector::<f64>(&mut data, *n, 1.0);
                        (DiagonalNet::with_scale(x, y, scale)?.into(), None)
                    }
                }
            }
            ProblemSpec::TwoLayerNet {
                n,
                width,
                x_range,
                activation,
                teacher,
                test_points,
            } => {
                let teacher = relu_teacher(teacher);
                let xs: Vec<f64> = (0..*n).map(|_| rng::uniform(&mut data, x_range[0], x_range[1])).collect();
                let ys: Vec<f64> = xs.iter().map(|&x| teacher.eval(x)).collect();
                let act = match activation {
                    ActivationSpec::Relu => Activation::Relu,
                    ActivationSpec::Softplus { beta } => Activation::Softplus { beta: *beta },
                };
                let mut p = TwoLayerNet::new(DataSet::new(Inputs::Scalars(xs), ys)?, *width, act)?;
                let grid = (*test_points > 0).then(|| {
                    let x = equispaced(*x_range, *test_points);
                    let t = x.iter().map(|&v| teacher.eval(v)).collect();
                    Grid { x, teacher: t }
                });
                if let Some(g) = &grid {
                    p = p.with_test_set(g.x.clone(), g.teacher.clone())?;
                }
                (p.into(), grid)
            }
        };
        let dim = problem.dim();
        let w0 = match &cfg.init {
            InitSpec::Gaussian { variance } => {
                let mut init = rng::seeded(cfg.seed ^ INIT_STREAM);
                rng::gaussian_vector::<f64>(&mut init, dim, variance.sqrt())
            }
            InitSpec::Zeros => DVector::zeros(dim),
            InitSpec::Explicit { values } => {
                if values.len() != dim {
                    return Err(HarnessError::Config(format!(
                        "explicit init has {} entries, problem dimension is {dim}",
                        values.len()
                    )));
                }
                DVector::from_vec(values.clone())
            }
        };
        Ok(Self { problem, w0, grid })
    }

    /// Model output on the evaluation grid of a 1-D problem.
    pub fn predict(&self, w: &DVector<f64>) -> Option<Vec<f64>> {
        let grid = self.grid.as_ref()?;
        match &self.problem {
            Problem::DiagonalNet(p) => {
                let degree = (p.features() - 1) / 2;
                Some(p.predict(w, &fourier_design(&grid.x, degree)).iter().copied().collect())
            }
            Problem::TwoLayerNet(p) => Some(grid.x.iter().map(|&x| p.prediction(w, x)).collect()),
            _ => None,
        }
    }

    /// Number of singular values of `UVᵀ` above `RANK_CUTOFF · σ₁(M*)`.
    pub fn detected_rank(&self, w: &DVector<f64>) -> Option<usize> {
        let Problem::MatrixCompletion(p) = &self.problem else {
            return None;
        };
        let s1 = spectral::svd(p.target()).ok()?.singular_values[0];
        let sv = spectral::svd(&p.reconstruction(w)).ok()?.singular_values;
        Some(sv.iter().filter(|&&s| s > RANK_CUTOFF * s1).count())
    }

    /// `‖M* − UVᵀ‖_F / ‖M*‖_F`.
    pub fn relative_reconstruction_error(&self, w: &DVector<f64>) -> Option<f64> {
        let Problem::MatrixCompletion(p) = &self.problem else {
            return None;
        };
        Some((p.target() - p.reconstruction(w)).norm() / p.target().norm())
    }

    /// `‖u⊙u − v⊙v‖₁`.
    pub fn beta_l1(&self, w: &DVector<f64>) -> Option<f64> {
        let Problem::DiagonalNet(p) = &self.problem else {
            return None;
        };
        Some(p.beta(w).iter().map(|b| b.abs()).sum())
    }

    /// Minimum `ℓ₁` norm over interpolating predictors of a diagonal net.
    pub fn l1_oracle(&self) -> Option<HarnessResult<f64>> {
        let Problem::DiagonalNet(p) = &self.problem else {
            return None;
        };
        Some(
            grokflow_core::oracles::l1_min_interpolant(p.design(), p.targets(), Default::default())
                .map(|s| s.l1_norm)
                .map_err(HarnessError::from),
        )
    }
}
