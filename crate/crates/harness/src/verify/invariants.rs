//! The module invariant battery.

use std::fs;

use grokflow_core::flows::{integrate_gf, integrate_regularized, phi_map, IntegratorSpec, PhiStop, RecordSchedule, Trajectory};
use grokflow_core::manifold::{
    default_retraction_tol, integrate_riemannian_flow, probe, riemannian_grad_l2, ManifoldPoint, Retraction,
    ETA_ESTIMATE,
};
use grokflow_core::oracles::{
    grok_threshold, l1_min_enumerate, l1_min_interpolant, nuclear_norm, srebro_gap, L1Options, LinRegClosedForm,
};
use grokflow_core::problems::{
    fd_check, Activation, DataSet, DiagonalNet, Inputs, LinearRegression, LossScale, MatrixCompletion, Objective,
    Problem, Quadratic, TwoLayerNet,
};
use grokflow_core::rng::{gaussian_matrix, gaussian_vector, seeded, uniform, SeededRng};
use grokflow_core::spectral::{nullspace_projector, pinv_apply, svd, sym_eig, SpectralTolerances};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use super::{fast_phase_rate, guard, linreg_fixture, Check};
use crate::error::{HarnessError, HarnessResult};
use crate::recipes::recipe;
use crate::report::REPORT_FILE;
use crate::run::execute;
use crate::schema;

fn random_orthogonal(rng: &mut SeededRng, n: usize) -> DMatrix<f64> {
    gaussian_matrix::<f64>(rng, n, n, 1.0).qr().q()
}

/// Symmetric PSD matrix of dimension `d` and rank `r`.
fn low_rank_psd(rng: &mut SeededRng, d: usize, r: usize) -> DMatrix<f64> {
    let b = gaussian_matrix::<f64>(rng, d, r, 1.0);
    &b * b.transpose()
}

/// One smooth instance of each differentiable family.
fn smooth_zoo(rng: &mut SeededRng) -> HarnessResult<Vec<Problem<f64>>> {
    let x = gaussian_matrix::<f64>(rng, 4, 7, 1.0);
    let y = gaussian_vector::<f64>(rng, 4, 1.0);
    let target = gaussian_matrix::<f64>(rng, 5, 2, 1.0) * gaussian_matrix::<f64>(rng, 4, 2, 1.0).transpose();
    let mask: Vec<(usize, usize)> = (0..5)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|(i, j)| (i + 2 * j) % 3 != 0)
        .collect();
    let xs: Vec<f64> = (0..6).map(|_| uniform(rng, -2.0, 2.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
    let data = DataSet::new(Inputs::Scalars(xs), ys)?;
    Ok(vec![
        LinearRegression::new(x.clone(), y.clone())?.into(),
        MatrixCompletion::new(target, mask, 3)?.into(),
        DiagonalNet::with_scale(x, y, LossScale::HalfMean)?.into(),
        TwoLayerNet::new(data, 5, Activation::Softplus { beta: 2.0 })?.into(),
    ])
}

fn flow(p: &Problem<f64>, w0: &DVector<f64>, lambda: f64, horizon: f64, record: RecordSchedule) -> HarnessResult<Trajectory<f64>> {
    Ok(integrate_regularized(p, w0, lambda, horizon, &IntegratorSpec::default().with_record(record))?)
}

fn reg_value(p: &Problem<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    p.value(w) + 0.5 * lambda * w.norm_squared()
}

fn spectral_checks(rng: &mut SeededRng) -> Vec<Check> {
    guard("spectral invariants", || {
        let mut proj = 0.0f64;
        let mut trace = 0.0f64;
        let mut pinv_ker = 0.0f64;
        let mut svd_eig = 0.0f64;
        let mut recon = 0.0f64;
        for k in 0..40 {
            let d = 2 + k % 31;
            let r = k % d;
            let h = low_rank_psd(rng, d, r);
            let pr = nullspace_projector(&h, SpectralTolerances::default())?;
            let p = &pr.projector;
            proj = proj.max((p * p - p).norm()).max((p - p.transpose()).norm());
            trace = trace.max((p.trace() - pr.gap_index as f64).abs()).max((pr.gap_index as f64 - (d - r) as f64).abs());

            // rank-deficient rectangular M with a nontrivial kernel
            let m = gaussian_matrix::<f64>(rng, 3 + k % 4, r.max(1), 1.0) * gaussian_matrix::<f64>(rng, d, r.max(1), 1.0).transpose();
            let yv = gaussian_vector::<f64>(rng, m.nrows(), 1.0);
            let sol = pinv_apply(&m, &yv)?;
            let ker = nullspace_projector(&(m.transpose() * &m), SpectralTolerances::default())?;
            pinv_ker = pinv_ker.max((ker.project(&sol)).norm() / yv.norm());

            let e = sym_eig(&h)?;
            let s = svd(&h)?;
            let scale = s.singular_values[0].max(1e-300);
            for (i, sv) in s.singular_values.iter().enumerate() {
                svd_eig = svd_eig.max((sv - e.eigenvalues[d - 1 - i].max(0.0)).abs() / scale);
            }
            recon = recon
                .max((e.reconstruct() - &h).norm() / h.norm().max(1e-300))
                .max((s.reconstruct() - &h).norm() / h.norm().max(1e-300));
        }
        Ok(vec![
            Check::at_most("projector idempotence and symmetry", proj, 1e-10),
            Check::at_most("projector trace equals gap index", trace, 1e-9),
            Check::at_most("pseudo-inverse orthogonal to the kernel", pinv_ker, 1e-8),
            Check::at_most("svd agrees with eigenvalues on psd inputs", svd_eig, 1e-9),
            Check::at_most("decompositions reconstruct their input", recon, 1e-10),
        ])
    })
}

fn problem_checks(rng: &mut SeededRng) -> Vec<Check> {
    guard("problem invariants", || {
        let zoo = smooth_zoo(rng)?;
        let mut grad = 0.0f64;
        let mut hess = 0.0f64;
        let mut hv = 0.0f64;
        for p in &zoo {
            for k in 0..25 {
                let w = gaussian_vector::<f64>(rng, p.dim(), 1.0);
                let r = fd_check(p, &w);
                grad = grad.max(r.grad_rel_error);
                if k == 0 {
                    hess = hess.max(r.hess_rel_error);
                    let h = p.hessian(&w);
                    for i in 0..p.dim() {
                        let mut e = DVector::zeros(p.dim());
                        e[i] = 1.0;
                        hv = hv.max((p.hessian_vec(&w, &e) - h.column(i)).norm() / (1.0 + h.norm()));
                    }
                }
            }
        }

        // interpolating points of linear regression, factorisation and diagonal net
        let mut stationary = 0.0f64;
        let mut zero_points = Vec::new();
        let x = gaussian_matrix::<f64>(rng, 4, 9, 1.0);
        let y = gaussian_vector::<f64>(rng, 4, 1.0);
        let lr = LinearRegression::new(x.clone(), y.clone())?;
        zero_points.push((Problem::from(lr.clone()), lr.min_norm_solution().clone()));
        let beta = lr.min_norm_solution();
        let mut uv = DVector::zeros(18);
        for i in 0..9 {
            uv[i] = beta[i].max(0.0).sqrt();
            uv[9 + i] = (-beta[i]).max(0.0).sqrt();
        }
        zero_points.push((DiagonalNet::with_scale(x, y, LossScale::HalfSum)?.into(), uv));
        let (a, b) = (gaussian_matrix::<f64>(rng, 6, 2, 1.0), gaussian_matrix::<f64>(rng, 5, 2, 1.0));
        let mask: Vec<(usize, usize)> = (0..6).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|(i, j)| (i * 5 + j) % 2 == 0).collect();
        let mc = MatrixCompletion::new(&a * b.transpose(), mask, 3)?;
        let pad = |m: &DMatrix<f64>| m.clone().insert_column(2, 0.0);
        zero_points.push((mc.into(), MatrixCompletion::pack(&pad(&a), &pad(&b))));
        for (p, w) in &zero_points {
            if p.value(w) <= 1e-24 {
                let bound = 1e-7 * (1.0 + p.hessian(w).norm());
                stationary = stationary.max(p.gradient(w).norm() / bound);
            } else {
                return Err(HarnessError::Input(format!("{} interpolant has loss {:e}", p.kind(), p.value(w))));
            }
        }

        let Problem::MatrixCompletion(mc) = &zoo[1] else { unreachable!() };
        let w = gaussian_vector::<f64>(rng, mc.dim(), 1.0);
        let (u, v) = mc.unpack(&w);
        let q = random_orthogonal(rng, u.ncols());
        let rotated = MatrixCompletion::pack(&(&u * &q), &(&v * &q));
        let rot = (mc.value(&rotated) - mc.value(&w)).abs() / mc.value(&w).max(1e-300);

        let dn = &zoo[2];
        let w = gaussian_vector::<f64>(rng, dn.dim(), 1.0);
        let half = w.len() / 2;
        let mut flip = 0.0f64;
        for i in 0..half {
            for j in [i, half + i] {
                let mut f = w.clone();
                f[j] = -f[j];
                flip = flip.max((dn.value(&f) - dn.value(&w)).abs());
            }
        }
        Ok(vec![
            Check::at_most("gradient finite differences on 100 points", grad, 1e-5),
            Check::at_most("hessian finite differences", hess, 1e-5),
            Check::at_most("hessian-vector products match hessian columns", hv, 1e-10),
            Check::at_most("zero loss implies stationarity", stationary, 1.0),
            Check::at_most("matrix completion invariant under factor rotation", rot, 1e-10),
            Check::at_most("diagonal net invariant under sign flips", flip, 1e-12),
        ])
    })
}

fn flow_checks(rng: &mut SeededRng, seed: u64) -> Vec<Check> {
    let mut out = guard("flow invariants", || {
        let zoo = smooth_zoo(rng)?;
        let mut rise = f64::NEG_INFINITY;
        let mut energy = 0.0f64;
        for p in &zoo {
            let w0 = gaussian_vector::<f64>(rng, p.dim(), 1.0);
            for lambda in [0.0, 1e-2] {
                let tr = flow(p, &w0, lambda, 20.0, RecordSchedule::LogSpaced { points: 60, first: Some(1e-3) })?;
                let f0 = reg_value(p, &w0, lambda);
                for pair in tr.states().windows(2) {
                    let d = reg_value(p, &pair[1], lambda) - reg_value(p, &pair[0], lambda);
                    rise = rise.max(d / (1e-8 * (1.0 + f0)));
                }
                // dF_λ/dt = −‖∇F_λ‖² by central differences on a fine grid
                let h = 1e-4;
                let times: Vec<f64> = (1..=40).map(|i| i as f64 * 0.05).flat_map(|t| [t - h, t, t + h]).collect();
                let fine = flow(p, &w0, lambda, 2.5, RecordSchedule::Times(times))?;
                let (ts, ws) = (fine.times(), fine.states());
                for i in 1..ts.len() - 1 {
                    if (ts[i + 1] - ts[i] - h).abs() < 1e-9 && (ts[i] - ts[i - 1] - h).abs() < 1e-9 {
                        let fd = (reg_value(p, &ws[i + 1], lambda) - reg_value(p, &ws[i - 1], lambda)) / (2.0 * h);
                        let g = p.gradient(&ws[i]) + &ws[i] * lambda;
                        let g2 = g.norm_squared();
                        if g2 > 1e-8 {
                            energy = energy.max((fd + g2).abs() / g2);
                        }
                    }
                }
            }
        }

        let (lr, w0) = linreg_fixture(seed)?;
        let p = Problem::from(lr);
        let sups: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .into_iter()
            .map(|l| {
                flow(&p, &w0, l, 10.0 / l, RecordSchedule::LogSpaced { points: 100, first: None })
                    .map(|tr| tr.states().iter().map(|w| w.norm()).fold(0.0, f64::max))
            })
            .collect::<HarnessResult<_>>()?;
        let spread = sups.iter().copied().fold(0.0, f64::max) / sups.iter().copied().fold(f64::INFINITY, f64::min);

        // w' = −w: error of RK4 at t = 1 against e^{−1}
        let q = Quadratic::diagonal(&[1.0])?;
        let w0 = DVector::from_element(1, 1.0);
        let err = |h: f64| -> HarnessResult<f64> {
            let spec = IntegratorSpec::rk4(h).with_record(RecordSchedule::Times(vec![]));
            let tr = integrate_gf(&q, &w0, 1.0, &spec)?;
            Ok((tr.final_state().expect("nonempty")[0] - (-1.0f64).exp()).abs())
        };
        let order = err(0.1)? / err(0.05)?;
        Ok(vec![
            Check::at_most("regularised objective non-increasing along flows", rise, 1.0),
            Check::at_most("energy identity by finite differences", energy, 1e-3),
            Check::new("trajectories bounded independently of lambda", spread < 2.0, Some(spread), "< 2"),
            Check::new("rk4 fourth-order convergence", (12.0..=20.0).contains(&order), Some(order), "in [12, 20]"),
        ])
    });
    out.extend(fast_phase_rate(seed).into_iter().filter(|c| c.name == "fast-phase decade ratio"));
    out
}

fn manifold_checks(rng: &mut SeededRng, seed: u64) -> Vec<Check> {
    guard("manifold invariants", || {
        let (lr, w0) = linreg_fixture(seed)?;
        let cf = LinRegClosedForm::new(lr.design(), lr.targets(), &w0)?;
        let (a, b) = (gaussian_matrix::<f64>(rng, 5, 2, 1.0), gaussian_matrix::<f64>(rng, 5, 2, 1.0));
        let mc = MatrixCompletion::full(&a * b.transpose(), 3)?;
        let mc_w0 = gaussian_vector::<f64>(rng, mc.dim(), 1.0);
        let problems: Vec<(Problem<f64>, DVector<f64>)> = vec![(lr.clone().into(), w0.clone()), (mc.into(), mc_w0)];

        let mut descent = f64::NEG_INFINITY;
        let mut adherence = 0.0f64;
        let mut consistency = 0.0f64;
        let spec = IntegratorSpec::default().with_record(RecordSchedule::LogSpaced { points: 30, first: Some(1e-2) });
        for (p, start) in &problems {
            let phi = phi_map(p, start, PhiStop::default(), &IntegratorSpec::default())?;
            let mp = ManifoldPoint::new(p, phi.point.clone())?;
            let tr = integrate_riemannian_flow(p, &mp, 3.0, &spec, &Retraction::default())?;
            let n0 = tr.states()[0].norm_squared();
            for pair in tr.states().windows(2) {
                descent = descent.max((pair[1].norm_squared() - pair[0].norm_squared()) / (1e-8 * (1.0 + n0)));
            }
            let etas = tr.series(ETA_ESTIMATE).expect("limit flow records eta");
            for (w, eta) in tr.states().iter().zip(etas) {
                adherence = adherence.max(p.gradient(w).norm() / (10.0 * default_retraction_tol(*eta)));
            }
            for w in tr.states() {
                let pr = probe(p, w, SpectralTolerances::default())?;
                let pw = riemannian_grad_l2(p, w, SpectralTolerances::default())?;
                let lhs = (p.hessian(w) * &pw).norm();
                consistency = consistency.max(lhs / (1e-6 * pr.eta_estimate * pw.norm() + 1e-10));
            }
        }

        // affine manifold: exact limit flow w̃°(s) = X⁺y + e^{−s} P_Ker w0
        let mp = ManifoldPoint::new(&lr, cf.limit(0.0))?;
        let tr = integrate_riemannian_flow(&lr, &mp, 5.0, &spec, &Retraction::default())?;
        let affine = tr
            .times()
            .iter()
            .zip(tr.states())
            .map(|(s, w)| {
                let exact = cf.min_norm_solution() + &cf.w0_kernel * (-s).exp();
                (w - &exact).norm() / exact.norm()
            })
            .fold(0.0, f64::max);

        // DΦ(w)·(−w) = −P_Ker w on the manifold
        let w = cf.limit(0.0);
        let h = 1e-3;
        let phi_h = phi_map(&lr, &(&w * (1.0 - h)), PhiStop::default(), &IntegratorSpec::default())?.point;
        let fd = (phi_h - &w) / h;
        let pw = riemannian_grad_l2(&lr, &w, SpectralTolerances::default())?;
        let dphi = (fd + &pw).norm() / pw.norm();
        Ok(vec![
            Check::at_most("limit flow decreases the norm", descent, 1.0),
            Check::at_most("limit flow stays on the critical manifold", adherence, 1.0),
            Check::at_most("projected direction lies in the hessian kernel", consistency, 1.0),
            Check::at_most("affine limit flow matches its closed form", affine, 1e-6),
            Check::at_most("differential of the limit map is the kernel projection", dphi, 1e-4),
        ])
    })
}

fn oracle_checks(rng: &mut SeededRng, seed: u64) -> Vec<Check> {
    let mut out = vec![super::closed_form_equivalence(10)];
    out.extend(guard("oracle invariants", || {
        let mut worst = f64::INFINITY;
        for k in 0..1000 {
            let r = 1 + k % 4;
            let u = gaussian_matrix::<f64>(rng, 5, r, 1.0);
            let v = gaussian_matrix::<f64>(rng, 4, r, 1.0);
            worst = worst.min(srebro_gap(&u, &v)?);
        }
        let m = gaussian_matrix::<f64>(rng, 5, 4, 1.0);
        let s = svd(&m)?;
        let root = DMatrix::from_diagonal(&s.singular_values.map(f64::sqrt));
        let balanced = srebro_gap(&(&s.u * &root), &(&s.v * &root))?.abs() / nuclear_norm(&m)?;

        let mut excess = f64::NEG_INFINITY;
        for _ in 0..20 {
            let x = gaussian_matrix::<f64>(rng, 3, 7, 1.0);
            let y = gaussian_vector::<f64>(rng, 3, 1.0);
            let admm = l1_min_interpolant(&x, &y, L1Options::default())?;
            let (brute, _) = l1_min_enumerate(&x, &y)?;
            excess = excess.max(admm.l1_norm - brute);
        }

        let mut cfg = recipe("fig2_matrix_completion_ci")?;
        cfg.seed = seed;
        let inst = crate::instance::Instance::build(&cfg)?;
        let (p, w0) = (&inst.problem, &inst.w0);
        let stop = PhiStop {
            grad_tol: None,
            max_time: Some(1e4),
        };
        let coarse = phi_map(p, w0, stop, &IntegratorSpec::default())?;
        let fine = phi_map(p, w0, stop, &IntegratorSpec::rk45(1e-10, 1e-12))?;
        let (a, b) = (grok_threshold(p, w0, &coarse.point)?, grok_threshold(p, w0, &fine.point)?);
        Ok(vec![
            Check::new("srebro inequality over 1000 pairs", worst >= -1e-12, Some(worst), ">= -1e-12"),
            Check::at_most("srebro gap vanishes on balanced factors", balanced, 1e-12),
            Check::at_most("l1 oracle no worse than every enumerated vertex", excess, 1e-6),
            Check::at_most("grok threshold independent of integrator settings", (a - b).abs() / b, 1e-6),
        ])
    }));
    out
}

fn harness_checks(seed: u64) -> Vec<Check> {
    guard("harness invariants", || {
        let tmp = std::env::temp_dir().join(format!("grokflow-invariants-{}-{seed}", std::process::id()));
        let mut identical = true;
        let mut schema_errors = Vec::new();
        for name in ["fig_linreg_ci", "fig2_matrix_completion_ci", "fig4_diagonal_ci"] {
            let mut cfg = recipe(name)?;
            cfg.seed = seed;
            let (a, b) = (execute(&cfg)?, execute(&cfg)?);
            identical &= a.trajectory.to_csv() == b.trajectory.to_csv();
            let dir = tmp.join(name);
            a.write(&dir)?;
            let text = fs::read_to_string(dir.join(REPORT_FILE)).map_err(|e| HarnessError::io(&dir, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| HarnessError::Input(e.to_string()))?;
            if let Err(e) = schema::validate(&v, &schema::report_schema()) {
                schema_errors.extend(e);
            }
            if serde_json::from_value::<crate::report::RunReport>(v).is_err() {
                schema_errors.push(format!("{name}: report does not re-parse"));
            }
        }
        let _ = fs::remove_dir_all(&tmp);
        Ok(vec![
            Check::new("identical config and seed give identical csv", identical, None, "byte-identical"),
            Check::new("reports re-parse against the schema", schema_errors.is_empty(), Some(schema_errors.len() as f64), "0 violations")
                .detail(schema_errors.join("; ")),
        ])
    })
}

/// Invariants of every module: spectral, problems, flows, manifold,
/// oracles and the harness.
pub fn invariant_suite(seed: u64) -> Vec<Check> {
    let mut rng = seeded(seed ^ 0x1A7A_21A7);
    let mut checks = spectral_checks(&mut rng);
    checks.extend(problem_checks(&mut rng));
    checks.extend(flow_checks(&mut rng, seed));
    checks.extend(manifold_checks(&mut rng, seed));
    checks.extend(oracle_checks(&mut rng, seed));
    checks.extend(harness_checks(seed));
    checks
}
