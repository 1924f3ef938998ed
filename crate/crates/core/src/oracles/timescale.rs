//! Measured timescales of a regularised run.

use crate::error::{invalid, Result};
use crate::flows::{Timescale, Trajectory, GRAD_NORM, LOSS, WEIGHT_NORM_SQ};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimescaleOptions {
    /// `t_GF` is the first time `‖∇F‖ ≤ grad_drop · ‖∇F(w0)‖`.
    pub grad_drop: f64,
    /// Factor read as "much smaller" in the grokking rule.
    pub separation: f64,
    /// Fractions of the post-fit norm decrease marking the drop interval.
    pub drop_start: f64,
    pub drop_end: f64,
    /// The fit counts as done when the loss is below this fraction of `F(w0)`.
    pub fit_loss_ratio: f64,
}

impl Default for TimescaleOptions {
    fn default() -> Self {
        Self {
            grad_drop: 0.01,
            separation: 10.0,
            drop_start: 0.2,
            drop_end: 0.8,
            fit_loss_ratio: 1e-3,
        }
    }
}

/// All times are on the fast clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TimescaleReport {
    pub t_gf: Option<f64>,
    pub t_wd: Option<f64>,
    /// `log10(t_WD / t_GF)`.
    pub plateau_log_span: Option<f64>,
    /// Times at which `‖w‖²` has covered the start and end fractions of its
    /// decrease after the fit.
    pub drop_start: Option<f64>,
    pub drop_end: Option<f64>,
    /// `log10(drop_end / drop_start)`.
    pub drop_log_span: Option<f64>,
    /// Threshold rule: `threshold/λ ≥ separation`, and `t_WD/t_GF ≥ separation`
    /// whenever both times were measured.
    pub grokking_expected: bool,
    /// Observed two-phase pattern: the train loss is already fitted
    /// (`≤ fit_loss_ratio · loss0`) when the norm decrease starts.
    pub signature: bool,
    pub lambda: f64,
    pub threshold: Option<f64>,
    pub flags: Vec<String>,
}

/// First time at which `gap(i) ≤ 0`, interpolated linearly in the gap and
/// logarithmically in time.
fn first_crossing(times: &[f64], gap: impl Fn(usize) -> f64) -> Option<f64> {
    let j = (0..times.len()).find(|&i| gap(i) <= 0.0)?;
    if j == 0 {
        return Some(times[0]);
    }
    let (g0, g1) = (gap(j - 1), gap(j));
    let s = if g0 > g1 { (g0 / (g0 - g1)).clamp(0.0, 1.0) } else { 1.0 };
    let (t0, t1) = (times[j - 1], times[j]);
    Some(if t0 > 0.0 {
        (t0.ln() + s * (t1.ln() - t0.ln())).exp()
    } else {
        t0 + s * (t1 - t0)
    })
}

/// Observable columns needed by [`timescale_report`], with times on the fast
/// clock. Built from a trajectory or read back from a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSeries {
    pub times: Vec<f64>,
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub weight_norm_sq: Vec<f64>,
}

impl RunSeries {
    pub fn from_trajectory<T: Real>(tr: &Trajectory<T>) -> Result<Self> {
        let col = |name: &str| -> Result<Vec<f64>> {
            tr.series(name)
                .map(|s| s.iter().map(|x| x.as_f64()).collect())
                .ok_or_else(|| invalid(format!("trajectory lacks the '{name}' series")))
        };
        let scale = match tr.timescale() {
            Timescale::Fast => 1.0,
            Timescale::Slow => {
                let lam = tr.lambda().as_f64();
                if !(lam > 0.0) {
                    return Err(invalid("slow-clock trajectory needs lambda > 0"));
                }
                1.0 / lam
            }
        };
        Ok(Self {
            times: tr.times().iter().map(|t| t.as_f64() * scale).collect(),
            loss: col(LOSS)?,
            grad_norm: col(GRAD_NORM)?,
            weight_norm_sq: col(WEIGHT_NORM_SQ)?,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(invalid("timescale report needs nonempty series"));
        }
        if self.loss.len() != n || self.grad_norm.len() != n || self.weight_norm_sq.len() != n {
            return Err(invalid("timescale series lengths differ"));
        }
        Ok(())
    }
}

fn log_ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((b / a).log10()),
        _ => None,
    }
}

/// Extracts `t_GF`, `t_WD`, the plateau and the norm-drop interval.
///
/// `fast` is a regularised run covering the fit; `slow` covers the norm
/// decrease (it may be the same run). Without an explicit `threshold`,
/// `‖∇F(w0)‖ / ‖w(t_GF)‖` from `fast` stands in for it.
pub fn timescale_report<T: Real>(
    fast: &Trajectory<T>,
    slow: &Trajectory<T>,
    lambda: f64,
    threshold: Option<f64>,
    opts: TimescaleOptions,
) -> Result<TimescaleReport> {
    timescale_report_from_series(
        &RunSeries::from_trajectory(fast)?,
        &RunSeries::from_trajectory(slow)?,
        lambda,
        threshold,
        opts,
    )
}

pub fn timescale_report_from_series(
    fast: &RunSeries,
    slow: &RunSeries,
    lambda: f64,
    threshold: Option<f64>,
    opts: TimescaleOptions,
) -> Result<TimescaleReport> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    fast.check()?;
    slow.check()?;
    let mut flags = Vec::new();
    if lambda == 0.0 {
        flags.push("no weight decay: a second phase cannot occur".to_string());
    }
    let ft = &fast.times;
    let g = &fast.grad_norm;
    let wsq = &fast.weight_norm_sq;

    let g0 = g[0];
    let t_gf = if g0 > 0.0 {
        first_crossing(ft, |i| g[i] - opts.grad_drop * g0)
    } else {
        flags.push("initial gradient vanishes".to_string());
        None
    };
    if t_gf.is_none() && g0 > 0.0 {
        flags.push("gradient never fell below the drop threshold".to_string());
    }
    let t_wd = if lambda > 0.0 {
        let t = first_crossing(ft, |i| g[i] - lambda * wsq[i].sqrt());
        if t.is_none() {
            flags.push("weight-decay crossing never reached".to_string());
        }
        t
    } else {
        None
    };

    let threshold = threshold.or_else(|| {
        let t = t_gf?;
        let k = ft.partition_point(|&s| s < t).min(ft.len() - 1);
        let norm = wsq[k].sqrt();
        (norm > 0.0).then(|| g0 / norm)
    });

    let st = &slow.times;
    let sw = &slow.weight_norm_sq;
    let sl = &slow.loss;
    let fit_time = t_gf.unwrap_or(0.0);
    let k_fit = st.partition_point(|&s| s < fit_time).min(st.len() - 1);
    let w_fit = sw[k_fit];
    let w_end = *sw.last().expect("nonempty");
    let decrease = w_fit - w_end;
    let (mut drop_start, mut drop_end) = (None, None);
    if lambda > 0.0 && decrease > 1e-6 * w_fit.max(f64::MIN_POSITIVE) {
        let after = &st[k_fit..];
        let at = |frac: f64| first_crossing(after, |i| sw[k_fit + i] - (w_fit - frac * decrease));
        drop_start = at(opts.drop_start);
        drop_end = at(opts.drop_end);
    } else if lambda > 0.0 {
        flags.push("no norm decrease after the fit".to_string());
    }
    let drop_log_span = log_ratio(drop_start, drop_end);
    let plateau_log_span = log_ratio(t_gf, t_wd);

    let mut grokking_expected = lambda > 0.0 && threshold.is_some_and(|th| th >= opts.separation * lambda);
    if let (Some(a), Some(b)) = (t_gf, t_wd) {
        if a > 0.0 {
            grokking_expected &= b / a >= opts.separation;
        }
    }

    let loss0 = sl[0].max(fast.loss[0]);
    let signature = match (t_gf, drop_start) {
        (Some(_), Some(onset)) => {
            let k = st.partition_point(|&s| s < onset).min(st.len() - 1);
            sl[k] <= opts.fit_loss_ratio * loss0
        }
        _ => false,
    };

    Ok(TimescaleReport {
        t_gf,
        t_wd,
        plateau_log_span,
        drop_start,
        drop_end,
        drop_log_span,
        grokking_expected,
        signature,
        lambda,
        threshold,
        flags,
    })
}
