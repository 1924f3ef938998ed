use crate::error::{invalid, Result};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Dormand–Prince 5(4) with error control on `abs_tol + rel_tol·|w|`.
    Rk45 { rel_tol: f64, abs_tol: f64 },
    /// Classical fourth-order Runge–Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Forward Euler with a fixed step.
    Euler { step: f64 },
}

/// Which samples a run keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordSchedule {
    /// `t = 0` followed by `points` log-spaced times from `first` to the
    /// horizon. `first` defaults to `1e-6 · horizon`.
    LogSpaced { points: usize, first: Option<f64> },
    /// Explicit times; `0` and the horizon are always added.
    Times(Vec<f64>),
    /// Every `n`-th accepted step, plus both endpoints.
    Stride(usize),
}

impl Default for RecordSchedule {
    fn default() -> Self {
        RecordSchedule::LogSpaced {
            points: 400,
            first: None,
        }
    }
}

impl RecordSchedule {
    /// Sorted, deduplicated record times on `[0, horizon]`, or `None` for a
    /// stride schedule.
    pub fn times(&self, horizon: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0];
        match self {
            RecordSchedule::LogSpaced { points, first } => {
                let first = first.unwrap_or(horizon * 1e-6).min(horizon);
                let n = *points;
                if n == 1 || first >= horizon {
                    out.push(horizon);
                } else if n > 1 {
                    let (a, b) = (first.ln(), horizon.ln());
                    for i in 0..n {
                        let s = i as f64 / (n - 1) as f64;
                        out.push((a + s * (b - a)).exp());
                    }
                    *out.last_mut().unwrap() = horizon;
                }
            }
            RecordSchedule::Times(ts) => {
                out.extend(ts.iter().copied().filter(|&t| t > 0.0 && t < horizon));
                out.push(horizon);
            }
            RecordSchedule::Stride(_) => return None,
        }
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        if out.len() > 1 && out[out.len() - 1] != horizon {
            out.push(horizon);
        }
        Some(out)
    }

    fn validate(&self) -> Result<()> {
        match self {
            RecordSchedule::LogSpaced { points, first } => {
                if *points == 0 {
                    return Err(invalid("log-spaced schedule needs at least one point"));
                }
                if let Some(f) = first {
                    if !(f.is_finite() && *f > 0.0) {
                        return Err(invalid(format!("first record time must be positive, got {f}")));
                    }
                }
            }
            RecordSchedule::Times(ts) => {
                if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(invalid("record times must be finite and nonnegative"));
                }
            }
            RecordSchedule::Stride(n) => {
                if *n == 0 {
                    return Err(invalid("record stride must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// Integrator configuration for the continuous-time flows.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSpec {
    pub method: Method,
    pub max_steps: usize,
    pub record: RecordSchedule,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self::rk45(1e-8, 1e-10)
    }
}

impl IntegratorSpec {
    pub fn rk45(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            method: Method::Rk45 { rel_tol, abs_tol },
            max_steps: 50_000_000,
            record: RecordSchedule::default(),
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4 { step },
            ..Self::default()
        }
    }

    pub fn euler(step: f64) -> Self {
        Self {
            method: Method::Euler { step },
            ..Self::default()
        }
    }

    pub fn with_record(mut self, record: RecordSchedule) -> Self {
        self.record = record;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, what: &str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive and finite, got {x}")))
            }
        };
        match self.method {
            Method::Rk45 { rel_tol, abs_tol } => {
                pos(rel_tol, "rel_tol")?;
                pos(abs_tol, "abs_tol")?;
            }
            Method::Rk4 { step } | Method::Euler { step } => pos(step, "step")?,
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        self.record.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_schedule_shape() {
        let ts = RecordSchedule::default().times(10.0).unwrap();
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 10.0);
        assert_eq!(ts.len(), 401);
        assert!((ts[1] - 1e-5).abs() < 1e-18);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn explicit_times_are_clipped_and_completed() {
        let ts = RecordSchedule::Times(vec![3.0, 1.0, 1.0, 12.0]).times(5.0).unwrap();
        assert_eq!(ts, vec![0.0, 1.0, 3.0, 5.0]);
    }

    #[test]
    fn validation() {
        assert!(IntegratorSpec::default().validate().is_ok());
        assert!(IntegratorSpec::rk4(0.0).validate().is_err());
        assert!(IntegratorSpec::rk45(-1.0, 1e-10).validate().is_err());
        assert!(IntegratorSpec::default().with_max_steps(0).validate().is_err());
        assert!(IntegratorSpec::default()
            .with_record(RecordSchedule::Stride(0))
            .validate()
            .is_err());
    }
}
