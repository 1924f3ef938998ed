use std::io::{self, Write};

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::problems::{regularized_value, Layout, Objective};
use crate::scalar::Real;

pub const LOSS: &str = "loss";
pub const REG_LOSS: &str = "reg_loss";
pub const GRAD_NORM: &str = "grad_norm";
pub const WEIGHT_NORM_SQ: &str = "weight_norm_sq";

/// Which clock the time axis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timescale {
    /// Raw flow time `t`.
    Fast,
    /// `λ t`.
    Slow,
}

impl Timescale {
    pub fn as_str(self) -> &'static str {
        match self {
            Timescale::Fast => "fast",
            Timescale::Slow => "slow",
        }
    }
}

/// Recorded samples of a flow together with named observable series.
///
/// The standard series are `loss = F(w)`, `reg_loss = F_λ(w)`,
/// `grad_norm = ‖∇F(w)‖` (unregularised) and `weight_norm_sq = ‖w‖²`,
/// followed by the problem's extras.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    states: Vec<DVector<T>>,
    names: Vec<String>,
    columns: Vec<Vec<T>>,
    lambda: T,
    tag: Timescale,
    layout: Option<Layout>,
    warnings: Vec<String>,
}

impl<T: Real> Trajectory<T> {
    /// Bare samples without observables.
    pub fn new(times: Vec<T>, states: Vec<DVector<T>>, lambda: T, tag: Timescale) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::DimensionMismatch {
                what: "trajectory states",
                expected: times.len(),
                got: states.len(),
            });
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("trajectory times must be strictly increasing"));
        }
        if states.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("trajectory states"));
        }
        Ok(Self {
            times,
            states,
            names: Vec::new(),
            columns: Vec::new(),
            lambda,
            tag,
            layout: None,
            warnings: Vec::new(),
        })
    }

    /// Samples plus the standard observables of `p` at regularisation `lambda`.
    pub fn evaluate<P: Objective<T> + ?Sized>(
        p: &P,
        lambda: T,
        times: Vec<T>,
        states: Vec<DVector<T>>,
        tag: Timescale,
    ) -> Result<Self> {
        let mut tr = Self::new(times, states, lambda, tag)?;
        tr.layout = Some(p.layout());
        let extra = p.extra_names();
        let n = tr.len();
        let mut cols: Vec<Vec<T>> = vec![Vec::with_capacity(n); 4 + extra.len()];
        let mut g = DVector::zeros(p.dim());
        for w in &tr.states {
            p.gradient_into(w, &mut g);
            cols[0].push(p.value(w));
            cols[1].push(regularized_value(p, w, lambda));
            cols[2].push(g.norm());
            cols[3].push(w.norm_squared());
            let ex = p.extras(w);
            for (c, v) in cols[4..].iter_mut().zip(ex) {
                c.push(v);
            }
        }
        tr.names = [LOSS, REG_LOSS, GRAD_NORM, WEIGHT_NORM_SQ]
            .iter()
            .map(|s| s.to_string())
            .chain(extra)
            .collect();
        tr.columns = cols;
        Ok(tr)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn timescale(&self) -> Timescale {
        self.tag
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.layout.as_ref()
    }

    pub fn set_layout(&mut self, layout: Layout) {
        self.layout = Some(layout);
    }

    pub fn final_time(&self) -> Option<T> {
        self.times.last().copied()
    }

    pub fn final_state(&self) -> Option<&DVector<T>> {
        self.states.last()
    }

    pub fn observable_names(&self) -> &[String] {
        &self.names
    }

    pub fn series(&self, name: &str) -> Option<&[T]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.columns[i])
    }

    /// Appends a named series; its length must match the sample count.
    pub fn push_observable(&mut self, name: impl Into<String>, values: Vec<T>) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "observable series",
                expected: self.len(),
                got: values.len(),
            });
        }
        if self.names.contains(&name) {
            return Err(invalid(format!("observable '{name}' already present")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn push_warning(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// Linear interpolation of the state at time `t` within the recorded range.
    pub fn state_at(&self, t: T) -> Option<DVector<T>> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first || t > last {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Some(self.states[0].clone());
        }
        if i == self.len() || self.times[i - 1] == t {
            return Some(self.states[i - 1].clone());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = (t - t0) / (t1 - t0);
        Some(&self.states[i - 1] * (T::one() - s) + &self.states[i] * s)
    }

    /// Same samples on a time axis multiplied by `factor`.
    pub(crate) fn rescaled(&self, factor: T, tag: Timescale) -> Self {
        let mut out = self.clone();
        out.times.iter_mut().for_each(|t| *t *= factor);
        out.tag = tag;
        out
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.times.truncate(n);
        self.states.truncate(n);
        self.columns.iter_mut().for_each(|c| c.truncate(n));
    }

    /// `time,<observables…>` with one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "time")?;
        for n in &self.names {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(out, "{:e}", t.as_f64())?;
            for c in &self.columns {
                write!(out, ",{:e}", c[i].as_f64())?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Quadratic;

    fn quad() -> Quadratic<f64> {
        Quadratic::diagonal(&[1.0, 2.0]).unwrap()
    }

    #[test]
    fn rejects_unsorted_times() {
        let s = vec![DVector::zeros(1), DVector::zeros(1)];
        assert!(Trajectory::new(vec![1.0, 1.0], s.clone(), 0.0, Timescale::Fast).is_err());
        assert!(Trajectory::new(vec![0.0], s, 0.0, Timescale::Fast).is_err());
    }

    #[test]
    fn standard_columns_and_csv() {
        let p = quad();
        let states = vec![DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![0.5, 0.0])];
        let tr = Trajectory::evaluate(&p, 0.1, vec![0.0, 1.0], states, Timescale::Fast).unwrap();
        assert_eq!(tr.series(LOSS).unwrap()[0], 1.5);
        assert!((tr.series(REG_LOSS).unwrap()[0] - 1.6).abs() < 1e-15);
        assert_eq!(tr.series(WEIGHT_NORM_SQ).unwrap()[1], 0.25);
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "time,loss,reg_loss,grad_norm,weight_norm_sq");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn interpolation() {
        let states = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])];
        let tr = Trajectory::new(vec![0.0, 1.0], states, 0.0, Timescale::Fast).unwrap();
        assert_eq!(tr.state_at(0.25).unwrap()[0], 0.5);
        assert_eq!(tr.state_at(1.0).unwrap()[0], 2.0);
        assert!(tr.state_at(1.5).is_none());
    }

    #[test]
    fn push_observable_checks_length() {
        let states = vec![DVector::from_vec(vec![0.0])];
        let mut tr = Trajectory::new(vec![0.0], states, 0.0, Timescale::Fast).unwrap();
        assert!(tr.push_observable("x", vec![]).is_err());
        tr.push_observable("x", vec![1.0]).unwrap();
        assert!(tr.push_observable("x", vec![1.0]).is_err());
    }
}
