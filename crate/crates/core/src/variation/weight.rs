use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{CurvError, Result};
use crate::models::{TrigPoly, TrigTerm};

/// `(log ρ, ∇ log ρ, ∇² log ρ)` in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

pub type LogFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type LogJetFn = Arc<dyn Fn(&[f64]) -> LogJet + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    Log { log: LogFn, jet: Option<LogJetFn> },
}

/// Positive weight `ρ` on an ambient chart, stored through `log ρ`.
#[derive(Clone)]
pub struct WeightField {
    kind: Kind,
    label: String,
}

impl fmt::Debug for WeightField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightField({})", self.label)
    }
}

impl WeightField {
    /// `ρ ≡ c`; nonpositive constants are rejected when evaluated.
    pub fn constant(c: f64) -> Self {
        WeightField { kind: Kind::Constant(c), label: format!("const({c})") }
    }

    pub fn unit() -> Self {
        Self::constant(1.0)
    }

    /// `ρ = exp(log)`, derivatives by finite differences.
    pub fn from_log(log: LogFn) -> Self {
        WeightField { kind: Kind::Log { log, jet: None }, label: "exp(fn)".into() }
    }

    /// `ρ = exp(log)` with an analytic jet.
    pub fn from_log_jet(jet: LogJetFn) -> Self {
        let j = Arc::clone(&jet);
        WeightField { kind: Kind::Log { log: Arc::new(move |x| j(x).value), jet: Some(jet) }, label: "exp(jet)".into() }
    }

    /// `ρ = exp(Σ a cos(k·ωx + φ))` over a chart with the given periods.
    pub fn exp_trig(terms: Vec<TrigTerm>, periods: &[Option<f64>]) -> Self {
        let poly = TrigPoly::new(terms, periods);
        let w = Self::from_log_jet(Arc::new(move |x| {
            let (value, grad, hess) = poly.jet(x);
            LogJet { value, grad, hess }
        }));
        w.with_label("exp(trig)")
    }

    /// `ρ = exp(c·x)`.
    pub fn exp_linear(c: Vec<f64>) -> Self {
        let n = c.len();
        Self::from_log_jet(Arc::new(move |x| LogJet {
            value: c.iter().zip(x).map(|(a, b)| a * b).sum(),
            grad: c.clone(),
            hess: DMatrix::zeros(n, n),
        }))
        .with_label("exp(linear)")
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    pub fn has_jet(&self) -> bool {
        matches!(self.kind, Kind::Constant(_) | Kind::Log { jet: Some(_), .. })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let v = match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Log { log, .. } => log(x).exp(),
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(CurvError::NonpositiveWeight { point: x.to_vec(), value: v })
        }
    }

    pub fn log_jet(&self, x: &[f64]) -> Result<LogJet> {
        let n = x.len();
        match &self.kind {
            Kind::Constant(c) => {
                self.value(x)?;
                Ok(LogJet { value: c.ln(), grad: vec![0.0; n], hess: DMatrix::zeros(n, n) })
            }
            Kind::Log { jet: Some(j), .. } => Ok(j(x)),
            Kind::Log { log, jet: None } => Ok(fd_log_jet(log.as_ref(), x)),
        }
    }

    pub fn fd_log_jet(&self, x: &[f64]) -> Result<LogJet> {
        match &self.kind {
            Kind::Constant(_) => self.log_jet(x),
            Kind::Log { log, .. } => Ok(fd_log_jet(log.as_ref(), x)),
        }
    }
}

fn fd_log_jet(log: &(dyn Fn(&[f64]) -> f64 + Send + Sync), x: &[f64]) -> LogJet {
    let n = x.len();
    let h1 = f64::EPSILON.cbrt();
    let h2 = f64::EPSILON.powf(0.25);
    let value = log(x);
    let at = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for (i, d) in shifts {
            y[*i] += d;
        }
        log(&y)
    };
    let step = |h: f64, i: usize| h * x[i].abs().max(1.0);
    let grad: Vec<f64> = (0..n)
        .map(|i| {
            let s = step(h1, i);
            (at(&[(i, s)]) - at(&[(i, -s)])) / (2.0 * s)
        })
        .collect();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let si = step(h2, i);
        hess[(i, i)] = (at(&[(i, si)]) - 2.0 * value + at(&[(i, -si)])) / (si * si);
        for j in 0..i {
            let sj = step(h2, j);
            let v = (at(&[(i, si), (j, sj)]) - at(&[(i, si), (j, -sj)]) - at(&[(i, -si), (j, sj)]) + at(&[(i, -si), (j, -sj)])) / (4.0 * si * sj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    LogJet { value, grad, hess }
}
