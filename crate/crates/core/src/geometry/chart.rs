use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::tensor::CurvatureTensor;
use crate::error::{CurvError, Result};

pub type MetricFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type JetFn = Arc<dyn Fn(&[f64]) -> MetricJet + Send + Sync>;
pub type CurvatureFn = Arc<dyn Fn(&[f64]) -> CurvatureTensor + Send + Sync>;

/// Metric together with its first and second coordinate derivatives at a point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub g: DMatrix<f64>,
    /// `dg[k]` is the matrix of `∂_k g_ij`.
    pub dg: Vec<DMatrix<f64>>,
    /// `ddg[k * n + l]` is the matrix of `∂_k ∂_l g_ij`.
    pub ddg: Vec<DMatrix<f64>>,
}

impl MetricJet {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn second(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.ddg[k * self.dim() + l]
    }
}

/// A coordinate chart carrying a smooth Riemannian metric.
///
/// `domain` is the coordinate box used for sampling; it is not a hard
/// restriction on `metric_fn`. Periodic coordinates carry `Some(period)`.
#[derive(Clone)]
pub struct MetricChart {
    dim: usize,
    metric_fn: MetricFn,
    derivative_oracle: Option<JetFn>,
    curvature_oracle: Option<CurvatureFn>,
    periods: Vec<Option<f64>>,
    domain: Vec<(f64, f64)>,
    label: String,
}

impl fmt::Debug for MetricChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricChart")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("analytic_jet", &self.derivative_oracle.is_some())
            .field("curvature_oracle", &self.curvature_oracle.is_some())
            .field("periods", &self.periods)
            .finish()
    }
}

impl MetricChart {
    pub fn new(dim: usize, metric_fn: MetricFn) -> Self {
        MetricChart {
            dim,
            metric_fn,
            derivative_oracle: None,
            curvature_oracle: None,
            periods: vec![None; dim],
            domain: vec![(0.0, 1.0); dim],
            label: String::from("chart"),
        }
    }

    /// Flat Euclidean chart with identity metric.
    pub fn euclidean(dim: usize) -> Self {
        let n = dim;
        MetricChart::new(dim, Arc::new(move |_| DMatrix::identity(n, n)))
            .with_jet(Arc::new(move |_| MetricJet {
                g: DMatrix::identity(n, n),
                dg: vec![DMatrix::zeros(n, n); n],
                ddg: vec![DMatrix::zeros(n, n); n * n],
            }))
            .with_label("euclidean")
    }

    pub fn with_jet(mut self, jet: JetFn) -> Self {
        self.derivative_oracle = Some(jet);
        self
    }

    pub fn with_curvature(mut self, curv: CurvatureFn) -> Self {
        self.curvature_oracle = Some(curv);
        self
    }

    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Self {
        assert_eq!(periods.len(), self.dim);
        self.periods = periods;
        self
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Self {
        assert_eq!(domain.len(), self.dim);
        self.domain = domain;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn without_oracles(mut self) -> Self {
        self.derivative_oracle = None;
        self.curvature_oracle = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn has_jet(&self) -> bool {
        self.derivative_oracle.is_some()
    }

    pub fn curvature_oracle(&self) -> Option<&CurvatureFn> {
        self.curvature_oracle.as_ref()
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        (self.metric_fn)(x)
    }

    /// Metric and its Cholesky factor; fails if the metric is not SPD.
    pub fn metric_checked(&self, x: &[f64]) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
        let g = self.metric(x);
        let asym = (&g - g.transpose()).amax();
        if asym > 1e-12 * g.amax().max(1.0) || g.iter().any(|v| !v.is_finite()) {
            return Err(CurvError::SingularMetric { point: x.to_vec() });
        }
        let chol = Cholesky::new(g.clone()).ok_or_else(|| CurvError::SingularMetric { point: x.to_vec() })?;
        Ok((g, chol))
    }

    /// Analytic jet if the chart has one, otherwise central differences.
    pub fn jet(&self, x: &[f64]) -> MetricJet {
        match &self.derivative_oracle {
            Some(j) => j(x),
            None => self.fd_jet(x),
        }
    }

    /// Fourth-order central-difference jet. Steps balance O(h⁴) truncation
    /// against rounding: `ε^{1/5}` for first, `ε^{1/6}` for second derivatives,
    /// scaled by coordinate magnitude. Poles of spherical charts amplify
    /// rounding through g⁻¹, so the wider stencils matter there.
    pub fn fd_jet(&self, x: &[f64]) -> MetricJet {
        const D1: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];
        const D2: [(f64, f64); 5] = [(-2.0, -1.0 / 12.0), (-1.0, 16.0 / 12.0), (0.0, -30.0 / 12.0), (1.0, 16.0 / 12.0), (2.0, -1.0 / 12.0)];
        let n = self.dim;
        let eps = f64::EPSILON;
        let g = self.metric(x);
        let mut xp = x.to_vec();
        let step = |p: f64, xi: f64| p * xi.abs().max(1.0);

        let mut dg = Vec::with_capacity(n);
        for k in 0..n {
            let h = step(eps.powf(0.2), x[k]);
            let mut acc = DMatrix::zeros(n, n);
            for &(s, w) in &D1 {
                xp[k] = x[k] + s * h;
                acc += self.metric(&xp) * w;
            }
            xp[k] = x[k];
            dg.push(acc / h);
        }

        let mut ddg = vec![DMatrix::zeros(n, n); n * n];
        let h2: Vec<f64> = x.iter().map(|&xi| step(eps.powf(1.0 / 6.0), xi)).collect();
        for k in 0..n {
            let hk = h2[k];
            let mut acc = DMatrix::zeros(n, n);
            for &(s, w) in &D2 {
                if s == 0.0 {
                    acc += &g * w;
                    continue;
                }
                xp[k] = x[k] + s * hk;
                acc += self.metric(&xp) * w;
            }
            xp[k] = x[k];
            ddg[k * n + k] = acc / (hk * hk);
            for l in (k + 1)..n {
                let hl = h2[l];
                let mut acc = DMatrix::zeros(n, n);
                for &(sk, wk) in &D1 {
                    for &(sl, wl) in &D1 {
                        xp[k] = x[k] + sk * hk;
                        xp[l] = x[l] + sl * hl;
                        acc += self.metric(&xp) * (wk * wl);
                    }
                }
                xp[k] = x[k];
                xp[l] = x[l];
                let mixed = acc / (hk * hl);
                ddg[l * n + k] = mixed.clone();
                ddg[k * n + l] = mixed;
            }
        }
        MetricJet { g, dg, ddg }
    }

    /// Wraps coordinate `i` into its fundamental period if it has one.
    pub fn wrap(&self, x: &mut [f64]) {
        for (xi, p) in x.iter_mut().zip(&self.periods) {
            if let Some(p) = p {
                *xi = xi.rem_euclid(*p);
            }
        }
    }
}
