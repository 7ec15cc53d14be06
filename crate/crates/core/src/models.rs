//! Closed-form model geometries: round spheres, flat tori, Riemannian
//! products and conformal deformations, with analytic jets and (where they
//! exist) curvature oracles.
//!
//! Specs have a small textual form used by the CLI:
//!
//! ```text
//! sphere(2, 1.0)
//! torus(2, [1.0, 1.0])
//! product(sphere(2,1), torus(2))
//! conformal(torus(3), [0.05, [0, 0, 1], 0.0], [0.02, [1, 1, 0], 0.5])
//! ```
//!
//! A conformal term `[a, [k_1..k_n], φ]` contributes `a cos(Σ k_i ω_i x_i + φ)`
//! to `u`, with `ω_i = 2π / period_i` on periodic coordinates and `1` otherwise;
//! the metric is `e^{2u} g_base`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CurvError, Result};
use crate::geometry::{Basis, CurvatureTensor, MetricChart, MetricJet};

/// Polar caps of sphere charts are trimmed to `θ ∈ [δ, π − δ]` for sampling.
pub const POLAR_TRIM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub wave: Vec<f64>,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Sphere { dim: usize, radius: f64 },
    FlatTorus { dim: usize, periods: Vec<f64> },
    Product(Box<ModelSpec>, Box<ModelSpec>),
    Conformal { base: Box<ModelSpec>, terms: Vec<TrigTerm> },
}

impl ModelSpec {
    pub fn sphere(dim: usize, radius: f64) -> Self {
        ModelSpec::Sphere { dim, radius }
    }

    /// Flat torus with unit periods.
    pub fn torus(dim: usize) -> Self {
        ModelSpec::FlatTorus { dim, periods: vec![1.0; dim] }
    }

    pub fn product(a: ModelSpec, b: ModelSpec) -> Self {
        ModelSpec::Product(Box::new(a), Box::new(b))
    }

    pub fn conformal(base: ModelSpec, terms: Vec<TrigTerm>) -> Self {
        ModelSpec::Conformal { base: Box::new(base), terms }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Sphere { dim, .. } | ModelSpec::FlatTorus { dim, .. } => *dim,
            ModelSpec::Product(a, b) => a.dim() + b.dim(),
            ModelSpec::Conformal { base, .. } => base.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Sphere { dim, radius } => {
                if *dim == 0 {
                    return Err(CurvError::BadSpec("sphere dimension must be positive".into()));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(CurvError::BadSpec(format!("sphere radius must be positive, got {radius}")));
                }
            }
            ModelSpec::FlatTorus { dim, periods } => {
                if *dim == 0 {
                    return Err(CurvError::BadSpec("torus dimension must be positive".into()));
                }
                if periods.len() != *dim {
                    return Err(CurvError::BadSpec(format!("torus({dim}) needs {dim} periods, got {}", periods.len())));
                }
                if let Some(p) = periods.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
                    return Err(CurvError::BadSpec(format!("torus period must be positive, got {p}")));
                }
            }
            ModelSpec::Product(a, b) => {
                a.validate()?;
                b.validate()?;
            }
            ModelSpec::Conformal { base, terms } => {
                base.validate()?;
                for t in terms {
                    if t.wave.len() != base.dim() {
                        return Err(CurvError::BadSpec(format!(
                            "conformal term has {} wave numbers, base has dimension {}",
                            t.wave.len(),
                            base.dim()
                        )));
                    }
                    if !t.amplitude.is_finite() || !t.phase.is_finite() || t.wave.iter().any(|k| !k.is_finite()) {
                        return Err(CurvError::BadSpec("conformal term has non-finite entries".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Factor dimensions, flattening nested products (conformal counts as one factor).
    pub fn factors(&self) -> Vec<&ModelSpec> {
        match self {
            ModelSpec::Product(a, b) => {
                let mut v = a.factors();
                v.extend(b.factors());
                v
            }
            other => vec![other],
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(v: &[f64]) -> String {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", parts.join(", "))
        }
        match self {
            ModelSpec::Sphere { dim, radius } => write!(f, "sphere({dim}, {radius:?})"),
            ModelSpec::FlatTorus { dim, periods } => write!(f, "torus({dim}, {})", list(periods)),
            ModelSpec::Product(a, b) => write!(f, "product({a}, {b})"),
            ModelSpec::Conformal { base, terms } => {
                write!(f, "conformal({base}")?;
                for t in terms {
                    write!(f, ", [{:?}, {}, {:?}]", t.amplitude, list(&t.wave), t.phase)?;
                }
                write!(f, ")")
            }
        }
    }
}

// --- parser -----------------------------------------------------------------

#[derive(Debug, Clone)]
enum Arg {
    Num(f64),
    List(Vec<Arg>),
    Spec(ModelSpec),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(CurvError::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a model name");
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && matches!(self.src[self.pos], b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E') {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("invalid number '{text}'"))
            }
        }
    }

    fn arg(&mut self) -> Result<Arg> {
        match self.peek() {
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(Arg::List(items));
                }
                loop {
                    items.push(self.arg()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Arg::List(items));
                        }
                        _ => return self.err("expected ',' or ']'"),
                    }
                }
            }
            Some(c) if c.is_ascii_alphabetic() => Ok(Arg::Spec(self.spec()?)),
            Some(_) => Ok(Arg::Num(self.number()?)),
            None => self.err("unexpected end of input"),
        }
    }

    fn spec(&mut self) -> Result<ModelSpec> {
        let start = self.pos;
        let name = self.ident()?;
        self.expect(b'(')?;
        let mut args = Vec::new();
        if self.peek() != Some(b')') {
            loop {
                args.push(self.arg()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => break,
                    _ => return self.err("expected ',' or ')'"),
                }
            }
        }
        self.expect(b')')?;
        let bad = |msg: String| Err(CurvError::Parse { pos: start, msg });
        let as_dim = |a: &Arg| match a {
            Arg::Num(v) if *v >= 0.0 && v.fract() == 0.0 => Some(*v as usize),
            _ => None,
        };
        let as_nums = |a: &Arg| match a {
            Arg::List(items) => items.iter().map(|i| if let Arg::Num(v) = i { Some(*v) } else { None }).collect::<Option<Vec<f64>>>(),
            _ => None,
        };
        let spec = match name.as_str() {
            "sphere" => {
                let dim = args.first().and_then(as_dim);
                let radius = match args.get(1) {
                    None => Some(1.0),
                    Some(Arg::Num(r)) => Some(*r),
                    _ => None,
                };
                match (dim, radius, args.len() <= 2) {
                    (Some(dim), Some(radius), true) => ModelSpec::Sphere { dim, radius },
                    _ => return bad("usage: sphere(k, radius)".into()),
                }
            }
            "torus" | "flat_torus" => {
                let dim = args.first().and_then(as_dim);
                let periods = match (dim, args.get(1)) {
                    (Some(d), None) => Some(vec![1.0; d]),
                    (Some(_), Some(a)) => as_nums(a),
                    _ => None,
                };
                match (dim, periods, args.len() <= 2) {
                    (Some(dim), Some(periods), true) => ModelSpec::FlatTorus { dim, periods },
                    _ => return bad("usage: torus(m, [periods])".into()),
                }
            }
            "product" => {
                let mut specs = args.into_iter().map(|a| if let Arg::Spec(s) = a { Some(s) } else { None });
                let first = specs.next().flatten();
                let Some(mut acc) = first else { return bad("usage: product(spec, spec, ...)".into()) };
                let mut count = 1;
                for s in specs {
                    match s {
                        Some(s) => acc = ModelSpec::product(acc, s),
                        None => return bad("product arguments must be model specs".into()),
                    }
                    count += 1;
                }
                if count < 2 {
                    return bad("product needs at least two factors".into());
                }
                acc
            }
            "conformal" => {
                let mut it = args.into_iter();
                let Some(Arg::Spec(base)) = it.next() else { return bad("usage: conformal(spec, [a, [k..], phase], ...)".into()) };
                let mut terms = Vec::new();
                for a in it {
                    let Arg::List(items) = a else { return bad("conformal terms must be lists".into()) };
                    let term = match items.as_slice() {
                        [Arg::Num(amp), wave, Arg::Num(phase)] => as_nums(wave).map(|w| TrigTerm { amplitude: *amp, wave: w, phase: *phase }),
                        [Arg::Num(amp), wave] => as_nums(wave).map(|w| TrigTerm { amplitude: *amp, wave: w, phase: 0.0 }),
                        _ => None,
                    };
                    match term {
                        Some(t) => terms.push(t),
                        None => return bad("conformal term must be [amplitude, [wave numbers], phase]".into()),
                    }
                }
                ModelSpec::conformal(base, terms)
            }
            other => return bad(format!("unknown model '{other}'")),
        };
        Ok(spec)
    }
}

impl FromStr for ModelSpec {
    type Err = CurvError;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { src: s.as_bytes(), pos: 0 };
        let spec = p.spec()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        spec.validate()?;
        Ok(spec)
    }
}

// --- diagonal warped metrics -------------------------------------------------

/// One-variable factor of a diagonal metric entry.
#[derive(Debug, Clone, Copy)]
enum Factor {
    /// `sin² x`
    Sin2,
    /// `x²`
    Square,
}

impl Factor {
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Factor::Sin2 => {
                let s = x.sin();
                (s * s, (2.0 * x).sin(), 2.0 * (2.0 * x).cos())
            }
            Factor::Square => (x * x, 2.0 * x, 2.0),
        }
    }
}

/// `g = diag(c_i Π_{(j, f) ∈ entries_i} f(x_j))` with analytic derivatives.
#[derive(Debug, Clone)]
struct DiagonalProduct {
    scale: Vec<f64>,
    entries: Vec<Vec<(usize, Factor)>>,
}

impl DiagonalProduct {
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.scale.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = self.scale[i] * self.entries[i].iter().map(|(j, f)| f.eval(x[*j]).0).product::<f64>();
        }
        g
    }

    fn jet(&self, x: &[f64]) -> MetricJet {
        let n = self.scale.len();
        let mut dg = vec![DMatrix::zeros(n, n); n];
        let mut ddg = vec![DMatrix::zeros(n, n); n * n];
        for i in 0..n {
            let vals: Vec<(usize, (f64, f64, f64))> = self.entries[i].iter().map(|(j, f)| (*j, f.eval(x[*j]))).collect();
            let prod_except =
                |skip: &[usize]| -> f64 { vals.iter().enumerate().filter(|(idx, _)| !skip.contains(idx)).map(|(_, (_, v))| v.0).product::<f64>() };
            for (a, (ja, va)) in vals.iter().enumerate() {
                dg[*ja][(i, i)] += self.scale[i] * va.1 * prod_except(&[a]);
                ddg[ja * n + ja][(i, i)] += self.scale[i] * va.2 * prod_except(&[a]);
                for (b, (jb, vb)) in vals.iter().enumerate() {
                    if b != a {
                        ddg[ja * n + jb][(i, i)] += self.scale[i] * va.1 * vb.1 * prod_except(&[a, b]);
                    }
                }
            }
        }
        MetricJet { g: self.metric(x), dg, ddg }
    }

    fn into_chart(self, label: String) -> MetricChart {
        let n = self.scale.len();
        let a = Arc::new(self);
        let b = Arc::clone(&a);
        MetricChart::new(n, Arc::new(move |x| a.metric(x))).with_jet(Arc::new(move |x| b.jet(x))).with_label(label)
    }
}

/// Round `k`-sphere of radius `r` in iterated polar coordinates
/// `(θ_1, …, θ_{k−1}, φ)`, `g = r² diag(1, sin²θ_1, sin²θ_1 sin²θ_2, …)`.
pub fn sphere_chart(k: usize, radius: f64) -> MetricChart {
    let entries: Vec<Vec<(usize, Factor)>> = (0..k).map(|i| (0..i).map(|j| (j, Factor::Sin2)).collect()).collect();
    let dp = DiagonalProduct { scale: vec![radius * radius; k], entries };
    let mut periods = vec![None; k];
    periods[k - 1] = Some(2.0 * PI);
    let mut domain = vec![(POLAR_TRIM, PI - POLAR_TRIM); k];
    domain[k - 1] = (0.0, 2.0 * PI);
    let kk = 1.0 / (radius * radius);
    let chart = dp.into_chart(format!("sphere({k}, {radius:?})")).with_periods(periods).with_domain(domain);
    let metric = chart.clone();
    chart.with_curvature(Arc::new(move |x| CurvatureTensor::constant_curvature(kk, &metric.metric(x), Basis::Coordinate)))
}

/// Round unit `S³` in Hopf coordinates `(η, ξ_1, ξ_2)`,
/// `g = dη² + sin²η dξ_1² + cos²η dξ_2²`, with both `ξ` periodic. Graphs
/// `η = u(ξ_1, ξ_2)` over the whole torus of `ξ` avoid every chart
/// boundary; `η = π/4` is the Clifford torus.
pub fn hopf_sphere_chart() -> MetricChart {
    let metric = Arc::new(|x: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, x[0].sin().powi(2), x[0].cos().powi(2)])));
    let jet = Arc::new(|x: &[f64]| {
        let (s2, c2) = ((2.0 * x[0]).sin(), (2.0 * x[0]).cos());
        let diag = |a: f64, b: f64, c: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![a, b, c]));
        let z = DMatrix::zeros(3, 3);
        let mut ddg = vec![z.clone(); 9];
        ddg[0] = diag(0.0, 2.0 * c2, -2.0 * c2);
        MetricJet { g: diag(1.0, x[0].sin().powi(2), x[0].cos().powi(2)), dg: vec![diag(0.0, s2, -s2), z.clone(), z], ddg }
    });
    let chart = MetricChart::new(3, metric)
        .with_jet(jet)
        .with_periods(vec![None, Some(2.0 * PI), Some(2.0 * PI)])
        .with_domain(vec![(POLAR_TRIM, PI / 2.0 - POLAR_TRIM), (0.0, 2.0 * PI), (0.0, 2.0 * PI)])
        .with_label("hopf_sphere(3)");
    let m = chart.clone();
    chart.with_curvature(Arc::new(move |x| CurvatureTensor::constant_curvature(1.0, &m.metric(x), Basis::Coordinate)))
}

/// Euclidean `R^d` in polar coordinates `(r, θ_1, …, θ_{d−2}, φ)`.
pub fn euclidean_polar_chart(d: usize) -> MetricChart {
    let entries: Vec<Vec<(usize, Factor)>> = (0..d)
        .map(|i| {
            if i == 0 {
                vec![]
            } else {
                let mut v = vec![(0, Factor::Square)];
                v.extend((1..i).map(|j| (j, Factor::Sin2)));
                v
            }
        })
        .collect();
    let dp = DiagonalProduct { scale: vec![1.0; d], entries };
    let mut periods = vec![None; d];
    periods[d - 1] = Some(2.0 * PI);
    let mut domain = vec![(POLAR_TRIM, PI - POLAR_TRIM); d];
    domain[0] = (0.5, 2.0);
    domain[d - 1] = (0.0, 2.0 * PI);
    let chart = dp.into_chart(format!("euclidean_polar({d})")).with_periods(periods).with_domain(domain);
    let metric = chart.clone();
    chart.with_curvature(Arc::new(move |_| CurvatureTensor::zeros(metric.dim(), Basis::Coordinate)))
}

pub fn flat_torus_chart(periods: &[f64]) -> MetricChart {
    let n = periods.len();
    let label = format!("torus({n}, {periods:?})");
    MetricChart::euclidean(n)
        .with_curvature(Arc::new(move |_| CurvatureTensor::zeros(n, Basis::Coordinate)))
        .with_periods(periods.iter().map(|p| Some(*p)).collect())
        .with_domain(periods.iter().map(|p| (0.0, *p)).collect())
        .with_label(label)
}

/// Block-diagonal curvature of a Riemannian product: `Rm` vanishes unless all
/// four indices lie in the same factor.
pub fn product_curvature_oracle(blocks: &[CurvatureTensor]) -> CurvatureTensor {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    let basis = blocks.first().map(|b| b.basis()).unwrap_or(Basis::Coordinate);
    let mut out = CurvatureTensor::zeros(n, basis);
    let mut off = 0;
    for b in blocks {
        let k = b.dim();
        for p in 0..k {
            for q in (p + 1)..k {
                for r in 0..k {
                    for s in (r + 1)..k {
                        out.set(p + off, q + off, r + off, s + off, b.get(p, q, r, s));
                    }
                }
            }
        }
        off += k;
    }
    out
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut g = DMatrix::zeros(na + nb, na + nb);
    g.view_mut((0, 0), (na, na)).copy_from(a);
    g.view_mut((na, na), (nb, nb)).copy_from(b);
    g
}

fn product_chart(a: MetricChart, b: MetricChart) -> MetricChart {
    let (na, nb) = (a.dim(), b.dim());
    let n = na + nb;
    let (ma, mb) = (a.clone(), b.clone());
    let mut chart = MetricChart::new(n, Arc::new(move |x: &[f64]| block_diag(&ma.metric(&x[..na]), &mb.metric(&x[na..]))));
    if a.has_jet() && b.has_jet() {
        let (ja, jb) = (a.clone(), b.clone());
        chart = chart.with_jet(Arc::new(move |x: &[f64]| {
            let (pa, pb) = (ja.jet(&x[..na]), jb.jet(&x[na..]));
            let za = DMatrix::zeros(na, na);
            let zb = DMatrix::zeros(nb, nb);
            let mut dg = Vec::with_capacity(n);
            for k in 0..n {
                dg.push(if k < na { block_diag(&pa.dg[k], &zb) } else { block_diag(&za, &pb.dg[k - na]) });
            }
            let mut ddg = vec![DMatrix::zeros(n, n); n * n];
            for k in 0..n {
                for l in 0..n {
                    if k < na && l < na {
                        ddg[k * n + l] = block_diag(pa.second(k, l), &zb);
                    } else if k >= na && l >= na {
                        ddg[k * n + l] = block_diag(&za, pb.second(k - na, l - na));
                    }
                }
            }
            MetricJet { g: block_diag(&pa.g, &pb.g), dg, ddg }
        }));
    }
    if let (Some(oa), Some(ob)) = (a.curvature_oracle().cloned(), b.curvature_oracle().cloned()) {
        chart = chart.with_curvature(Arc::new(move |x: &[f64]| product_curvature_oracle(&[oa(&x[..na]), ob(&x[na..])])));
    }
    let mut periods = a.periods().to_vec();
    periods.extend_from_slice(b.periods());
    let mut domain = a.domain().to_vec();
    domain.extend_from_slice(b.domain());
    chart.with_periods(periods).with_domain(domain).with_label(format!("product({}, {})", a.label(), b.label()))
}

/// Scalar trig polynomial `u` with analytic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct TrigPoly {
    terms: Vec<TrigTerm>,
    omega: Vec<f64>,
}

impl TrigPoly {
    pub fn new(terms: Vec<TrigTerm>, periods: &[Option<f64>]) -> Self {
        let omega = periods.iter().map(|p| p.map_or(1.0, |p| 2.0 * PI / p)).collect();
        TrigPoly { terms, omega }
    }

    fn freq(&self, t: &TrigTerm) -> Vec<f64> {
        t.wave.iter().zip(&self.omega).map(|(k, w)| k * w).collect()
    }

    /// `(u, ∇u, ∇²u)`.
    pub fn jet(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let n = self.omega.len();
        let mut u = 0.0;
        let mut du = vec![0.0; n];
        let mut ddu = DMatrix::zeros(n, n);
        for t in &self.terms {
            let w = self.freq(t);
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + t.phase;
            let (s, c) = arg.sin_cos();
            u += t.amplitude * c;
            for i in 0..n {
                du[i] -= t.amplitude * s * w[i];
                for j in 0..n {
                    ddu[(i, j)] -= t.amplitude * c * w[i] * w[j];
                }
            }
        }
        (u, du, ddu)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut u = 0.0;
        for t in &self.terms {
            let arg: f64 = self.freq(t).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + t.phase;
            u += t.amplitude * arg.cos();
        }
        u
    }
}

fn conformal_chart(base: MetricChart, terms: Vec<TrigTerm>) -> MetricChart {
    let n = base.dim();
    let poly = Arc::new(TrigPoly::new(terms, base.periods()));
    let (b1, p1) = (base.clone(), Arc::clone(&poly));
    let mut chart = MetricChart::new(n, Arc::new(move |x: &[f64]| b1.metric(x) * (2.0 * p1.value(x)).exp()));
    if base.has_jet() {
        let (b2, p2) = (base.clone(), Arc::clone(&poly));
        chart = chart.with_jet(Arc::new(move |x: &[f64]| {
            let bj = b2.jet(x);
            let (u, du, ddu) = p2.jet(x);
            let e = (2.0 * u).exp();
            let g = &bj.g * e;
            let dg: Vec<DMatrix<f64>> = (0..n).map(|k| (&bj.g * (2.0 * du[k]) + &bj.dg[k]) * e).collect();
            let mut ddg = Vec::with_capacity(n * n);
            for k in 0..n {
                for l in 0..n {
                    let m =
                        &bj.g * (4.0 * du[k] * du[l] + 2.0 * ddu[(k, l)]) + &bj.dg[l] * (2.0 * du[k]) + &bj.dg[k] * (2.0 * du[l]) + bj.second(k, l);
                    ddg.push(m * e);
                }
            }
            MetricJet { g, dg, ddg }
        }));
    }
    let label = format!("conformal({})", base.label());
    chart.with_periods(base.periods().to_vec()).with_domain(base.domain().to_vec()).with_label(label)
}

/// Builds the chart of a model. Sphere, torus and product charts carry both
/// analytic jets and curvature oracles; conformal charts carry jets.
pub fn build_chart(spec: &ModelSpec) -> Result<MetricChart> {
    spec.validate()?;
    Ok(match spec {
        ModelSpec::Sphere { dim, radius } => sphere_chart(*dim, *radius),
        ModelSpec::FlatTorus { periods, .. } => flat_torus_chart(periods),
        ModelSpec::Product(a, b) => product_chart(build_chart(a)?, build_chart(b)?),
        ModelSpec::Conformal { base, terms } => conformal_chart(build_chart(base)?, terms.clone()),
    }
    .with_label(spec.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{curvature_report, riemann_coordinate, Route};
    use proptest::prelude::*;

    #[test]
    fn hopf_chart_jet_and_curvature() {
        let c = hopf_sphere_chart();
        let x = [0.6, 1.0, 2.0];
        let a = c.jet(&x);
        let f = c.fd_jet(&x);
        assert!((&a.g - &f.g).amax() < 1e-12);
        assert!(a.dg.iter().zip(&f.dg).all(|(p, q)| (p - q).amax() < 1e-7));
        let (t, _) = crate::curvature::riemann_coordinate(&c, &x, crate::curvature::Route::Analytic).unwrap();
        let o = c.curvature_oracle().unwrap()(&x);
        assert!(t.add(&o.scale(-1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn parse_examples() {
        let s: ModelSpec = "product(sphere(2,1.0), torus(2,[1.0,1.0]))".parse().unwrap();
        assert_eq!(s, ModelSpec::product(ModelSpec::sphere(2, 1.0), ModelSpec::torus(2)));
        let c: ModelSpec = "conformal(torus(3), [0.05, [0,0,1], 0.0])".parse().unwrap();
        assert_eq!(c.dim(), 3);
        let p3: ModelSpec = "product(sphere(2), torus(1), torus(1))".parse().unwrap();
        assert_eq!(p3.dim(), 4);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!("sphere(2, -1)".parse::<ModelSpec>(), Err(CurvError::BadSpec(_))));
        assert!(matches!("torus(2, [1.0, 0.0])".parse::<ModelSpec>(), Err(CurvError::BadSpec(_))));
        assert!(matches!("cube(3)".parse::<ModelSpec>(), Err(CurvError::Parse { .. })));
        assert!(matches!("torus(2) x".parse::<ModelSpec>(), Err(CurvError::Parse { .. })));
        assert!(matches!("conformal(torus(2), [0.1, [1], 0])".parse::<ModelSpec>(), Err(CurvError::BadSpec(_))));
    }

    fn arb_spec() -> impl Strategy<Value = ModelSpec> {
        let leaf = prop_oneof![
            (1usize..4, 0.1f64..5.0).prop_map(|(d, r)| ModelSpec::sphere(d, r)),
            prop::collection::vec(0.1f64..5.0, 1..4).prop_map(|p| ModelSpec::FlatTorus { dim: p.len(), periods: p }),
        ];
        leaf.prop_recursive(2, 6, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| ModelSpec::product(a, b)),
                (inner, -0.2f64..0.2, -3.0f64..3.0).prop_map(|(b, a, ph)| {
                    let d = b.dim();
                    ModelSpec::conformal(b, vec![TrigTerm { amplitude: a, wave: vec![1.0; d], phase: ph }])
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(spec in arb_spec()) {
            let text = spec.to_string();
            let back: ModelSpec = text.parse().unwrap();
            prop_assert_eq!(back, spec);
        }
    }

    #[test]
    fn flat_torus_is_flat() {
        let chart = build_chart(&ModelSpec::torus(3)).unwrap();
        assert_eq!(chart.metric(&[0.2, 0.3, 0.4]), DMatrix::identity(3, 3));
        let (t, _) = riemann_coordinate(&chart, &[0.2, 0.3, 0.4], Route::Oracle).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn sphere_scalar_curvature() {
        for r in [0.5, 1.0, 2.0] {
            let chart = build_chart(&ModelSpec::sphere(2, r)).unwrap();
            for route in [Route::Oracle, Route::Analytic, Route::FiniteDifference] {
                let rep = curvature_report(&chart, &[1.0, 0.5], route).unwrap();
                let tol = if route == Route::FiniteDifference { 1e-4 } else { 1e-9 };
                assert!((rep.scalar - 2.0 / (r * r)).abs() < tol, "r={r} {route:?} {}", rep.scalar);
            }
        }
    }

    #[test]
    fn sphere_jet_matches_fd() {
        let chart = sphere_chart(4, 1.3);
        let x = [0.7, 1.9, 1.2, 0.3];
        let a = chart.jet(&x);
        let f = chart.fd_jet(&x);
        for k in 0..4 {
            assert!((&a.dg[k] - &f.dg[k]).amax() < 1e-8);
            for l in 0..4 {
                assert!((a.second(k, l) - f.second(k, l)).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn product_structure() {
        let chart = build_chart(&"product(sphere(2,1), torus(2))".parse().unwrap()).unwrap();
        let x = [1.2, 0.3, 0.5, 0.5];
        let rep = curvature_report(&chart, &x, Route::Oracle).unwrap();
        assert!((rep.scalar - 2.0).abs() < 1e-12);
        let (t, _) = riemann_coordinate(&chart, &x, Route::Oracle).unwrap();
        assert_eq!(t.get(0, 2, 0, 2), 0.0);
        let g = chart.metric(&x);
        assert!((t.get(0, 1, 0, 1) / (g[(0, 0)] * g[(1, 1)]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_sphere_product_oracle() {
        let chart = build_chart(&"product(sphere(3,2), sphere(2,1))".parse().unwrap()).unwrap();
        let x = [1.0, 1.1, 0.2, 1.3, 0.4];
        let rep = curvature_report(&chart, &x, Route::Oracle).unwrap();
        // orthonormal basis from Gram-Schmidt of axes is block aligned for a diagonal metric
        assert!((rep.tensor.get(0, 1, 0, 1) - 0.25).abs() < 1e-12);
        assert!((rep.tensor.get(3, 4, 3, 4) - 1.0).abs() < 1e-12);
        assert_eq!(rep.tensor.get(0, 3, 0, 3), 0.0);
        let fd = curvature_report(&chart, &x, Route::FiniteDifference).unwrap();
        assert!((fd.scalar - rep.scalar).abs() < 1e-4);
    }

    #[test]
    fn constant_conformal_factor_keeps_torus_flat() {
        let chart = build_chart(&"conformal(torus(3), [0.3, [0,0,0], 0.2])".parse().unwrap()).unwrap();
        let (t, _) = riemann_coordinate(&chart, &[0.1, 0.6, 0.3], Route::Analytic).unwrap();
        assert!(t.max_abs() < 1e-9);
    }

    #[test]
    fn conformal_jet_matches_fd() {
        let chart = build_chart(&"conformal(product(sphere(2,1), torus(1)), [0.1, [1,2,1], 0.3])".parse().unwrap()).unwrap();
        let x = [1.0, 0.4, 0.25];
        let a = chart.jet(&x);
        let f = chart.fd_jet(&x);
        for k in 0..3 {
            assert!((&a.dg[k] - &f.dg[k]).amax() < 1e-8);
            for l in 0..3 {
                assert!((a.second(k, l) - f.second(k, l)).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn torus_periodicity_is_exact() {
        let chart = build_chart(&"conformal(torus(2, [1.0, 2.0]), [0.2, [1, 0], 0.0])".parse().unwrap()).unwrap();
        let a = chart.metric(&[0.25, 0.5]);
        let b = chart.metric(&[0.25, 2.5]);
        assert_eq!(a, b);
        let flat = build_chart(&ModelSpec::FlatTorus { dim: 2, periods: vec![1.0, 3.0] }).unwrap();
        assert_eq!(flat.metric(&[0.1, 0.2]), flat.metric(&[1.1, 3.2]));
    }

    #[test]
    fn euclidean_polar_is_flat() {
        let chart = euclidean_polar_chart(3);
        let (t, _) = riemann_coordinate(&chart, &[1.5, 0.8, 0.1], Route::Analytic).unwrap();
        assert!(t.max_abs() < 1e-12);
    }

    #[test]
    fn bad_spec_rejected() {
        assert!(build_chart(&ModelSpec::sphere(2, 0.0)).is_err());
    }
}
