//! Minimization of `C_m` over orthonormal `m`-frames (equivalently, by span
//! invariance, over the Grassmannian of `m`-planes), and sampled positivity
//! certificates built on top of it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{orthonormal_basis, riemann_coordinate, Route};
use crate::error::{CurvError, Result};
use crate::geometry::{Basis, CurvatureTensor, MetricChart, OrthonormalFrame};
use crate::rng::{derive_seed, gaussian_vec, rng_from, uniform};

/// Verdict threshold: minima above this are "positive".
pub const TOL_POS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Initial step length, relative to the inverse curvature scale.
    pub step: f64,
    pub grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { restarts: 32, max_iters: 5000, seed: 0, step: 1.0, grad_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizationResult {
    pub point: Vec<f64>,
    pub m: usize,
    pub min_value: f64,
    pub argmin_frame: OrthonormalFrame,
    pub restarts_used: usize,
    pub converged: bool,
    pub gradient_norm_at_end: f64,
}

/// Dense quadratic-frame objective for an orthonormal-basis tensor.
struct Objective {
    n: usize,
    dense: Vec<f64>,
    ricci: DMatrix<f64>,
}

impl Objective {
    fn new(t: &CurvatureTensor) -> Self {
        Objective { n: t.dim(), dense: t.to_dense(), ricci: t.ricci_orthonormal() }
    }

    /// `M(v)_ac = Rm(e_a, v, e_c, v)`.
    fn jacobi(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for a in 0..n {
            for c in a..n {
                let mut acc = 0.0;
                for b in 0..n {
                    let base = (a * n + b) * n + c;
                    let mut inner = 0.0;
                    for d in 0..n {
                        inner += self.dense[base * n + d] * v[d];
                    }
                    acc += inner * v[b];
                }
                out[(a, c)] = acc;
                out[(c, a)] = acc;
            }
        }
        out
    }

    /// `C_m(X) = Σ_p x_pᵀ Ric x_p − Σ_{p<q} Rm(x_p, x_q, x_p, x_q)` and its
    /// Euclidean gradient `2 (Ric − Σ_{q≠p} M(x_q)) x_p`.
    fn value_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let m = x.ncols();
        let cols: Vec<Vec<f64>> = (0..m).map(|p| x.column(p).iter().copied().collect()).collect();
        let jac: Vec<DMatrix<f64>> = cols.iter().map(|c| self.jacobi(c)).collect();
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(self.n, m);
        for p in 0..m {
            let xp = x.column(p);
            let mut a = self.ricci.clone();
            for (q, jq) in jac.iter().enumerate() {
                if q != p {
                    a -= jq;
                }
            }
            let ax = &a * xp;
            grad.set_column(p, &(&ax * 2.0));
            // each pair counted from both ends: subtract half of the pair terms
            let ric = (xp.transpose() * &self.ricci * xp)[(0, 0)];
            value += 0.5 * (ric + xp.dot(&ax));
        }
        (value, grad)
    }
}

/// Thin QR with `R` diagonal made positive.
fn qr_retract(y: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = y.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            let neg = -q.column(j);
            q.set_column(j, &neg);
        }
    }
    q
}

fn riemannian_grad(x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let xtg = x.transpose() * g;
    let sym = (&xtg + xtg.transpose()) * 0.5;
    g - x * sym
}

fn haar_start(seed: u64, n: usize, m: usize) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    qr_retract(&DMatrix::from_vec(n, m, gaussian_vec(&mut rng, n * m)))
}

struct Descent {
    x: DMatrix<f64>,
    value: f64,
    grad_norm: f64,
}

fn descend(obj: &Objective, mut x: DMatrix<f64>, opts: &MinimizeOptions, scale: f64) -> Descent {
    const C1: f64 = 1e-4;
    const SHRINK: f64 = 0.5;
    let (mut f, g) = obj.value_grad(&x);
    let mut xi = riemannian_grad(&x, &g);
    let mut gn = xi.norm();
    let mut t = opts.step / scale;
    let noise = 64.0 * f64::EPSILON * scale.max(1.0);
    for _ in 0..opts.max_iters {
        if gn < opts.grad_tol {
            break;
        }
        let mut accepted = false;
        let mut trial_t = t;
        for _ in 0..60 {
            let y = qr_retract(&(&x - &xi * trial_t));
            let (fy, gy) = obj.value_grad(&y);
            let armijo = fy <= f - C1 * trial_t * gn * gn;
            let xi_y = riemannian_grad(&y, &gy);
            let gn_y = xi_y.norm();
            // Near the optimum the decrease drops below roundoff in f; accept
            // steps that keep f flat and shrink the gradient.
            if armijo || (fy <= f + noise && gn_y < gn) {
                x = y;
                f = fy;
                xi = xi_y;
                gn = gn_y;
                accepted = true;
                break;
            }
            trial_t *= SHRINK;
        }
        if !accepted {
            break;
        }
        t = (trial_t * 2.0).min(opts.step * 64.0 / scale);
    }
    Descent { x, value: f, grad_norm: gn }
}

/// Minimizes `C_m` over orthonormal `m`-frames of an orthonormal-basis tensor
/// (a coordinate-basis tensor is read as if its basis were orthonormal).
/// The returned frame has identity metric and components in the tensor's basis.
pub fn minimize_cm(tensor: &CurvatureTensor, m: usize, opts: &MinimizeOptions) -> Result<MinimizationResult> {
    let n = tensor.dim();
    if m < 1 || m + 1 > n {
        return Err(CurvError::BadOrder { m, n, max: n.saturating_sub(1) });
    }
    let obj = Objective::new(tensor);
    let scale = 2.0 * (obj.ricci.norm() + m as f64 * tensor.max_abs() * n as f64) + f64::MIN_POSITIVE;
    let restarts = opts.restarts.max(1);
    let runs: Vec<Descent> =
        (0..restarts).into_par_iter().map(|i| descend(&obj, haar_start(derive_seed(opts.seed, i as u64), n, m), opts, scale)).collect();
    // ties broken by restart index, so the result is scheduling independent
    let best = runs.into_iter().reduce(|a, b| if b.value < a.value { b } else { a }).expect("at least one restart");
    let frame = OrthonormalFrame {
        point: vec![],
        metric: DMatrix::identity(n, n),
        vectors: best.x.column_iter().map(|c| c.into_owned()).collect(),
        completion: None,
    };
    Ok(MinimizationResult {
        point: vec![],
        m,
        min_value: best.value,
        argmin_frame: frame,
        restarts_used: restarts,
        converged: best.grad_norm < opts.grad_tol,
        gradient_norm_at_end: best.grad_norm,
    })
}

/// `C_m` of an identity-metric frame under an orthonormal-basis tensor.
pub fn cm_of_frame(tensor: &CurvatureTensor, x: &DMatrix<f64>) -> f64 {
    Objective::new(tensor).value_grad(x).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Grid,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub count: usize,
    pub seed: u64,
}

impl Sampler {
    pub fn random(count: usize, seed: u64) -> Self {
        Sampler { kind: SamplerKind::Random, count, seed }
    }

    pub fn grid(count: usize) -> Self {
        Sampler { kind: SamplerKind::Grid, count, seed: 0 }
    }

    /// Points inside the chart's sampling domain. `Grid` uses cell midpoints
    /// of a product grid with about `count` points (at least one per axis).
    pub fn points(&self, chart: &MetricChart) -> Vec<Vec<f64>> {
        let dom = chart.domain();
        let n = dom.len();
        match self.kind {
            SamplerKind::Random => {
                let mut rng = rng_from(self.seed);
                (0..self.count).map(|_| dom.iter().map(|(lo, hi)| uniform(&mut rng, *lo, *hi)).collect()).collect()
            }
            SamplerKind::Grid => {
                let k = ((self.count.max(1) as f64).powf(1.0 / n as f64).round() as usize).max(1);
                let total = k.pow(n as u32);
                (0..total)
                    .map(|mut idx| {
                        dom.iter()
                            .map(|(lo, hi)| {
                                let i = idx % k;
                                idx /= k;
                                lo + (hi - lo) * (i as f64 + 0.5) / k as f64
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Positive { min: f64 },
    Nonnegative { tol: f64, min: f64 },
    Indefinite { value: f64, witness: OrthonormalFrame },
}

impl Verdict {
    pub fn is_positive(&self) -> bool {
        matches!(self, Verdict::Positive { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub minimize: MinimizeOptions,
    pub route: Route,
    pub tol_pos: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { minimize: MinimizeOptions::default(), route: Route::Oracle, tol_pos: TOL_POS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub chart_id: String,
    pub m: usize,
    pub sample_points: Vec<Vec<f64>>,
    pub results: Vec<MinimizationResult>,
    pub verdict: Verdict,
}

impl PositivityCertificate {
    pub fn minima(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.min_value).collect()
    }
}

/// Minimizes `C_m` at one point. The argmin frame is returned in chart
/// coordinates with the chart metric.
pub fn minimize_at(chart: &MetricChart, point: &[f64], m: usize, opts: &CertifyOptions) -> Result<MinimizationResult> {
    let (t, _) = riemann_coordinate(chart, point, opts.route)?;
    let (g, _) = chart.metric_checked(point)?;
    let e = orthonormal_basis(&g, point)?;
    let ortho = t.change_basis(&e, Basis::Orthonormal);
    let mut res = minimize_cm(&ortho, m, &opts.minimize)?;
    let coords = DMatrix::from_columns(&res.argmin_frame.vectors);
    res.argmin_frame = OrthonormalFrame::from_orthonormal_coords(point.to_vec(), g, &e, &coords);
    res.point = point.to_vec();
    Ok(res)
}

/// Sampled positivity certificate for `C_m` over a chart.
pub fn certify(chart: &MetricChart, m: usize, sampler: &Sampler, opts: &CertifyOptions) -> Result<PositivityCertificate> {
    let points = sampler.points(chart);
    if points.is_empty() {
        return Err(CurvError::DegenerateInput("sampler produced no points".into()));
    }
    let results: Vec<MinimizationResult> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut o = *opts;
            o.minimize.seed = derive_seed(opts.minimize.seed, i as u64);
            minimize_at(chart, p, m, &o)
        })
        .collect::<Result<_>>()?;
    let worst = results.iter().min_by(|a, b| a.min_value.total_cmp(&b.min_value)).expect("nonempty");
    let verdict = if worst.min_value > opts.tol_pos {
        Verdict::Positive { min: worst.min_value }
    } else if worst.min_value < -opts.tol_pos {
        Verdict::Indefinite { value: worst.min_value, witness: worst.argmin_frame.clone() }
    } else {
        Verdict::Nonnegative { tol: opts.tol_pos, min: worst.min_value }
    };
    Ok(PositivityCertificate { chart_id: chart.label().to_string(), m, sample_points: points, results, verdict })
}

/// Column vectors of a matrix as `DVector`s.
pub fn columns(x: &DMatrix<f64>) -> Vec<DVector<f64>> {
    x.column_iter().map(|c| c.into_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::intermediate_curvature;
    use crate::models::{build_chart, ModelSpec};
    use crate::rng::rng_from;

    fn opts(seed: u64) -> MinimizeOptions {
        MinimizeOptions { seed, restarts: 8, ..Default::default() }
    }

    #[test]
    fn flat_is_zero() {
        let t = CurvatureTensor::zeros(4, Basis::Orthonormal);
        let r = minimize_cm(&t, 2, &opts(1)).unwrap();
        assert_eq!(r.min_value, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn constant_curvature_ladder() {
        for n in 3..=6 {
            let t = CurvatureTensor::constant_curvature(1.0, &DMatrix::identity(n, n), Basis::Orthonormal);
            for m in 1..n {
                let r = minimize_cm(&t, m, &opts(7)).unwrap();
                let expect = (m * n) as f64 - (m * (m + 1)) as f64 / 2.0;
                assert!((r.min_value - expect).abs() < 1e-12, "n={n} m={m}: {}", r.min_value);
            }
        }
    }

    #[test]
    fn m1_matches_ricci_eigenvalue() {
        let mut rng = rng_from(3);
        for _ in 0..5 {
            let t = CurvatureTensor::random_algebraic(5, &mut rng);
            let r = minimize_cm(&t, 1, &opts(11)).unwrap();
            let lmin = t.ricci_orthonormal().symmetric_eigenvalues().min();
            assert!((r.min_value - lmin).abs() < 1e-10, "{} vs {lmin}", r.min_value);
            assert!(r.converged, "grad {}", r.gradient_norm_at_end);
        }
    }

    #[test]
    fn result_invariants() {
        let mut rng = rng_from(5);
        let t = CurvatureTensor::random_algebraic(6, &mut rng);
        let r = minimize_cm(&t, 3, &opts(2)).unwrap();
        assert!(r.argmin_frame.orthonormality_defect() < 1e-10);
        let frame = OrthonormalFrame { point: vec![0.0; 6], ..r.argmin_frame.clone() };
        let again = intermediate_curvature(&t, &frame, 3).unwrap();
        assert!((again - r.min_value).abs() < 1e-12);
        let x = DMatrix::from_columns(&r.argmin_frame.vectors);
        assert!((cm_of_frame(&t, &x) - r.min_value).abs() < 1e-13);
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = rng_from(9);
        let t = CurvatureTensor::random_algebraic(4, &mut rng);
        let a = minimize_cm(&t, 2, &opts(4)).unwrap();
        let b = minimize_cm(&t, 2, &opts(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn certify_s2_t2() {
        let chart = build_chart(&"product(sphere(2,1), torus(2))".parse().unwrap()).unwrap();
        let o = CertifyOptions { minimize: opts(1), ..Default::default() };
        let c3 = certify(&chart, 3, &Sampler::random(6, 1), &o).unwrap();
        assert!(c3.verdict.is_positive());
        assert!(c3.minima().iter().all(|v| (v - 1.0).abs() < 1e-4));
        let c2 = certify(&chart, 2, &Sampler::random(6, 2), &o).unwrap();
        assert!(matches!(c2.verdict, Verdict::Nonnegative { .. }), "{:?}", c2.verdict);
        // the argmin plane is the torus factor: no sphere components
        for r in &c2.results {
            for v in &r.argmin_frame.vectors {
                assert!(v[0].abs() < 1e-4 && v[1].abs() < 1e-4);
            }
        }
    }

    #[test]
    fn indefinite_has_witness() {
        // product of a sphere with a hyperbolic-like negative block
        let mut t = CurvatureTensor::zeros(4, Basis::Orthonormal);
        t.set(0, 1, 0, 1, 1.0);
        t.set(2, 3, 2, 3, -1.0);
        let chart = MetricChart::euclidean(4).with_curvature(std::sync::Arc::new(move |_| t.clone().with_basis(Basis::Coordinate)));
        let c = certify(&chart, 1, &Sampler::grid(1), &CertifyOptions { minimize: opts(0), ..Default::default() }).unwrap();
        match c.verdict {
            Verdict::Indefinite { value, witness } => {
                assert!((value + 1.0).abs() < 1e-9);
                assert!(witness.orthonormality_defect() < 1e-10);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn grid_sampler_counts() {
        let chart = build_chart(&ModelSpec::torus(2)).unwrap();
        assert_eq!(Sampler::grid(16).points(&chart).len(), 16);
    }
}
