//! Term-by-term evaluation of the main inequality on a discrete slicing and
//! the geometric checks built on it.
//!
//! Everything is evaluated at the cells of the bottom slice `Σ_m` against the
//! adapted frame `e_1 = ν_1, …, e_m = ν_m, e_{m+1}, …, e_n` tangent to `Σ_m`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::build::{Slicing, TopSliceChart};
use super::feasibility::{alpha_identity_failure, coefficient_f64, require_feasible};
use super::identities::{eigen_equation_residual, first_slicing_identity_residual, second_slicing_identity_residual};
use super::lemmas::{gauss_pairs, vk_terms_unchecked};
use crate::curvature::{cm_axes, riemann_coordinate, Route};
use crate::error::{CurvError, Result};
use crate::geometry::{Basis, CurvatureTensor, MetricChart};
use crate::grassmann::{certify, CertifyOptions, PositivityCertificate, Sampler, Verdict};
use crate::variation::{graph_cell_geometry, quadratic_form_quadrature, sup_norm, CellGeometry, CRITICAL_TOL};

/// Data of the bottom slice at one cell.
#[derive(Debug, Clone)]
pub struct BottomCell {
    pub point: Vec<f64>,
    /// Columns `e_1 … e_n` in ambient coordinates.
    pub frame: DMatrix<f64>,
    /// Ambient curvature in the frame.
    pub rm: CurvatureTensor,
    /// `h_{Σ_k}` over `e_{k+1} … e_n`, `k = 1..m`.
    pub h: Vec<DMatrix<f64>>,
    /// `Ric_{Σ_{k−1}}(ν_k, ν_k)`, `k = 1..m`, each from the intrinsic
    /// geometry of `Σ_{k−1}`.
    pub ric: Vec<f64>,
    /// `⟨D_{Σ_k} log ρ_k, D_{Σ_k} w_k⟩`, `k = 1..m−1`.
    pub gradient: Vec<f64>,
    /// `dμ` of `Σ_m` at the cell.
    pub area: f64,
    /// `ρ_{m−1}`.
    pub rho_prev: f64,
}

impl BottomCell {
    pub fn mean_curvature(&self, k: usize) -> f64 {
        self.h[k - 1].trace()
    }
}

/// `g`-orthonormal `e_2, e_3` from two chart vectors of `Σ_1` and the
/// components of `h_{Σ_1}` against them.
fn top_frame(cell: &CellGeometry, a: &DVector<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = &cell.metric;
    let t = &cell.tangents;
    let ip = |x: &DVector<f64>, y: &DVector<f64>| (x.transpose() * g * y)[(0, 0)];
    let ea = t * a;
    let na = ip(&ea, &ea).sqrt();
    let (ca, e2) = (a / na, ea / na);
    let eb = t * b;
    let proj = ip(&eb, &e2);
    let rb = &eb - &e2 * proj;
    let nb = ip(&rb, &rb).sqrt();
    let (cb, e3) = ((b - &ca * proj) / nb, rb / nb);
    let frame = DMatrix::from_columns(&[cell.normal.clone(), e2, e3]);
    let coef = DMatrix::from_columns(&[ca, cb]);
    (frame, coef.transpose() * &cell.second_form * coef)
}

fn ambient_in_frame(ambient: &MetricChart, point: &[f64], frame: &DMatrix<f64>) -> Result<CurvatureTensor> {
    let (t, _) = riemann_coordinate(ambient, point, Route::Oracle)?;
    Ok(t.change_basis(frame, Basis::Orthonormal))
}

fn ric_first(rm: &CurvatureTensor) -> f64 {
    (1..rm.dim()).map(|j| rm.get(0, j, 0, j)).sum()
}

fn order_one_cells(sl: &Slicing) -> Result<Vec<BottomCell>> {
    let l = sl.level(1)?;
    let geom = l.surface.geometry()?;
    let (a, b) = (DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]));
    geom.cells
        .iter()
        .map(|c| {
            let (frame, h1) = top_frame(c, &a, &b);
            let rm = ambient_in_frame(&sl.ambient, &c.point, &frame)?;
            Ok(BottomCell {
                point: c.point.clone(),
                ric: vec![ric_first(&rm)],
                frame,
                rm,
                h: vec![h1],
                gradient: vec![],
                area: c.area,
                rho_prev: 1.0,
            })
        })
        .collect()
}

/// `Σ_1` at a point `(x, y)` of its chart, from the spectral height jet.
fn top_cell(sl: &Slicing, tc: &TopSliceChart, q: &[f64]) -> Result<CellGeometry> {
    let j = tc.height.jet(q[0], q[1]);
    let ddu = DMatrix::from_row_slice(2, 2, &[j[3], j[4], j[4], j[5]]);
    graph_cell_geometry(&sl.ambient, 2, vec![q[0], q[1], j[0]], &[j[1], j[2]], &ddu, 1.0)
}

fn order_two_cells(sl: &Slicing) -> Result<Vec<BottomCell>> {
    let tc = sl.top_chart.as_ref().ok_or_else(|| CurvError::IncompleteSlicing("top chart missing".into()))?;
    let curve = sl.level(2)?;
    let geom = curve.surface.geometry()?;
    geom.cells
        .iter()
        .map(|c| {
            let q = &c.point;
            let top = top_cell(sl, tc, q)?;
            let (frame, h1) = top_frame(&top, &c.normal, &c.tangents.column(0).into_owned());
            let rm = ambient_in_frame(&sl.ambient, &top.point, &frame)?;
            let (t2, _) = riemann_coordinate(&tc.chart, q, Route::Analytic)?;
            let gamma = tc.chart.metric(q);
            let gauss = t2.get(0, 1, 0, 1) / gamma.determinant();
            let lv = tc.log_v.jet(q[0], q[1]);
            let d = DVector::from_vec(vec![lv[1], lv[2]]);
            let inv = gamma.try_inverse().ok_or_else(|| CurvError::SingularMetric { point: q.clone() })?;
            let grad = (d.transpose() * inv * &d)[(0, 0)];
            Ok(BottomCell {
                point: top.point.clone(),
                frame,
                ric: vec![ric_first(&rm), gauss],
                rm,
                h: vec![h1, DMatrix::from_element(1, 1, c.mean_curvature)],
                gradient: vec![grad],
                area: c.area,
                rho_prev: lv[0].exp(),
            })
        })
        .collect()
}

/// Bottom-slice cells of a complete slicing.
pub fn bottom_cells(sl: &Slicing) -> Result<Vec<BottomCell>> {
    sl.require_complete()?;
    match sl.m {
        1 => order_one_cells(sl),
        2 => order_two_cells(sl),
        m => Err(CurvError::BadOrder { m, n: sl.ambient.dim(), max: 2 }),
    }
}

/// Per-cell values of the main-inequality terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermCells {
    /// Quadrature weight `ρ_{m−1}^{−1} dμ`.
    pub weight: Vec<f64>,
    pub r: Vec<f64>,
    pub e: Vec<f64>,
    pub g: Vec<f64>,
    pub cm: Vec<f64>,
    /// `𝒱_k` per level (empty for `m = 1`).
    pub v: Vec<Vec<f64>>,
}

/// Integrals against `ρ_{m−1}^{−1} dμ`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermIntegrals {
    pub lambda: f64,
    pub r: f64,
    pub e: f64,
    pub g: f64,
    pub cm: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub n: usize,
    pub m: usize,
    /// `Λ = Σ_{k<m} λ_k`.
    pub lambda: f64,
    /// `λ_m`, which enters only through the stability inequality.
    pub lambda_bottom: f64,
    pub cells: TermCells,
    pub integrated: TermIntegrals,
    /// `∫ ρ_{m−1}^{−1} (Λ + 𝓡 + 𝓔 + 𝓖) dμ`.
    pub main_integral: f64,
    /// `−Q(ρ_{m−1}^{−1})` from the second-variation quadrature on `Σ_m`.
    pub stability_integral: f64,
    /// `|main_integral − stability_integral|`.
    pub cross_check: f64,
    /// Min over cells of `𝓡 + 𝓔 + 𝓖 − C_m`.
    pub min_pointwise_slack: f64,
}

fn terms_of(cell: &BottomCell, m: usize) -> (f64, f64, f64, f64) {
    let r: f64 = cell.ric.iter().sum();
    let e = cell.h.iter().map(|h| h.norm_squared()).sum::<f64>() - (2..=m).map(|k| cell.mean_curvature(k).powi(2)).sum::<f64>();
    let g: f64 = cell.gradient.iter().sum();
    (r, e, g, cm_axes(&cell.rm, m))
}

pub fn main_inequality(sl: &Slicing) -> Result<TermBreakdown> {
    let cells = bottom_cells(sl)?;
    let (n, m) = (sl.ambient.dim(), sl.m);
    let lambda: f64 = sl.levels[..m - 1].iter().map(|l| l.lambda).sum();
    let mut tc = TermCells { v: vec![Vec::with_capacity(cells.len()); if m >= 2 { m } else { 0 }], ..Default::default() };
    for cell in &cells {
        let (r, e, g, cm) = terms_of(cell, m);
        tc.weight.push(cell.area / cell.rho_prev);
        tc.r.push(r);
        tc.e.push(e);
        tc.g.push(g);
        tc.cm.push(cm);
        if m >= 2 {
            let vk = vk_terms_unchecked(&cell.h, n, m, coefficient_f64(n, m))?;
            for (k, v) in vk.values.into_iter().enumerate() {
                tc.v[k].push(v);
            }
        }
    }
    let integrate = |f: &[f64]| tc.weight.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
    let total: f64 = tc.weight.iter().sum();
    let integrated = TermIntegrals {
        lambda: lambda * total,
        r: integrate(&tc.r),
        e: integrate(&tc.e),
        g: integrate(&tc.g),
        cm: integrate(&tc.cm),
        v: tc.v.iter().map(|v| integrate(v)).collect(),
    };
    let main_integral = integrated.lambda + integrated.r + integrated.e + integrated.g;
    let bottom = sl.level(m)?;
    let geom = bottom.surface.geometry()?;
    let psi: Vec<f64> = geom.weights(&bottom.weight)?.iter().map(|r| 1.0 / r).collect();
    let stability_integral = -quadratic_form_quadrature(&bottom.surface, &geom, &bottom.weight, &psi)?;
    let min_pointwise_slack = (0..cells.len()).map(|i| tc.r[i] + tc.e[i] + tc.g[i] - tc.cm[i]).fold(f64::INFINITY, f64::min);
    Ok(TermBreakdown {
        n,
        m,
        lambda,
        lambda_bottom: bottom.lambda,
        cells: tc,
        integrated,
        main_integral,
        stability_integral,
        cross_check: (main_integral - stability_integral).abs(),
        min_pointwise_slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// First `k ≤ 100` where `1 − α_{k−1} = 1/(4α_k)` fails, if any.
    pub alpha_failure: Option<i64>,
}

/// `𝓖` against `Σ_{k=2}^m (1/2 + 1/(2(k−1))) H_{Σ_k}²` per cell.
pub fn gradient_estimate_check(sl: &Slicing) -> Result<GradientCheck> {
    let cells = bottom_cells(sl)?;
    let m = sl.m;
    let lhs: Vec<f64> = cells.iter().map(|c| c.gradient.iter().sum()).collect();
    let rhs: Vec<f64> = cells.iter().map(|c| (2..=m).map(|k| (0.5 + 0.5 / (k - 1) as f64) * c.mean_curvature(k).powi(2)).sum()).collect();
    let slack: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GradientCheck { lhs, rhs, slack, min_slack, alpha_failure: alpha_identity_failure(100) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricGauss {
    pub r: Vec<f64>,
    pub cm: Vec<f64>,
    pub extrinsic: Vec<f64>,
    pub residual: Vec<f64>,
    pub sup: f64,
}

/// `𝓡 − C_m − Σ_k Σ_p Σ_q (h_k(e_p,e_p) h_k(e_q,e_q) − h_k(e_p,e_q)²)` on the
/// slicing, with `𝓡` from the intrinsic curvature of each slice.
pub fn iterated_gauss_check(sl: &Slicing) -> Result<GeometricGauss> {
    let cells = bottom_cells(sl)?;
    let m = sl.m;
    let (mut r, mut cm, mut extrinsic, mut residual) = (vec![], vec![], vec![], vec![]);
    for c in &cells {
        let (rr, _, _, cc) = terms_of(c, m);
        let ex: f64 = (1..m).map(|k| gauss_pairs(&c.h[k - 1], 0, m - k)).sum();
        residual.push(rr - cc - ex);
        r.push(rr);
        cm.push(cc);
        extrinsic.push(ex);
    }
    let sup = sup_norm(&residual);
    Ok(GeometricGauss { r, cm, extrinsic, residual, sup })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullSlicingForm {
    /// `𝓡 + 𝓔 + 𝓖`.
    pub lhs: Vec<f64>,
    /// `½ scal + ½ Σ_k |h_k|² + Σ_{k≥2} H_k² / (2(k−1))`.
    pub rhs: Vec<f64>,
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// Sup over cells of `|2 C_{n−1} − scal|`.
    pub scalar_residual: f64,
}

pub fn full_slicing_form(sl: &Slicing) -> Result<FullSlicingForm> {
    let n = sl.ambient.dim();
    if sl.m + 1 != n {
        return Err(CurvError::WrongOrder { m: sl.m, n });
    }
    let cells = bottom_cells(sl)?;
    let m = sl.m;
    let (mut lhs, mut rhs, mut scalar_residual) = (vec![], vec![], 0.0f64);
    for c in &cells {
        let (r, e, g, cm) = terms_of(c, m);
        let scal = c.rm.scalar(&DMatrix::identity(n, n));
        scalar_residual = scalar_residual.max((2.0 * cm - scal).abs());
        lhs.push(r + e + g);
        rhs.push(
            0.5 * scal
                + 0.5 * c.h.iter().map(|h| h.norm_squared()).sum::<f64>()
                + (2..=m).map(|k| c.mean_curvature(k).powi(2) / (2.0 * (k - 1) as f64)).sum::<f64>(),
        );
    }
    let slack: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FullSlicingForm { lhs, rhs, slack, min_slack, scalar_residual })
}

/// Per-level invariants and identity residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInvariants {
    pub k: usize,
    pub criticality: f64,
    pub lambda: f64,
    pub positive: bool,
    /// `max |ρ_k − ρ_{k−1} v_k|`.
    pub product_defect: f64,
    pub eigen_residual: f64,
    pub first_identity: f64,
    pub second_identity: Option<f64>,
    /// Sup-norm distance between the second-identity and eigen-equation
    /// residuals.
    pub rearrangement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingInvariants {
    pub levels: Vec<LevelInvariants>,
    pub valid: bool,
}

pub fn slicing_invariants(sl: &Slicing) -> Result<SlicingInvariants> {
    sl.require_complete()?;
    let mut levels = Vec::with_capacity(sl.m);
    for l in &sl.levels {
        let k = l.k;
        let prev: Vec<f64> = match k {
            1 => vec![1.0; l.v.len()],
            _ => l.surface.geometry()?.weights(&l.weight)?,
        };
        let product_defect = (0..l.v.len()).map(|i| (l.rho[i] - prev[i] * l.v[i]).abs()).fold(0.0, f64::max);
        let (second_identity, rearrangement) = if k < sl.m {
            let s = second_slicing_identity_residual(sl, k)?;
            let e = eigen_equation_residual(sl, k)?;
            let d = s.residual.iter().zip(&e.residual).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (Some(s.sup), Some(d))
        } else {
            (None, None)
        };
        levels.push(LevelInvariants {
            k,
            criticality: l.criticality,
            lambda: l.lambda,
            positive: l.v.iter().all(|v| *v > 0.0),
            product_defect,
            eigen_residual: l.eigen_residual,
            first_identity: first_slicing_identity_residual(sl, k)?.sup,
            second_identity,
            rearrangement,
        });
    }
    let valid = sl.is_valid() && levels.iter().all(|l| l.criticality < CRITICAL_TOL && l.positive);
    Ok(SlicingInvariants { levels, valid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub chart: String,
    pub n: usize,
    pub m: usize,
    pub certificate: Verdict,
    pub certificate_min: f64,
    pub slicing_valid: bool,
    /// Min of `C_m(ν_1, …, ν_m)` over the bottom-slice cells.
    pub min_cm_on_slicing: Option<f64>,
    pub min_pointwise_slack: Option<f64>,
    pub main_integral: Option<f64>,
    /// A positive certificate next to a valid stable slicing.
    pub contradiction: bool,
    /// No contradiction, and `C_m` is not positive along a valid slicing.
    pub consistent: bool,
}

/// Runs the positivity certificate for `C_m` on `chart` and, if a slicing is
/// supplied, evaluates it; flags a positive certificate co-occurring with a
/// valid stable slicing. Refused for pairs failing the dimension condition.
pub fn theorem_gate(
    chart: &MetricChart,
    n: usize,
    m: usize,
    slicing: Option<&Slicing>,
    sampler: &Sampler,
    opts: &CertifyOptions,
    tol: f64,
) -> Result<GateReport> {
    require_feasible(n, m)?;
    if chart.dim() != n {
        return Err(CurvError::BadShape(format!("chart has dimension {}, expected {n}", chart.dim())));
    }
    if let Some(sl) = slicing {
        if sl.m != m || sl.ambient.dim() != n {
            return Err(CurvError::BadOrder { m: sl.m, n: sl.ambient.dim(), max: n - 1 });
        }
    }
    let cert: PositivityCertificate = certify(chart, m, sampler, opts)?;
    let certificate_min = cert.minima().into_iter().fold(f64::INFINITY, f64::min);
    let (mut slicing_valid, mut min_cm, mut min_slack, mut main) = (false, None, None, None);
    if let Some(sl) = slicing.filter(|s| s.is_complete()) {
        slicing_valid = slicing_invariants(sl)?.valid;
        let b = main_inequality(sl)?;
        min_cm = Some(b.cells.cm.iter().copied().fold(f64::INFINITY, f64::min));
        min_slack = Some(b.min_pointwise_slack);
        main = Some(b.main_integral);
    }
    let contradiction = cert.verdict.is_positive() && slicing_valid;
    let consistent = !contradiction && (!slicing_valid || min_cm.is_some_and(|c| c <= tol));
    Ok(GateReport {
        chart: chart.label().to_string(),
        n,
        m,
        certificate: cert.verdict,
        certificate_min,
        slicing_valid,
        min_cm_on_slicing: min_cm,
        min_pointwise_slack: min_slack,
        main_integral: main,
        contradiction,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_chart, ModelSpec};
    use crate::slicing::build::{build_slicing, demo_perturbed_torus, SlicingOptions};

    fn opts(r: usize) -> SlicingOptions {
        SlicingOptions { resolution: r, ..Default::default() }
    }

    #[test]
    fn flat_slicing_terms_vanish() {
        let chart = build_chart(&ModelSpec::torus(3)).unwrap();
        for m in [1, 2] {
            let sl = build_slicing(&chart, m, &opts(16)).unwrap();
            let b = main_inequality(&sl).unwrap();
            assert!(b.main_integral.abs() < 1e-12 && b.stability_integral.abs() < 1e-12);
            assert!(b.cells.cm.iter().chain(&b.cells.e).chain(&b.cells.g).all(|x| x.abs() < 1e-12));
            assert!(iterated_gauss_check(&sl).unwrap().sup < 1e-12);
            assert!(gradient_estimate_check(&sl).unwrap().min_slack.abs() < 1e-12);
        }
        let sl = build_slicing(&chart, 2, &opts(16)).unwrap();
        let f = full_slicing_form(&sl).unwrap();
        assert!(f.min_slack.abs() < 1e-12 && f.scalar_residual < 1e-12);
        assert!(matches!(full_slicing_form(&build_slicing(&chart, 1, &opts(16)).unwrap()), Err(CurvError::WrongOrder { .. })));
    }

    #[test]
    fn perturbed_slicing_checks() {
        let sl = build_slicing(&build_chart(&demo_perturbed_torus(0.05)).unwrap(), 2, &opts(32)).unwrap();
        let b = main_inequality(&sl).unwrap();
        assert!(b.main_integral < 0.0 && b.lambda > 0.0);
        assert!(b.cross_check < 1e-3 * b.main_integral.abs(), "{} vs {}", b.main_integral, b.stability_integral);
        assert!(b.min_pointwise_slack > -1e-6);
        assert!(gradient_estimate_check(&sl).unwrap().min_slack > -1e-6);
        assert!(iterated_gauss_check(&sl).unwrap().sup < 1e-3);
        let f = full_slicing_form(&sl).unwrap();
        assert!(f.min_slack > -5e-4 && f.scalar_residual < 1e-10);
        let inv = slicing_invariants(&sl).unwrap();
        assert!(inv.valid && inv.levels.iter().all(|l| l.product_defect == 0.0));
        assert!(inv.levels[0].rearrangement.unwrap() < 1e-10);
    }

    #[test]
    fn gate_refuses_infeasible_and_accepts_flat() {
        let s = Sampler::random(4, 1);
        let o = CertifyOptions::default();
        let flat8 = build_chart(&ModelSpec::torus(8)).unwrap();
        assert!(matches!(theorem_gate(&flat8, 8, 3, None, &s, &o, 1e-6), Err(CurvError::InfeasiblePair { .. })));
        let chart = build_chart(&ModelSpec::torus(3)).unwrap();
        let sl = build_slicing(&chart, 2, &opts(16)).unwrap();
        let r = theorem_gate(&chart, 3, 2, Some(&sl), &s, &o, 1e-6).unwrap();
        assert!(r.slicing_valid && !r.contradiction && r.consistent);
    }
}
