//! Levi-Civita connection, Riemann tensor, and the intermediate curvatures
//! `C_m` and `s_{m,n}` computed from a [`MetricChart`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CurvError, Result};
use crate::geometry::{complete_frame, Basis, CurvatureTensor, MetricChart, MetricJet, OrthonormalFrame};

/// How curvature is obtained from a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Closed-form curvature oracle, falling back to `Analytic`.
    Oracle,
    /// Analytic metric derivatives when available, finite differences otherwise.
    Analytic,
    /// Central differences of the metric regardless of available oracles.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    AnalyticOracle,
    FiniteDifference,
}

/// Christoffel symbols `Γ^k_ij` stored as `gamma[(k * n + i) * n + j]`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub g_inv: DMatrix<f64>,
}

impl Christoffel {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.dim + i) * self.dim + j]
    }

    /// `Γ^k_ij u^i v^j` for every `k`.
    pub fn contract(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|k| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += self.get(k, i, j) * u[i] * v[j];
                    }
                }
                acc
            })
            .collect()
    }
}

fn invert_spd(g: &DMatrix<f64>, point: &[f64]) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(g.clone()).map(|c| c.inverse()).ok_or_else(|| CurvError::SingularMetric { point: point.to_vec() })
}

/// `Γ^k_ij = ½ g^{kl} (∂_i g_jl + ∂_j g_il - ∂_l g_ij)`.
pub fn christoffel_from_jet(jet: &MetricJet, point: &[f64]) -> Result<Christoffel> {
    let n = jet.dim();
    let g_inv = invert_spd(&jet.g, point)?;
    let mut lowered = vec![0.0; n * n * n]; // [l][i][j]
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                lowered[(l * n + i) * n + j] = 0.5 * (jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)]);
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += g_inv[(k, l)] * lowered[(l * n + i) * n + j];
                }
                gamma[(k * n + i) * n + j] = acc;
            }
        }
    }
    Ok(Christoffel { dim: n, gamma, g_inv })
}

pub fn christoffel(chart: &MetricChart, point: &[f64]) -> Result<Christoffel> {
    chart.metric_checked(point)?;
    christoffel_from_jet(&chart.jet(point), point)
}

/// Coordinate-basis Riemann tensor from a metric jet.
///
/// With `R(∂_i,∂_j)∂_k = R^l_ijk ∂_l` and
/// `R^l_ijk = ∂_i Γ^l_jk - ∂_j Γ^l_ik + Γ^l_ip Γ^p_jk - Γ^l_jp Γ^p_ik`,
/// the stored components are `Rm_ijkl = -g_lm R^m_ijk`.
pub fn riemann_from_jet(jet: &MetricJet, point: &[f64]) -> Result<CurvatureTensor> {
    let n = jet.dim();
    let chr = christoffel_from_jet(jet, point)?;
    let g_inv = &chr.g_inv;

    // ∂_m g^{kl} = -g^{ka} ∂_m g_ab g^{bl}
    let dginv: Vec<DMatrix<f64>> = (0..n).map(|m| -(g_inv * &jet.dg[m] * g_inv)).collect();
    // S_ijl = ½(∂_i g_jl + ∂_j g_il - ∂_l g_ij) and its derivatives.
    let s = |i: usize, j: usize, l: usize| 0.5 * (jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)]);
    let ds = |m: usize, i: usize, j: usize, l: usize| 0.5 * (jet.second(m, i)[(j, l)] + jet.second(m, j)[(i, l)] - jet.second(m, l)[(i, j)]);
    // dgamma[((m * n + k) * n + i) * n + j] = ∂_m Γ^k_ij
    let mut dgamma = vec![0.0; n * n * n * n];
    for m in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += dginv[m][(k, l)] * s(i, j, l) + g_inv[(k, l)] * ds(m, i, j, l);
                    }
                    dgamma[((m * n + k) * n + i) * n + j] = acc;
                    dgamma[((m * n + k) * n + j) * n + i] = acc;
                }
            }
        }
    }
    let dg = |m: usize, k: usize, i: usize, j: usize| dgamma[((m * n + k) * n + i) * n + j];

    let mut up = vec![0.0; n * n * n * n]; // R^l_ijk at [((l*n+i)*n+j)*n+k]
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = dg(i, l, j, k) - dg(j, l, i, k);
                    for p in 0..n {
                        v += chr.get(l, i, p) * chr.get(p, j, k) - chr.get(l, j, p) * chr.get(p, i, k);
                    }
                    up[((l * n + i) * n + j) * n + k] = v;
                }
            }
        }
    }
    let mut dense = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += jet.g[(l, m)] * up[((m * n + i) * n + j) * n + k];
                    }
                    dense[((i * n + j) * n + k) * n + l] = -acc;
                }
            }
        }
    }
    Ok(CurvatureTensor::from_dense(n, Basis::Coordinate, &dense))
}

/// Coordinate-basis Riemann tensor at `point` along the requested route.
pub fn riemann_coordinate(chart: &MetricChart, point: &[f64], route: Route) -> Result<(CurvatureTensor, Source)> {
    chart.metric_checked(point)?;
    match route {
        Route::Oracle => match chart.curvature_oracle() {
            Some(o) => Ok((o(point), Source::AnalyticOracle)),
            None => riemann_coordinate(chart, point, Route::Analytic),
        },
        Route::Analytic => {
            let src = if chart.has_jet() { Source::AnalyticOracle } else { Source::FiniteDifference };
            Ok((riemann_from_jet(&chart.jet(point), point)?, src))
        }
        Route::FiniteDifference => Ok((riemann_from_jet(&chart.fd_jet(point), point)?, Source::FiniteDifference)),
    }
}

/// Evaluation basis for [`riemann_tensor`].
#[derive(Debug, Clone)]
pub enum EvalBasis<'a> {
    Coordinate,
    /// Components against a completed orthonormal frame.
    Frame(&'a OrthonormalFrame),
}

pub fn riemann_tensor(chart: &MetricChart, point: &[f64], basis: EvalBasis<'_>, route: Route) -> Result<CurvatureTensor> {
    let (t, _) = riemann_coordinate(chart, point, route)?;
    match basis {
        EvalBasis::Coordinate => Ok(t),
        EvalBasis::Frame(f) => {
            let full = if f.is_completed() { f.clone() } else { complete_frame(f)? };
            Ok(t.change_basis(&full.basis_matrix(), Basis::Orthonormal))
        }
    }
}

/// A deterministic `g`-orthonormal basis at a point (Gram-Schmidt of the
/// coordinate axes) as matrix columns.
pub fn orthonormal_basis(g: &DMatrix<f64>, point: &[f64]) -> Result<DMatrix<f64>> {
    let empty = OrthonormalFrame { point: point.to_vec(), metric: g.clone(), vectors: vec![], completion: None };
    Ok(complete_frame(&empty)?.basis_matrix())
}

/// Riemann tensor in a deterministic orthonormal basis, with that basis.
pub fn riemann_orthonormal(chart: &MetricChart, point: &[f64], route: Route) -> Result<(CurvatureTensor, DMatrix<f64>)> {
    let (t, _) = riemann_coordinate(chart, point, route)?;
    let g = chart.metric(point);
    let e = orthonormal_basis(&g, point)?;
    Ok((t.change_basis(&e, Basis::Orthonormal), e))
}

fn check_order(m: usize, n: usize) -> Result<()> {
    if m < 1 || m + 1 > n {
        return Err(CurvError::BadOrder { m, n, max: n.saturating_sub(1) });
    }
    Ok(())
}

fn frame_vectors(tensor: &CurvatureTensor, frame: &OrthonormalFrame) -> Result<Vec<Vec<f64>>> {
    if frame.dim() != tensor.dim() {
        return Err(CurvError::BadShape(format!("frame dim {} vs tensor dim {}", frame.dim(), tensor.dim())));
    }
    let full = if frame.is_completed() { frame.clone() } else { complete_frame(frame)? };
    let b = full.basis_matrix();
    Ok((0..b.ncols()).map(|i| b.column(i).iter().copied().collect()).collect())
}

/// `C_m(e_1..e_m) = Σ_{p ≤ m} Σ_{q > p} Rm(e_p, e_q, e_p, e_q)`.
pub fn intermediate_curvature(tensor: &CurvatureTensor, frame: &OrthonormalFrame, m: usize) -> Result<f64> {
    check_order(m, tensor.dim())?;
    let e = frame_vectors(tensor, frame)?;
    let n = e.len();
    let mut acc = 0.0;
    for p in 0..m {
        for q in (p + 1)..n {
            acc += tensor.sectional_numerator(&e[p], &e[q]);
        }
    }
    Ok(acc)
}

/// `s_{m,n}(e_1..e_m) = Σ_{p,q > m} Rm(e_p, e_q, e_p, e_q)` (ordered pairs).
pub fn intermediate_scalar_curvature(tensor: &CurvatureTensor, frame: &OrthonormalFrame, m: usize) -> Result<f64> {
    check_order(m, tensor.dim())?;
    let e = frame_vectors(tensor, frame)?;
    let n = e.len();
    let mut acc = 0.0;
    for p in m..n {
        for q in (p + 1)..n {
            acc += 2.0 * tensor.sectional_numerator(&e[p], &e[q]);
        }
    }
    Ok(acc)
}

/// `C_m` of the first `m` axes of an orthonormal-basis tensor.
pub fn cm_axes(tensor: &CurvatureTensor, m: usize) -> f64 {
    let n = tensor.dim();
    let mut acc = 0.0;
    for p in 0..m.min(n) {
        for q in (p + 1)..n {
            acc += tensor.get(p, q, p, q);
        }
    }
    acc
}

/// Number of `m`-subsets of an orthonormal basis whose `C_m` contains a given
/// plane, halved: `Σ_S C_m(e_S) = factor · scal`.
pub fn subset_sum_factor(n: usize, m: usize) -> f64 {
    let binom = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    (binom(n, m) - binom(n.saturating_sub(2), m)) / 2.0
}

/// Ricci and scalar curvature at a point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub point: Vec<f64>,
    pub tensor: CurvatureTensor,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
    pub source: Source,
}

/// Curvature in a deterministic orthonormal basis at `point`.
pub fn curvature_report(chart: &MetricChart, point: &[f64], route: Route) -> Result<CurvatureReport> {
    let (t, source) = riemann_coordinate(chart, point, route)?;
    let g = chart.metric(point);
    let e = orthonormal_basis(&g, point)?;
    let tensor = t.change_basis(&e, Basis::Orthonormal);
    let ricci = tensor.ricci_orthonormal();
    let scalar = ricci.trace();
    Ok(CurvatureReport { point: point.to_vec(), tensor, ricci, scalar, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{haar_random_frame, MetricChart};
    use std::sync::Arc;

    fn polar_s2() -> MetricChart {
        MetricChart::new(2, Arc::new(|x: &[f64]| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, x[0].sin().powi(2)])))
    }

    #[test]
    fn flat_christoffels_vanish() {
        let c = christoffel(&MetricChart::euclidean(3), &[0.3, 0.1, 0.9]).unwrap();
        assert!(c.gamma.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sphere_christoffel_closed_form() {
        let th: f64 = 1.1;
        let c = christoffel(&polar_s2(), &[th, 0.4]).unwrap();
        assert!((c.get(0, 1, 1) + th.sin() * th.cos()).abs() < 1e-9);
        assert!((c.get(1, 0, 1) - th.cos() / th.sin()).abs() < 1e-9);
        assert!((c.get(1, 1, 0) - c.get(1, 0, 1)).abs() < 1e-15);
    }

    #[test]
    fn conformal_christoffel() {
        // g = e^{2 x0} δ  =>  Γ^0_00 = ∂_0 u = 1
        let chart = MetricChart::new(2, Arc::new(|x: &[f64]| DMatrix::identity(2, 2) * (2.0 * x[0]).exp()));
        let c = christoffel(&chart, &[0.2, 0.7]).unwrap();
        assert!((c.get(0, 0, 0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn metric_compatibility() {
        let chart = polar_s2();
        let x = [0.9, 0.2];
        let jet = chart.fd_jet(&x);
        let c = christoffel_from_jet(&jet, &x).unwrap();
        let g = &jet.g;
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let low = |a: usize, b: usize, cc: usize| (0..2).map(|l| g[(a, l)] * c.get(l, b, cc)).sum::<f64>();
                    let rhs = low(i, k, j) + low(j, k, i);
                    assert!((jet.dg[k][(i, j)] - rhs).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn sphere_sectional_sign_fixture() {
        let chart = polar_s2();
        let x = [1.0, 0.0];
        let f = haar_random_frame(1, &chart, &x, 2).unwrap();
        let t = riemann_tensor(&chart, &x, EvalBasis::Frame(&f), Route::FiniteDifference).unwrap();
        assert!((t.get(0, 1, 0, 1) - 1.0).abs() < 1e-6, "{}", t.get(0, 1, 0, 1));
    }

    #[test]
    fn bad_orders_rejected() {
        let t = CurvatureTensor::zeros(3, Basis::Orthonormal);
        let f = OrthonormalFrame { point: vec![0.0; 3], metric: DMatrix::identity(3, 3), vectors: vec![], completion: None };
        assert!(matches!(intermediate_curvature(&t, &f, 0), Err(CurvError::BadOrder { .. })));
        assert!(matches!(intermediate_curvature(&t, &f, 3), Err(CurvError::BadOrder { .. })));
    }

    #[test]
    fn subset_factor_matches_enumeration() {
        // unit S^5: every C_m equals m n - m(m+1)/2, scal = n(n-1)
        for n in 3..7usize {
            for m in 1..n {
                let per = (m * n) as f64 - (m * (m + 1)) as f64 / 2.0;
                let count = (0..n).fold(1.0, |a, i| if i < m { a * (n - i) as f64 / (i + 1) as f64 } else { a });
                let lhs = per * count;
                assert!((lhs - subset_sum_factor(n, m) * (n * (n - 1)) as f64).abs() < 1e-9, "n={n} m={m}");
            }
        }
    }
}
