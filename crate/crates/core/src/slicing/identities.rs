//! Per-cell residuals of the slicing identities on discrete hypersurfaces.
//! Derivatives along a slice use the fourth-order grid stencils; ambient
//! derivatives of the weights come from their jets.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::build::Slicing;
use crate::curvature::{riemann_coordinate, riemann_from_jet, Route};
use crate::error::{CurvError, Result};
use crate::geometry::MetricJet;
use crate::variation::{sup_norm, DiscreteHypersurface, SurfaceGeometry, WeightField};

/// Per-cell sides and residual of an identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
    pub sup: f64,
}

impl IdentityResidual {
    fn new(lhs: Vec<f64>, rhs: Vec<f64>) -> Self {
        let residual: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let sup = sup_norm(&residual);
        IdentityResidual { lhs, rhs, residual, sup }
    }
}

/// Base-coordinate gradient of a grid function.
fn grid_gradient(hs: &DiscreteHypersurface, f: &[f64]) -> Vec<Vec<f64>> {
    (0..hs.grid.dim()).map(|a| hs.grid.d1(f, a)).collect()
}

/// `Δ_Σ f = (1/√γ) ∂_a(√γ γ^{ab} ∂_b f)`.
pub fn intrinsic_laplacian(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, f: &[f64]) -> Vec<f64> {
    let k = hs.grid.dim();
    let df = grid_gradient(hs, f);
    let mut out = vec![0.0; f.len()];
    for a in 0..k {
        let flux: Vec<f64> =
            geom.cells.iter().enumerate().map(|(i, c)| c.sqrt_det * (0..k).map(|b| c.induced_inv[(a, b)] * df[b][i]).sum::<f64>()).collect();
        for (o, d) in out.iter_mut().zip(hs.grid.d1(&flux, a)) {
            *o += d;
        }
    }
    out.iter().zip(&geom.cells).map(|(o, c)| o / c.sqrt_det).collect()
}

/// `⟨D_Σ f, D_Σ g⟩` at each cell.
pub fn intrinsic_inner(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, f: &[f64], g: &[f64]) -> Vec<f64> {
    let (df, dg) = (grid_gradient(hs, f), grid_gradient(hs, g));
    let k = hs.grid.dim();
    geom.cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += c.induced_inv[(a, b)] * df[a][i] * dg[b][i];
                }
            }
            s
        })
        .collect()
}

/// `Δ_N f = g^{ij} (∂_ij f − Γ^k_ij ∂_k f)` from a jet of `f`.
fn ambient_laplacian(c: &crate::variation::CellGeometry, grad: &[f64], hess: &DMatrix<f64>) -> f64 {
    let d = grad.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let gam: f64 = (0..d).map(|k| c.christoffel.get(k, i, j) * grad[k]).sum();
            s += c.christoffel.g_inv[(i, j)] * (hess[(i, j)] - gam);
        }
    }
    s
}

/// `Δ_Σ log ρ + (D² log ρ)(ν,ν)` against `Δ_N log ρ + H²` on a critical
/// hypersurface of the `ρ`-weighted area.
pub fn first_identity_cells(hs: &DiscreteHypersurface, rho: &WeightField) -> Result<IdentityResidual> {
    let geom = hs.geometry()?;
    let jets = geom.cells.par_iter().map(|c| rho.log_jet(&c.point)).collect::<Result<Vec<_>>>()?;
    let f: Vec<f64> = jets.iter().map(|j| j.value).collect();
    let lap = intrinsic_laplacian(hs, &geom, &f);
    let lhs = geom.cells.iter().zip(&jets).zip(&lap).map(|((c, j), l)| l + c.hessian_nn(&j.grad, &j.hess)).collect();
    let rhs = geom.cells.iter().zip(&jets).map(|(c, j)| ambient_laplacian(c, &j.grad, &j.hess) + c.mean_curvature.powi(2)).collect();
    Ok(IdentityResidual::new(lhs, rhs))
}

pub fn first_slicing_identity_residual(sl: &Slicing, k: usize) -> Result<IdentityResidual> {
    let l = sl.level(k)?;
    first_identity_cells(&l.surface, &l.weight)
}

/// Shared fields of level `k`, all at its cells.
struct LevelFields {
    geom: SurfaceGeometry,
    prev: Vec<f64>,
    w: Vec<f64>,
    hess_nn: Vec<f64>,
    extrinsic: Vec<f64>,
    lambda: f64,
}

fn level_fields(sl: &Slicing, k: usize) -> Result<LevelFields> {
    let l = sl.level(k)?;
    let geom = l.surface.geometry()?;
    let jets = geom.cells.par_iter().map(|c| l.weight.log_jet(&c.point)).collect::<Result<Vec<_>>>()?;
    let ric = geom.ricci_nn(&l.surface.ambient)?;
    let prev = jets.iter().map(|j| j.value).collect();
    let hess_nn = geom.cells.iter().zip(&jets).map(|(c, j)| c.hessian_nn(&j.grad, &j.hess)).collect();
    let extrinsic = geom.cells.iter().zip(&ric).map(|(c, r)| c.h_norm2() + r).collect();
    let w = l.v.iter().map(|v| v.ln()).collect();
    Ok(LevelFields { geom, prev, w, hess_nn, extrinsic, lambda: l.lambda })
}

/// `Δ_{Σ_k} log ρ_k` against `Δ_{Σ_k} log ρ_{k−1} + (D² log ρ_{k−1})(ν_k,ν_k)
/// − (λ_k + |h|² + Ric(ν_k,ν_k) + ⟨D log ρ_k, D w_k⟩)`.
pub fn second_slicing_identity_residual(sl: &Slicing, k: usize) -> Result<IdentityResidual> {
    let l = sl.level(k)?;
    let f = level_fields(sl, k)?;
    let hs = &l.surface;
    let logk: Vec<f64> = f.prev.iter().zip(&f.w).map(|(a, b)| a + b).collect();
    let lhs = intrinsic_laplacian(hs, &f.geom, &logk);
    let lap_prev = intrinsic_laplacian(hs, &f.geom, &f.prev);
    let cross = intrinsic_inner(hs, &f.geom, &logk, &f.w);
    let rhs = (0..lhs.len()).map(|i| lap_prev[i] + f.hess_nn[i] - (f.lambda + f.extrinsic[i] + cross[i])).collect();
    Ok(IdentityResidual::new(lhs, rhs))
}

/// The eigen equation in logarithmic form:
/// `λ_k = −Δ w_k − ⟨D log ρ_{k−1}, D w_k⟩ − (|h|² + Ric(ν,ν)) + (D² log ρ_{k−1})(ν,ν) − |D w_k|²`.
pub fn eigen_equation_residual(sl: &Slicing, k: usize) -> Result<IdentityResidual> {
    let l = sl.level(k)?;
    let f = level_fields(sl, k)?;
    let hs = &l.surface;
    let lap = intrinsic_laplacian(hs, &f.geom, &f.w);
    let drift = intrinsic_inner(hs, &f.geom, &f.prev, &f.w);
    let dw2 = intrinsic_inner(hs, &f.geom, &f.w, &f.w);
    let lhs = vec![f.lambda; lap.len()];
    let rhs = (0..lap.len()).map(|i| -lap[i] - drift[i] - f.extrinsic[i] + f.hess_nn[i] - dw2[i]).collect();
    Ok(IdentityResidual::new(lhs, rhs))
}

/// Gauss equation on a 2-dimensional graph in a 3-dimensional ambient:
/// intrinsic curvature of the induced metric (its derivatives by grid
/// stencils) against `K_N(T_1, T_2) + det h / det γ`.
pub fn gauss_equation_residual(hs: &DiscreteHypersurface) -> Result<IdentityResidual> {
    if hs.grid.dim() != 2 || hs.ambient.dim() != 3 {
        return Err(CurvError::BadShape("Gauss-equation check needs a surface in a 3-dimensional ambient".into()));
    }
    let geom = hs.geometry()?;
    let comp = |i: usize, j: usize| geom.cells.iter().map(|c| c.induced[(i, j)]).collect::<Vec<_>>();
    let comps = [comp(0, 0), comp(0, 1), comp(1, 1)];
    let d1: Vec<[Vec<f64>; 2]> = comps.iter().map(|f| [hs.grid.d1(f, 0), hs.grid.d1(f, 1)]).collect();
    let d2: Vec<[Vec<f64>; 3]> = comps.iter().zip(&d1).map(|(f, d)| [hs.grid.d2(f, 0), hs.grid.d1(&d[0], 1), hs.grid.d2(f, 1)]).collect();
    let sym = |v: [f64; 3]| DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]]);
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = geom
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let at1 = |a: usize| sym([d1[0][a][i], d1[1][a][i], d1[2][a][i]]);
            let at2 = |s: usize| sym([d2[0][s][i], d2[1][s][i], d2[2][s][i]]);
            let jet = MetricJet { g: c.induced.clone(), dg: vec![at1(0), at1(1)], ddg: vec![at2(0), at2(1), at2(1), at2(2)] };
            let base = hs.grid.coords(i);
            let det = c.induced.determinant();
            let intrinsic = riemann_from_jet(&jet, &base)?.get(0, 1, 0, 1) / det;
            let (t, _) = riemann_coordinate(&hs.ambient, &c.point, Route::Oracle)?;
            let (t1, t2): (Vec<f64>, Vec<f64>) = (c.tangents.column(0).iter().copied().collect(), c.tangents.column(1).iter().copied().collect());
            let ambient = t.eval(&t1, &t2, &t1, &t2) / det;
            Ok((intrinsic, ambient + c.second_form.determinant() / det))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?
        .into_iter()
        .unzip();
    Ok(IdentityResidual::new(lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_chart, hopf_sphere_chart, ModelSpec};
    use crate::slicing::build::{build_slicing, demo_perturbed_torus, SlicingOptions};
    use crate::variation::BaseGrid;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn first_identity_closed_form_on_level() {
        let eps = 0.2;
        let rho = WeightField::exp_trig(vec![crate::models::TrigTerm { amplitude: eps, wave: vec![0.0, 0.0, 1.0], phase: 0.0 }], &[Some(1.0); 3]);
        for z0 in [0.0, 0.5, 0.3] {
            let hs = DiscreteHypersurface::level(build_chart(&ModelSpec::torus(3)).unwrap(), BaseGrid::unit_torus(2, 16), 2, z0).unwrap();
            let r = first_identity_cells(&hs, &rho).unwrap();
            let exact = -TAU * TAU * eps * (TAU * z0).cos();
            assert!(r.lhs.iter().chain(&r.rhs).all(|v| (v - exact).abs() < 1e-10));
            assert!(r.sup < 1e-10);
        }
    }

    #[test]
    fn gauss_equation_on_clifford_perturbation() {
        let mut errs = Vec::new();
        for r in [16, 32] {
            let grid = BaseGrid::new(vec![crate::variation::Axis::periodic(r, 0.0, TAU), crate::variation::Axis::periodic(r, 0.0, TAU)]).unwrap();
            let hs = DiscreteHypersurface::graph(hopf_sphere_chart(), grid, 0, |x| PI / 4.0 + 0.1 * x[0].cos() * x[1].cos()).unwrap();
            errs.push(gauss_equation_residual(&hs).unwrap().sup);
        }
        assert!(errs[1] < errs[0] / 8.0, "{errs:?}");
    }

    #[test]
    fn slicing_identities_on_flat_and_perturbed() {
        let flat = build_slicing(&build_chart(&ModelSpec::torus(3)).unwrap(), 2, &SlicingOptions { resolution: 16, ..Default::default() }).unwrap();
        for k in 1..=2 {
            assert!(first_slicing_identity_residual(&flat, k).unwrap().sup < 1e-12);
            assert!(second_slicing_identity_residual(&flat, k).unwrap().sup < 1e-10);
        }
        let sl =
            build_slicing(&build_chart(&demo_perturbed_torus(0.05)).unwrap(), 2, &SlicingOptions { resolution: 32, ..Default::default() }).unwrap();
        for k in 1..=2 {
            let a = second_slicing_identity_residual(&sl, k).unwrap();
            let b = eigen_equation_residual(&sl, k).unwrap();
            let diff = a.residual.iter().zip(&b.residual).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{diff}");
            eprintln!("k={k} first {:e} second {:e}", first_slicing_identity_residual(&sl, k).unwrap().sup, a.sup);
        }
    }
}
