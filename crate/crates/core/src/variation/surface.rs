use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::grid::BaseGrid;
use super::weight::WeightField;
use crate::curvature::{christoffel, riemann_coordinate, Christoffel, Route};
use crate::error::{CurvError, Result};
use crate::geometry::MetricChart;

/// Graph hypersurface `x_h = u(x')` over a base grid, where `h` is the
/// ambient height axis and the base axes are the remaining ambient
/// coordinates in order.
#[derive(Debug, Clone)]
pub struct DiscreteHypersurface {
    pub ambient: MetricChart,
    pub grid: BaseGrid,
    pub height_axis: usize,
    pub height: Vec<f64>,
}

/// Derived data at one cell. Vectors are ambient coordinate components.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub christoffel: Christoffel,
    /// Columns `T_a = e_a + u_a e_h`.
    pub tangents: DMatrix<f64>,
    /// Upward unit normal `ν`.
    pub normal: DVector<f64>,
    /// `W = |dx_h − u_a dx^a|_g`; a height change `δu` moves the surface
    /// with normal speed `δu / W`.
    pub w: f64,
    pub induced: DMatrix<f64>,
    pub induced_inv: DMatrix<f64>,
    pub sqrt_det: f64,
    /// `h_ab = ⟨D_{T_a} ν, T_b⟩`.
    pub second_form: DMatrix<f64>,
    pub mean_curvature: f64,
    /// `√γ ΔV`.
    pub area: f64,
}

impl CellGeometry {
    /// `|h|² = γ^{ac} γ^{bd} h_ab h_cd`.
    pub fn h_norm2(&self) -> f64 {
        let a = &self.induced_inv * &self.second_form;
        (&a * &a).trace()
    }

    /// `(D² f)(ν, ν) = ν^i ν^j (∂_ij f − Γ^k_ij ∂_k f)`.
    pub fn hessian_nn(&self, grad: &[f64], hess: &DMatrix<f64>) -> f64 {
        let nu: Vec<f64> = self.normal.iter().copied().collect();
        let gamma = self.christoffel.contract(&nu, &nu);
        let mut acc = 0.0;
        for i in 0..nu.len() {
            for j in 0..nu.len() {
                acc += nu[i] * nu[j] * hess[(i, j)];
            }
            acc -= gamma[i] * grad[i];
        }
        acc
    }

    /// `⟨D f, ν⟩ = ν^i ∂_i f`.
    pub fn normal_derivative(&self, grad: &[f64]) -> f64 {
        self.normal.iter().zip(grad).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    pub cells: Vec<CellGeometry>,
}

impl DiscreteHypersurface {
    pub fn new(ambient: MetricChart, grid: BaseGrid, height_axis: usize, height: Vec<f64>) -> Result<Self> {
        if grid.dim() + 1 != ambient.dim() || height_axis >= ambient.dim() {
            return Err(CurvError::BadShape(format!(
                "base grid of dim {} with height axis {height_axis} in a {}-dimensional chart",
                grid.dim(),
                ambient.dim()
            )));
        }
        if height.len() != grid.len() {
            return Err(CurvError::BadShape(format!("{} heights for {} cells", height.len(), grid.len())));
        }
        Ok(DiscreteHypersurface { ambient, grid, height_axis, height })
    }

    pub fn graph(ambient: MetricChart, grid: BaseGrid, height_axis: usize, u: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let height = grid.sample(u);
        Self::new(ambient, grid, height_axis, height)
    }

    pub fn level(ambient: MetricChart, grid: BaseGrid, height_axis: usize, c: f64) -> Result<Self> {
        Self::graph(ambient, grid, height_axis, |_| c)
    }

    pub fn with_height(&self, height: Vec<f64>) -> Self {
        DiscreteHypersurface { height, ..self.clone() }
    }

    /// Ambient index of base axis `a`.
    pub fn ambient_axis(&self, a: usize) -> usize {
        if a < self.height_axis {
            a
        } else {
            a + 1
        }
    }

    pub fn ambient_point(&self, base: &[f64], u: f64) -> Vec<f64> {
        let mut p = base.to_vec();
        p.insert(self.height_axis, u);
        p
    }

    pub fn cell_point(&self, c: usize) -> Vec<f64> {
        self.ambient_point(&self.grid.coords(c), self.height[c])
    }

    /// Height derivatives `u_a` and `u_ab` (fourth-order stencils).
    fn height_derivatives(&self) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let k = self.grid.dim();
        let du: Vec<Vec<f64>> = (0..k).map(|a| self.grid.d1(&self.height, a)).collect();
        let mut ddu = vec![vec![Vec::new(); k]; k];
        for a in 0..k {
            ddu[a][a] = self.grid.d2(&self.height, a);
            for b in (a + 1)..k {
                let m = self.grid.d1(&du[a], b);
                ddu[b][a] = m.clone();
                ddu[a][b] = m;
            }
        }
        (du, ddu)
    }

    pub fn geometry(&self) -> Result<SurfaceGeometry> {
        let k = self.grid.dim();
        let (du, ddu) = self.height_derivatives();
        let dv = self.grid.cell_volume();
        let cells = (0..self.grid.len())
            .into_par_iter()
            .map(|c| {
                let grad: Vec<f64> = (0..k).map(|a| du[a][c]).collect();
                let hess = DMatrix::from_fn(k, k, |a, b| ddu[a][b][c]);
                graph_cell_geometry(&self.ambient, self.height_axis, self.cell_point(c), &grad, &hess, dv)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SurfaceGeometry { cells })
    }

    /// Surface moved with normal speed `s·f`: `u ← u + s f W`.
    pub fn normal_variation(&self, geom: &SurfaceGeometry, s: f64, f: &[f64]) -> Self {
        let height = self.height.iter().zip(&geom.cells).zip(f).map(|((u, c), fi)| u + s * fi * c.w).collect();
        self.with_height(height)
    }
}

/// Derived data of the graph `x_h = u` at one ambient `point`, from the
/// base-coordinate gradient and Hessian of `u`; `dv` is the base cell volume.
pub fn graph_cell_geometry(ambient: &MetricChart, hx: usize, point: Vec<f64>, du: &[f64], ddu: &DMatrix<f64>, dv: f64) -> Result<CellGeometry> {
    let k = du.len();
    let d = k + 1;
    let axis = |a: usize| if a < hx { a } else { a + 1 };
    let (g, _) = ambient.metric_checked(&point)?;
    let chr = christoffel(ambient, &point)?;
    let mut t = DMatrix::zeros(d, k);
    let mut n = DVector::zeros(d);
    n[hx] = 1.0;
    for a in 0..k {
        t[(axis(a), a)] = 1.0;
        t[(hx, a)] = du[a];
        n[axis(a)] = -du[a];
    }
    let gn = &chr.g_inv * &n;
    let w = n.dot(&gn).sqrt();
    let normal = gn / w;
    let induced = t.transpose() * &g * &t;
    let chol = nalgebra::Cholesky::new(induced.clone()).ok_or_else(|| CurvError::SingularMetric { point: point.clone() })?;
    let induced_inv = chol.inverse();
    let sqrt_det = induced.determinant().sqrt();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        let ta: Vec<f64> = t.column(a).iter().copied().collect();
        for b in a..k {
            let tb: Vec<f64> = t.column(b).iter().copied().collect();
            let gam = chr.contract(&ta, &tb);
            let ng: f64 = n.iter().zip(&gam).map(|(x, y)| x * y).sum();
            let v = -(ddu[(a, b)] + ng) / w;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    let mean_curvature = (&induced_inv * &h).trace();
    Ok(CellGeometry {
        point,
        metric: g,
        christoffel: chr,
        tangents: t,
        normal,
        w,
        induced,
        induced_inv,
        sqrt_det,
        second_form: h,
        mean_curvature,
        area: sqrt_det * dv,
    })
}

/// Fixed-order sum, so parallel per-cell evaluation stays deterministic.
fn ordered_sum(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().sum()
}

impl SurfaceGeometry {
    pub fn weights(&self, rho: &WeightField) -> Result<Vec<f64>> {
        self.cells.par_iter().map(|c| rho.value(&c.point)).collect()
    }

    pub fn area(&self) -> f64 {
        ordered_sum(self.cells.iter().map(|c| c.area))
    }

    pub fn weighted_area(&self, rho: &WeightField) -> Result<f64> {
        let w = self.weights(rho)?;
        Ok(ordered_sum(w.iter().zip(&self.cells).map(|(r, c)| r * c.area)))
    }

    /// `H + ⟨D log ρ, ν⟩` per cell.
    pub fn critical_residual(&self, rho: &WeightField) -> Result<Vec<f64>> {
        self.cells
            .par_iter()
            .map(|c| {
                let j = rho.log_jet(&c.point)?;
                Ok(c.mean_curvature + c.normal_derivative(&j.grad))
            })
            .collect()
    }

    /// `∫ ρ f (H + ⟨D log ρ, ν⟩) dμ`.
    pub fn first_variation(&self, rho: &WeightField, f: &[f64]) -> Result<f64> {
        let res = self.critical_residual(rho)?;
        let w = self.weights(rho)?;
        Ok(ordered_sum((0..self.cells.len()).map(|i| w[i] * f[i] * res[i] * self.cells[i].area)))
    }

    /// `∫ f H dμ`.
    pub fn first_variation_unweighted(&self, f: &[f64]) -> f64 {
        ordered_sum(self.cells.iter().zip(f).map(|(c, fi)| fi * c.mean_curvature * c.area))
    }

    pub fn ricci_nn(&self, ambient: &MetricChart) -> Result<Vec<f64>> {
        self.cells
            .par_iter()
            .map(|c| {
                let (t, _) = riemann_coordinate(ambient, &c.point, Route::Oracle)?;
                let ric = t.ricci(&c.christoffel.g_inv);
                Ok((c.normal.transpose() * ric * &c.normal)[(0, 0)])
            })
            .collect()
    }

    /// Stability potential `|h|² + Ric(ν,ν) − (D² log ρ)(ν,ν)`.
    pub fn potential(&self, ambient: &MetricChart, rho: &WeightField) -> Result<Vec<f64>> {
        let ric = self.ricci_nn(ambient)?;
        self.cells
            .par_iter()
            .zip(ric.par_iter())
            .map(|(c, r)| {
                let j = rho.log_jet(&c.point)?;
                Ok(c.h_norm2() + r - c.hessian_nn(&j.grad, &j.hess))
            })
            .collect()
    }

    pub fn max_normal_defect(&self) -> f64 {
        self.cells.iter().map(|c| ((c.normal.transpose() * &c.metric * &c.normal)[(0, 0)] - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_trace_defect(&self) -> f64 {
        self.cells.iter().map(|c| ((&c.induced_inv * &c.second_form).trace() - c.mean_curvature).abs()).fold(0.0, f64::max)
    }
}

pub fn weighted_area(hs: &DiscreteHypersurface, rho: &WeightField) -> Result<f64> {
    hs.geometry()?.weighted_area(rho)
}

pub fn first_variation(hs: &DiscreteHypersurface, rho: &WeightField, f: &[f64]) -> Result<f64> {
    hs.geometry()?.first_variation(rho, f)
}

pub fn critical_residual(hs: &DiscreteHypersurface, rho: &WeightField) -> Result<Vec<f64>> {
    hs.geometry()?.critical_residual(rho)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{euclidean_polar_chart, flat_torus_chart};
    use crate::variation::grid::Axis;
    use std::f64::consts::PI;

    fn t3() -> MetricChart {
        flat_torus_chart(&[1.0, 1.0, 1.0])
    }

    #[test]
    fn flat_level_areas() {
        let hs = DiscreteHypersurface::level(t3(), BaseGrid::unit_torus(2, 16), 2, 0.3).unwrap();
        let g = hs.geometry().unwrap();
        assert!((g.weighted_area(&WeightField::unit()).unwrap() - 1.0).abs() < 1e-14);
        assert!((g.weighted_area(&WeightField::constant(2.0)).unwrap() - 2.0).abs() < 1e-14);
        assert!(sup_norm(&g.critical_residual(&WeightField::unit()).unwrap()) < 1e-14);
        let res = g.critical_residual(&WeightField::exp_linear(vec![0.0, 0.0, 1.0])).unwrap();
        assert!(res.iter().all(|r| (r - 1.0).abs() < 1e-14));
    }

    #[test]
    fn graph_area_matches_quadrature() {
        let hs = DiscreteHypersurface::graph(t3(), BaseGrid::unit_torus(2, 256), 2, |x| 0.1 * (2.0 * PI * x[0]).sin()).unwrap();
        let a = weighted_area(&hs, &WeightField::unit()).unwrap();
        // independent composite Simpson rule of √(1 + u_x²) on a fine mesh
        let n = 20000;
        let f = |x: f64| (1.0 + (0.2 * PI * (2.0 * PI * x).cos()).powi(2)).sqrt();
        let h = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let exact = s * h / 3.0;
        assert!((a - exact).abs() < 1e-8, "{a} vs {exact}");
    }

    #[test]
    fn derived_data_invariants() {
        let hs =
            DiscreteHypersurface::graph(t3(), BaseGrid::unit_torus(2, 32), 2, |x| 0.1 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).unwrap();
        let g = hs.geometry().unwrap();
        assert!(g.max_normal_defect() < 1e-10);
        assert!(g.max_trace_defect() < 1e-10);
    }

    #[test]
    fn shift_invariance_of_area() {
        let grid = BaseGrid::unit_torus(2, 24);
        let hs = DiscreteHypersurface::graph(t3(), grid.clone(), 2, |x| 0.1 * (2.0 * PI * x[0]).sin() + 0.05 * (4.0 * PI * x[1]).cos()).unwrap();
        let a = weighted_area(&hs, &WeightField::unit()).unwrap();
        let shifted = hs.with_height(grid.shift(&hs.height, 0, 5));
        let shifted = shifted.with_height(grid.shift(&shifted.height, 1, -3));
        let b = weighted_area(&shifted, &WeightField::unit()).unwrap();
        assert!((a - b).abs() <= 1e-13 * a);
    }

    #[test]
    fn small_sphere_mean_curvature() {
        // r = const in polar coordinates of flat R³; ν = ∂_r outward
        let r0 = 0.7;
        let grid = BaseGrid::new(vec![Axis::interval(64, 0.0, PI), Axis::periodic(64, 0.0, 2.0 * PI)]).unwrap();
        let hs = DiscreteHypersurface::level(euclidean_polar_chart(3), grid.clone(), 0, r0).unwrap();
        let g = hs.geometry().unwrap();
        for c in &g.cells {
            assert!((c.mean_curvature - 2.0 / r0).abs() < 1e-9, "{} {:?}", c.mean_curvature, c.point);
        }
        let fv = g.first_variation(&WeightField::unit(), &vec![1.0; grid.len()]).unwrap();
        let exact = 2.0 / r0 * 4.0 * PI * r0 * r0;
        assert!((fv - exact).abs() < 1e-3 * exact, "{fv} vs {exact}");
    }
}
