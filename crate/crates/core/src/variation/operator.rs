use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surface::{sup_norm, DiscreteHypersurface, SurfaceGeometry};
use super::weight::WeightField;
use crate::error::{CurvError, Result};

/// Criticality required before second-variation quantities are trusted.
pub const CRITICAL_TOL: f64 = 1e-5;

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Graph Laplacian `Σ_e w_e (δ_i − δ_j)(δ_i − δ_j)ᵀ`; duplicate edges merge.
    pub fn laplacian(n: usize, edges: &[(usize, usize, f64)]) -> (Self, Vec<(usize, usize, f64)>) {
        let mut norm: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j, w)| if i < j { (i, j, w) } else { (j, i, w) }).collect();
        norm.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(norm.len());
        for (i, j, w) in norm {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += w,
                _ => merged.push((i, j, w)),
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut diag = vec![0.0; n];
        for &(i, j, w) in &merged {
            if i == j {
                continue;
            }
            rows[i].push((j, -w));
            rows[j].push((i, -w));
            diag[i] += w;
            diag[j] += w;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut r) in rows.into_iter().enumerate() {
            r.push((i, diag[i]));
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        (Csr { n, row_ptr, cols, vals }, merged)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).into_par_iter().map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).find(|&k| self.cols[k] == i).map_or(0.0, |k| self.vals[k])).collect()
    }

    pub fn row_abs_sum(&self, i: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k].abs()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.cols[k])] = self.vals[k];
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub cells: usize,
    pub nonzeros: usize,
    /// All merged edge weights nonnegative: `K` is an M-matrix and the ground
    /// state of `K − MP` is positive.
    pub m_matrix: bool,
    pub min_edge_weight: f64,
    pub potential_min: f64,
    pub potential_max: f64,
    pub weighted: bool,
}

/// `L = M⁻¹(K − MP)`: `K` the weighted Dirichlet energy `fᵀKf ≈ ∫ρ|D_Σ f|² dμ`,
/// `M = ρ dμ` lumped per cell, `P` the potential. Self-adjoint in the
/// `M` inner product.
#[derive(Debug, Clone)]
pub struct StabilityOperator {
    pub stiffness: Csr,
    pub mass: Vec<f64>,
    pub potential: Vec<f64>,
    pub descriptor: OperatorDescriptor,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StabilityOperator {
    pub fn new(stiffness: Csr, mass: Vec<f64>, potential: Vec<f64>, merged: &[(usize, usize, f64)], weighted: bool) -> Self {
        let min_edge_weight = merged.iter().map(|e| e.2).fold(f64::INFINITY, f64::min);
        let descriptor = OperatorDescriptor {
            cells: stiffness.n,
            nonzeros: stiffness.vals.len(),
            m_matrix: min_edge_weight >= 0.0,
            min_edge_weight,
            potential_min: potential.iter().copied().fold(f64::INFINITY, f64::min),
            potential_max: potential.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weighted,
        };
        StabilityOperator { stiffness, mass, potential, descriptor }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// `L f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let kf = self.stiffness.matvec(f);
        (0..f.len()).map(|i| kf[i] / self.mass[i] - self.potential[i] * f[i]).collect()
    }

    /// `⟨f, g⟩_ρ = Σ M f g`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..f.len()).map(|i| self.mass[i] * f[i] * g[i]).sum()
    }

    pub fn dirichlet(&self, f: &[f64]) -> f64 {
        dot(f, &self.stiffness.matvec(f))
    }

    /// `fᵀKf − Σ M P f² = ⟨Lf, f⟩_ρ`.
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        self.dirichlet(f) - (0..f.len()).map(|i| self.mass[i] * self.potential[i] * f[i] * f[i]).sum::<f64>()
    }

    /// Max row sum of `|L|`.
    pub fn norm_inf(&self) -> f64 {
        (0..self.len()).map(|i| self.stiffness.row_abs_sum(i) / self.mass[i] + self.potential[i].abs()).fold(0.0, f64::max)
    }

    /// Lower bound on the spectrum (`K ⪰ 0`).
    pub fn lower_bound(&self) -> f64 {
        -self.descriptor.potential_max
    }

    /// Dense `M^{-1/2}(K − MP)M^{-1/2}`, symmetric with the spectrum of `L`.
    pub fn symmetric_dense(&self) -> DMatrix<f64> {
        let mut d = self.stiffness.to_dense();
        let n = self.len();
        for i in 0..n {
            d[(i, i)] -= self.mass[i] * self.potential[i];
        }
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] /= (self.mass[i] * self.mass[j]).sqrt();
            }
        }
        d
    }
}

/// Per-cell flux coefficients `ρ √γ γ^{ab}` and lumped masses `ρ √γ ΔV`.
fn flux_and_mass(geom: &SurfaceGeometry, weights: &[f64], dv: f64) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let flux = geom.cells.iter().zip(weights).map(|(c, r)| &c.induced_inv * (r * c.sqrt_det)).collect();
    let mass = geom.cells.iter().zip(weights).map(|(c, r)| r * c.sqrt_det * dv).collect();
    (flux, mass)
}

/// Edge list of the discrete energy `Σ_cells ΔV A^{ab} ∂_a f ∂_b f`.
///
/// Axis edges carry `A^{aa}` at the edge midpoint. The cross term on each
/// plaquette uses `2 c δ_a δ_b = |c| ((δ_a ± δ_b)² − δ_a² − δ_b²)` averaged
/// over the two corner paths: a diagonal edge of weight `|c|` and `−|c|/2`
/// on each side edge. This keeps `K` a graph Laplacian.
fn energy_edges(hs: &DiscreteHypersurface, flux: &[DMatrix<f64>]) -> Vec<(usize, usize, f64)> {
    let grid = &hs.grid;
    let k = grid.dim();
    let dv = grid.cell_volume();
    let mut edges = Vec::with_capacity(grid.len() * (k + 5 * k * (k - 1) / 2));
    for c in 0..grid.len() {
        for a in 0..k {
            let h = grid.axes[a].step();
            if let Some(nb) = grid.edge_neighbor(c, a, 1) {
                let w = 0.5 * (flux[c][(a, a)] + flux[nb][(a, a)]) * dv / (h * h);
                edges.push((c, nb, w));
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                let (Some(c10), Some(c01)) = (grid.edge_neighbor(c, a, 1), grid.edge_neighbor(c, b, 1)) else { continue };
                let Some(c11) = grid.edge_neighbor(c10, b, 1) else { continue };
                let coef = 0.25 * (flux[c][(a, b)] + flux[c10][(a, b)] + flux[c01][(a, b)] + flux[c11][(a, b)]);
                let cc = coef * dv / (grid.axes[a].step() * grid.axes[b].step());
                if cc == 0.0 {
                    continue;
                }
                let half = -0.5 * cc.abs();
                if cc > 0.0 {
                    edges.push((c, c11, cc));
                } else {
                    edges.push((c10, c01, -cc));
                }
                edges.extend([(c, c10, half), (c10, c11, half), (c, c01, half), (c01, c11, half)]);
            }
        }
    }
    edges
}

/// Assembles `L` without the criticality precondition.
pub fn assemble_from_geometry(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, rho: &WeightField) -> Result<StabilityOperator> {
    let weights = geom.weights(rho)?;
    let (flux, mass) = flux_and_mass(geom, &weights, hs.grid.cell_volume());
    let (k, merged) = Csr::laplacian(hs.grid.len(), &energy_edges(hs, &flux));
    let potential = geom.potential(&hs.ambient, rho)?;
    Ok(StabilityOperator::new(k, mass, potential, &merged, !rho.is_constant()))
}

fn check_critical(geom: &SurfaceGeometry, rho: &WeightField) -> Result<()> {
    let r = sup_norm(&geom.critical_residual(rho)?);
    if r >= CRITICAL_TOL {
        return Err(CurvError::NotCritical { residual: r });
    }
    Ok(())
}

pub fn assemble_stability_operator(hs: &DiscreteHypersurface, rho: &WeightField) -> Result<StabilityOperator> {
    let geom = hs.geometry()?;
    check_critical(&geom, rho)?;
    assemble_from_geometry(hs, &geom, rho)
}

/// `∫ ρ (|D_Σ f|² − (|h|² + Ric(ν,ν) − (D² log ρ)(ν,ν)) f²) dμ`, the
/// integrated-by-parts form of `−∫ f L f ρ dμ`.
///
/// Evaluated by quadrature with fourth-order gradients of `f`, independently
/// of the second-order stiffness used by the eigen solver.
pub fn second_variation(hs: &DiscreteHypersurface, rho: &WeightField, f: &[f64]) -> Result<f64> {
    let geom = hs.geometry()?;
    check_critical(&geom, rho)?;
    quadratic_form_quadrature(hs, &geom, rho, f)
}

pub fn quadratic_form_quadrature(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, rho: &WeightField, f: &[f64]) -> Result<f64> {
    let weights = geom.weights(rho)?;
    let potential = geom.potential(&hs.ambient, rho)?;
    let k = hs.grid.dim();
    let grads: Vec<Vec<f64>> = (0..k).map(|a| hs.grid.d1(f, a)).collect();
    let terms: Vec<f64> = (0..f.len())
        .into_par_iter()
        .map(|i| {
            let c = &geom.cells[i];
            let mut dir = 0.0;
            for a in 0..k {
                for b in 0..k {
                    dir += c.induced_inv[(a, b)] * grads[a][i] * grads[b][i];
                }
            }
            weights[i] * c.area * (dir - potential[i] * f[i] * f[i])
        })
        .collect();
    // sequential sum keeps the result independent of the thread count
    Ok(terms.iter().sum())
}

/// `∫ (|D_Σ f|² − (|h|² + Ric(ν,ν)) f²) dμ`, assembled without any weight.
pub fn second_variation_unweighted(hs: &DiscreteHypersurface, f: &[f64]) -> Result<f64> {
    let geom = hs.geometry()?;
    let r = sup_norm(&geom.cells.iter().map(|c| c.mean_curvature).collect::<Vec<_>>());
    if r >= CRITICAL_TOL {
        return Err(CurvError::NotCritical { residual: r });
    }
    let ric = geom.ricci_nn(&hs.ambient)?;
    let k = hs.grid.dim();
    let grads: Vec<Vec<f64>> = (0..k).map(|a| hs.grid.d1(f, a)).collect();
    Ok((0..f.len())
        .map(|i| {
            let c = &geom.cells[i];
            let dir: f64 = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).map(|(a, b)| c.induced_inv[(a, b)] * grads[a][i] * grads[b][i]).sum();
            c.area * (dir - (c.h_norm2() + ric[i]) * f[i] * f[i])
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Nonpositive curvature met: the system is not positive definite.
    pub indefinite: bool,
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
pub fn pcg(apply: impl Fn(&[f64]) -> Vec<f64>, diag: &[f64], b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome {
    let n = b.len();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let ax = apply(x);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
    let mut z: Vec<f64> = (0..n).map(|i| r[i] / diag[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res < tol {
            return CgOutcome { iterations: it, relative_residual: res, converged: true, indefinite: false };
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return CgOutcome { iterations: it, relative_residual: res, converged: false, indefinite: true };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = (0..n).map(|i| r[i] / diag[i]).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
    }
    CgOutcome { iterations: max_iter, relative_residual: res, converged: res < tol, indefinite: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub max_iters: usize,
    /// Target for `‖Lv − λv‖∞ / (‖L‖∞ ‖v‖∞)`.
    pub tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { max_iters: 400, tol: 1e-10, cg_tol: 1e-12, cg_max_iters: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lambda_1: f64,
    /// Ground state normalized to max 1.
    pub eigenfunction: Vec<f64>,
    /// `‖Lv − λv‖∞ / (‖L‖∞ ‖v‖∞)`.
    pub residual: f64,
    /// `‖Lv − λv‖∞` with `max v = 1`.
    pub absolute_residual: f64,
    pub iterations: usize,
    pub positive: bool,
    pub operator: OperatorDescriptor,
}

/// Ground state of `L` by shifted inverse iteration.
///
/// The shift starts at `lower_bound − 1`, which makes the shifted system
/// positive definite. Once the Rayleigh quotient is resolved, the shift moves
/// up to `RQ − max(4‖r‖, 0.05(1 + |RQ|))`, still below the eigenvalue nearest
/// the quotient; if CG ever meets negative curvature the safe shift is restored.
pub fn first_eigenpair(op: &StabilityOperator, opts: &EigenOptions) -> Result<StabilityReport> {
    let n = op.len();
    let safe = op.lower_bound() - 1.0;
    let kdiag = op.stiffness.diag();
    let norm = op.norm_inf().max(f64::MIN_POSITIVE);
    let rayleigh = |v: &[f64]| op.quadratic_form(v) / op.inner(v, v);
    let residual = |v: &[f64], lam: f64| -> f64 {
        let lv = op.apply(v);
        (0..n).map(|i| (lv[i] - lam * v[i]).abs()).fold(0.0, f64::max)
    };
    let mut v = vec![1.0; n];
    let mut lam = rayleigh(&v);
    let mut res = residual(&v, lam) / (norm * sup_norm(&v));
    let mut adaptive = true;
    let mut best = (res, v.clone(), lam);
    let mut iters = 0;
    while res >= opts.tol && iters < opts.max_iters {
        iters += 1;
        // M-norm residual bound: some eigenvalue lies within `bound` of `lam`
        let lv = op.apply(&v);
        let r_m: f64 = (0..n).map(|i| op.mass[i] * (lv[i] - lam * v[i]).powi(2)).sum::<f64>().sqrt();
        let bound = r_m / op.inner(&v, &v).sqrt();
        let mut sigma = if adaptive && iters > 2 { safe.max(lam - (4.0 * bound).max(0.05 * (1.0 + lam.abs()))) } else { safe };
        let y = loop {
            let shifted: Vec<f64> = (0..n).map(|i| op.mass[i] * (op.potential[i] + sigma)).collect();
            let diag: Vec<f64> = (0..n).map(|i| kdiag[i] - shifted[i]).collect();
            let apply = |x: &[f64]| {
                let kx = op.stiffness.matvec(x);
                (0..n).map(|i| kx[i] - shifted[i] * x[i]).collect::<Vec<f64>>()
            };
            let b: Vec<f64> = (0..n).map(|i| op.mass[i] * v[i]).collect();
            let gap = (lam - sigma).max(1e-12);
            let mut x: Vec<f64> = v.iter().map(|vi| vi / gap).collect();
            let out = pcg(apply, &diag, &b, &mut x, opts.cg_tol, opts.cg_max_iters);
            if out.indefinite || diag.iter().any(|d| *d <= 0.0) {
                if sigma == safe {
                    return Err(CurvError::DegenerateInput("shifted stability operator is not positive definite".into()));
                }
                adaptive = false;
                sigma = safe;
                continue;
            }
            break x;
        };
        let s = op.inner(&y, &y).sqrt();
        v = y.iter().map(|x| x / s).collect();
        lam = rayleigh(&v);
        res = residual(&v, lam) / (norm * sup_norm(&v));
        if res < best.0 {
            best = (res, v.clone(), lam);
        }
    }
    let (res, mut v, lam) = best;
    if res >= opts.tol.max(1e-8) {
        return Err(CurvError::IterationLimit { iterations: iters, best_residual: res });
    }
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let vmax = v.iter().map(|x| x * sign).fold(f64::NEG_INFINITY, f64::max);
    for x in v.iter_mut() {
        *x *= sign / vmax;
    }
    let absolute_residual = residual(&v, lam);
    Ok(StabilityReport {
        lambda_1: lam,
        positive: v.iter().all(|x| *x > 0.0),
        eigenfunction: v,
        residual: res,
        absolute_residual,
        iterations: iters,
        operator: op.descriptor.clone(),
    })
}

/// Fourth-order non-divergence form of `L`:
/// `L f = −γ^{ab} ∂_ab f − (B^b + γ^{ab} ∂_a log ρ) ∂_b f − P f` with
/// `B^b = (1/√γ) ∂_a(√γ γ^{ab})`.
#[derive(Debug, Clone)]
pub struct HighOrderOperator {
    grid: super::grid::BaseGrid,
    inv: Vec<DMatrix<f64>>,
    drift: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
}

impl HighOrderOperator {
    pub fn new(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, rho: &WeightField) -> Result<Self> {
        let k = hs.grid.dim();
        let potential = geom.potential(&hs.ambient, rho)?;
        let inv: Vec<DMatrix<f64>> = geom.cells.iter().map(|c| c.induced_inv.clone()).collect();
        let dlog = geom
            .cells
            .par_iter()
            .map(|c| {
                let j = rho.log_jet(&c.point)?;
                Ok((0..k).map(|a| c.tangents.column(a).iter().zip(&j.grad).map(|(t, g)| t * g).sum()).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut drift: Vec<Vec<f64>> =
            (0..geom.cells.len()).map(|i| (0..k).map(|b| (0..k).map(|a| inv[i][(a, b)] * dlog[i][a]).sum()).collect()).collect();
        for a in 0..k {
            for b in 0..k {
                let flux: Vec<f64> = geom.cells.iter().map(|c| c.sqrt_det * c.induced_inv[(a, b)]).collect();
                for (i, d) in hs.grid.d1(&flux, a).into_iter().enumerate() {
                    drift[i][b] += d / geom.cells[i].sqrt_det;
                }
            }
        }
        Ok(HighOrderOperator { grid: hs.grid.clone(), inv, drift, potential })
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let k = self.grid.dim();
        let d1: Vec<Vec<f64>> = (0..k).map(|a| self.grid.d1(f, a)).collect();
        let mut out: Vec<f64> = (0..f.len()).map(|i| -self.potential[i] * f[i] - (0..k).map(|b| self.drift[i][b] * d1[b][i]).sum::<f64>()).collect();
        for a in 0..k {
            for (i, d) in self.grid.d2(f, a).into_iter().enumerate() {
                out[i] -= self.inv[i][(a, a)] * d;
            }
            for b in (a + 1)..k {
                for (i, d) in self.grid.d1(&d1[a], b).into_iter().enumerate() {
                    out[i] -= 2.0 * self.inv[i][(a, b)] * d;
                }
            }
        }
        out
    }
}

/// Defect correction of a ground state of `op` towards the ground state of
/// the fourth-order operator: `(L − σ) v' = (λ − σ) v − (L₄ − L) v`, with `σ`
/// just below the low-order eigenvalue so the solves stay positive definite.
/// The fixed point satisfies `L₄ v = λ v`; `λ` is the `M`-weighted Rayleigh
/// quotient of `L₄`.
pub fn refine_eigenpair(op: &StabilityOperator, high: &HighOrderOperator, low: &StabilityReport, opts: &EigenOptions) -> Result<StabilityReport> {
    let n = op.len();
    let sigma = low.lambda_1 - 0.1 * (1.0 + low.lambda_1.abs());
    let kdiag = op.stiffness.diag();
    let shifted: Vec<f64> = (0..n).map(|i| op.mass[i] * (op.potential[i] + sigma)).collect();
    let diag: Vec<f64> = (0..n).map(|i| kdiag[i] - shifted[i]).collect();
    let solve_op = |x: &[f64]| {
        let kx = op.stiffness.matvec(x);
        (0..n).map(|i| kx[i] - shifted[i] * x[i]).collect::<Vec<f64>>()
    };
    let quotient = |v: &[f64], lv: &[f64]| op.inner(lv, v) / op.inner(v, v);
    let mut v = low.eigenfunction.clone();
    let mut l4v = high.apply(&v);
    let mut lam = quotient(&v, &l4v);
    let abs_res = |v: &[f64], lv: &[f64], lam: f64| (0..n).map(|i| (lv[i] - lam * v[i]).abs()).fold(0.0, f64::max) / sup_norm(v);
    let mut res = abs_res(&v, &l4v, lam);
    let mut iters = 0;
    while res > 1e-9 && iters < opts.max_iters {
        iters += 1;
        let l2v = op.apply(&v);
        let b: Vec<f64> = (0..n).map(|i| op.mass[i] * ((lam - sigma) * v[i] - l4v[i] + l2v[i])).collect();
        let mut x = v.clone();
        let out = pcg(solve_op, &diag, &b, &mut x, opts.cg_tol, opts.cg_max_iters);
        if out.indefinite {
            return Err(CurvError::DegenerateInput("shifted stability operator is not positive definite".into()));
        }
        let top = sup_norm(&x);
        v = x.iter().map(|y| y / top).collect();
        l4v = high.apply(&v);
        lam = quotient(&v, &l4v);
        let next = abs_res(&v, &l4v, lam);
        // stagnation at the rounding floor
        if next > 0.9 * res && next < 1e-7 {
            res = next;
            break;
        }
        res = next;
    }
    if res >= 1e-6 {
        return Err(CurvError::IterationLimit { iterations: iters, best_residual: res });
    }
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let vmax = v.iter().map(|x| x * sign).fold(f64::NEG_INFINITY, f64::max);
    for x in v.iter_mut() {
        *x *= sign / vmax;
    }
    Ok(StabilityReport {
        lambda_1: lam,
        positive: v.iter().all(|x| *x > 0.0),
        eigenfunction: v,
        residual: res / op.norm_inf().max(f64::MIN_POSITIVE),
        absolute_residual: res,
        iterations: iters,
        operator: op.descriptor.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{flat_torus_chart, sphere_chart};
    use crate::rng::{rng_from, uniform};
    use crate::variation::grid::{Axis, BaseGrid};
    use std::f64::consts::PI;

    fn flat_level(r: usize) -> DiscreteHypersurface {
        DiscreteHypersurface::level(flat_torus_chart(&[1.0; 3]), BaseGrid::unit_torus(2, r), 2, 0.25).unwrap()
    }

    fn equator(r: usize) -> DiscreteHypersurface {
        let grid = BaseGrid::new(vec![Axis::interval(r, 0.0, PI), Axis::periodic(r, 0.0, 2.0 * PI)]).unwrap();
        DiscreteHypersurface::level(sphere_chart(3, 1.0), grid, 0, PI / 2.0).unwrap()
    }

    #[test]
    fn flat_torus_ground_state() {
        let op = assemble_stability_operator(&flat_level(32), &WeightField::unit()).unwrap();
        assert!(op.descriptor.m_matrix);
        let rep = first_eigenpair(&op, &EigenOptions::default()).unwrap();
        assert!(rep.lambda_1.abs() < 1e-10);
        assert!(rep.eigenfunction.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn equator_ground_state() {
        let hs = equator(32);
        let op = assemble_stability_operator(&hs, &WeightField::unit()).unwrap();
        assert!(op.descriptor.m_matrix);
        let rep = first_eigenpair(&op, &EigenOptions::default()).unwrap();
        assert!((rep.lambda_1 + 2.0).abs() < 1e-9, "{}", rep.lambda_1);
        assert!(rep.positive);
        let ones = vec![1.0; hs.grid.len()];
        let q = second_variation(&hs, &WeightField::unit(), &ones).unwrap();
        assert!((q + 8.0 * PI).abs() < 2e-3 * 8.0 * PI, "{q}");
    }

    #[test]
    fn symmetric_and_quadratic_form() {
        let hs = DiscreteHypersurface::level(flat_torus_chart(&[1.0; 3]), BaseGrid::unit_torus(2, 16), 2, 0.0).unwrap();
        let rho = WeightField::exp_trig(vec![crate::models::TrigTerm { amplitude: 0.2, wave: vec![1.0, 1.0, 0.0], phase: 0.3 }], &[Some(1.0); 3]);
        let op = assemble_stability_operator(&hs, &rho).unwrap();
        let mut rng = rng_from(1);
        let f: Vec<f64> = (0..op.len()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let g: Vec<f64> = (0..op.len()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let a = op.inner(&op.apply(&f), &g);
        let b = op.inner(&f, &op.apply(&g));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!((op.inner(&op.apply(&f), &f) - op.quadratic_form(&f)).abs() < 1e-10 * op.quadratic_form(&f).abs());
    }

    #[test]
    fn dense_oracle_with_diagonal_perturbation() {
        let hs = flat_level(32);
        let mut op = assemble_stability_operator(&hs, &WeightField::unit()).unwrap();
        let mut rng = rng_from(4);
        op.potential = (0..op.len()).map(|_| -uniform(&mut rng, 0.5, 3.0)).collect();
        op.descriptor.potential_max = op.potential.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rep = first_eigenpair(&op, &EigenOptions::default()).unwrap();
        let dense = op.symmetric_dense().symmetric_eigenvalues().min();
        assert!((rep.lambda_1 - dense).abs() < 1e-8, "{} vs {dense}", rep.lambda_1);
        assert!(rep.positive);
    }

    #[test]
    fn not_critical_rejected() {
        let hs = flat_level(16);
        let rho = WeightField::exp_linear(vec![0.0, 0.0, 1.0]);
        assert!(matches!(second_variation(&hs, &rho, &vec![1.0; 256]), Err(CurvError::NotCritical { .. })));
    }

    #[test]
    fn refined_ground_state_converges_faster() {
        let rho = WeightField::from_log_jet(std::sync::Arc::new(|x: &[f64]| {
            let (a, b, c) = (2.0 * PI * x[0], 2.0 * PI * x[1], 2.0 * PI * x[2]);
            let k = 4.0 * PI * PI;
            let mut hess = DMatrix::zeros(3, 3);
            hess[(0, 0)] = -k * (0.3 * a.sin() * b.cos() + 0.2 * c.cos() * a.cos());
            hess[(0, 1)] = -k * 0.3 * a.cos() * b.sin();
            hess[(0, 2)] = k * 0.2 * c.sin() * a.sin();
            hess[(1, 1)] = -k * 0.3 * a.sin() * b.cos();
            hess[(2, 2)] = -k * 0.2 * c.cos() * a.cos();
            hess[(1, 0)] = hess[(0, 1)];
            hess[(2, 0)] = hess[(0, 2)];
            crate::variation::LogJet {
                value: 0.3 * a.sin() * b.cos() + 0.2 * c.cos() * a.cos(),
                grad: vec![
                    2.0 * PI * (0.3 * a.cos() * b.cos() - 0.2 * c.cos() * a.sin()),
                    -2.0 * PI * 0.3 * a.sin() * b.sin(),
                    -2.0 * PI * 0.2 * c.sin() * a.cos(),
                ],
                hess,
            }
        }));
        let solve = |r: usize| {
            let hs = DiscreteHypersurface::level(flat_torus_chart(&[1.0; 3]), BaseGrid::unit_torus(2, r), 2, 0.0).unwrap();
            let op = assemble_stability_operator(&hs, &rho).unwrap();
            let low = first_eigenpair(&op, &EigenOptions::default()).unwrap();
            let high = HighOrderOperator::new(&hs, &hs.geometry().unwrap(), &rho).unwrap();
            let rep = refine_eigenpair(&op, &high, &low, &EigenOptions::default()).unwrap();
            assert!(rep.positive && rep.absolute_residual < 1e-7, "{}", rep.absolute_residual);
            (low.lambda_1, rep.lambda_1)
        };
        let (l16, h16) = solve(16);
        let (l32, h32) = solve(32);
        let (_, h64) = solve(64);
        assert!((h16 - h64).abs() / (h32 - h64).abs() > 10.0, "{h16} {h32} {h64}");
        assert!((h32 - h64).abs() < (l32 - h64).abs() && (h16 - h64).abs() < (l16 - h64).abs());
    }

    #[test]
    fn unweighted_paths_agree() {
        let hs = equator(16);
        let f: Vec<f64> = (0..hs.grid.len()).map(|c| 1.0 + 0.3 * hs.grid.coords(c)[1].cos()).collect();
        let a = second_variation(&hs, &WeightField::unit(), &f).unwrap();
        let b = second_variation_unweighted(&hs, &f).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs());
    }
}
