//! Pointwise algebra behind the slicing argument, checked on synthetic data.
//!
//! Frames are the completed `e_1 … e_n` with `e_j = ν_j` for `j ≤ m`. A
//! second fundamental form `h_k` of `Σ_k` is stored as an `(n−k)×(n−k)` matrix
//! over `e_{k+1} … e_n`: local index `i` is `e_{k+1+i}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::feasibility::coefficient_f64;
use crate::curvature::cm_axes;
use crate::error::{CurvError, Result};
use crate::geometry::{Basis, CurvatureTensor};
use crate::rng::{derive_seed, gaussian, rng_from, uniform, Rng};

/// Trace tolerance for the minimal top slice.
pub const TRACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VkTerms {
    pub values: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub slacks: Vec<f64>,
    pub coefficient: f64,
}

impl VkTerms {
    pub fn min_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_order(n: usize, m: usize) -> Result<()> {
    if !(2..n).contains(&m) {
        return Err(CurvError::BadOrder { m, n, max: n - 1 });
    }
    Ok(())
}

fn check_shapes(h: &[DMatrix<f64>], n: usize, levels: usize) -> Result<()> {
    if h.len() != levels {
        return Err(CurvError::BadShape(format!("expected {levels} second fundamental forms, got {}", h.len())));
    }
    for (i, hk) in h.iter().enumerate() {
        let d = n - i - 1;
        if hk.nrows() != d || hk.ncols() != d {
            return Err(CurvError::BadShape(format!("h_{} must be {d}x{d}, got {}x{}", i + 1, hk.nrows(), hk.ncols())));
        }
        if (hk - hk.transpose()).amax() > 1e-12 * hk.amax().max(1.0) {
            return Err(CurvError::BadShape(format!("h_{} is not symmetric", i + 1)));
        }
    }
    Ok(())
}

/// `Σ_{p=from}^{d−1} Σ_{q>p} (h_pp h_qq − h_pq²)` in local indices.
pub(crate) fn gauss_pairs(h: &DMatrix<f64>, from: usize, to: usize) -> f64 {
    let d = h.nrows();
    let mut s = 0.0;
    for p in from..to {
        for q in (p + 1)..d {
            s += h[(p, p)] * h[(q, q)] - h[(p, q)].powi(2);
        }
    }
    s
}

fn diag_sum(h: &DMatrix<f64>, from: usize, to: usize) -> f64 {
    (from..to).map(|i| h[(i, i)]).sum()
}

/// `𝒱_1 … 𝒱_m` with the bounds `c·(Σ_{p=2}^m h_1(e_p,e_p))²`,
/// `c·(Σ_{q>m} h_k(e_q,e_q))²` and `c·H_m²`, `c = c(n,m)`.
pub fn vk_terms(h: &[DMatrix<f64>], n: usize, m: usize) -> Result<VkTerms> {
    check_order(n, m)?;
    vk_terms_with_coefficient(h, n, m, coefficient_f64(n, m))
}

/// As [`vk_terms`] with a caller-chosen coefficient in the bounds.
pub fn vk_terms_with_coefficient(h: &[DMatrix<f64>], n: usize, m: usize, c: f64) -> Result<VkTerms> {
    check_order(n, m)?;
    check_shapes(h, n, m)?;
    let trace = h[0].trace();
    if trace.abs() > TRACE_TOL * h[0].amax().max(1.0) {
        return Err(CurvError::NotTraceless { trace });
    }
    vk_terms_unchecked(h, n, m, c)
}

/// As [`vk_terms_with_coefficient`] without the trace condition on `h_1`,
/// for discrete data where `H_{Σ_1}` vanishes only up to the criticality
/// tolerance.
pub fn vk_terms_unchecked(h: &[DMatrix<f64>], n: usize, m: usize, c: f64) -> Result<VkTerms> {
    check_order(n, m)?;
    check_shapes(h, n, m)?;
    let mut values = Vec::with_capacity(m);
    let mut lower_bounds = Vec::with_capacity(m);
    for k in 1..=m {
        let hk = &h[k - 1];
        let norm2 = hk.norm_squared();
        // local index of e_p is p − k − 1
        let (v, b) = if k == 1 {
            (norm2 + gauss_pairs(hk, 0, m - 1), c * diag_sum(hk, 0, m - 1).powi(2))
        } else {
            let mean = (0.5 - 0.5 / (k - 1) as f64) * hk.trace().powi(2);
            if k < m {
                (norm2 - mean + gauss_pairs(hk, 0, m - k), c * diag_sum(hk, m - k, n - k).powi(2))
            } else {
                (norm2 - mean, c * hk.trace().powi(2))
            }
        };
        values.push(v);
        lower_bounds.push(b);
    }
    let slacks = values.iter().zip(&lower_bounds).map(|(v, b)| v - b).collect();
    Ok(VkTerms { values, lower_bounds, slacks, coefficient: c })
}

pub fn random_symmetric(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    (&a + a.transpose()) * 0.5
}

/// Gaussian `h_1 … h_m` with `h_1` made traceless.
pub fn random_forms(n: usize, m: usize, rng: &mut Rng) -> Vec<DMatrix<f64>> {
    (1..=m)
        .map(|k| {
            let mut h = random_symmetric(n - k, rng);
            if k == 1 {
                let t = h.trace() / (n - 1) as f64;
                for i in 0..n - 1 {
                    h[(i, i)] -= t;
                }
            }
            h
        })
        .collect()
}

/// Diagonal forms that turn every estimate in the `𝒱_k` bounds into an
/// equality: Cauchy–Schwarz by equal diagonal blocks, Young by the matched
/// ratio of the two block traces, and `H_1 = 0`.
pub fn saturating_forms(n: usize, m: usize, scale: f64) -> Vec<DMatrix<f64>> {
    (1..=m)
        .map(|k| {
            let d = n - k;
            let mut h = DMatrix::zeros(d, d);
            if k == 1 {
                let a = scale;
                for i in 0..m - 1 {
                    h[(i, i)] = a / (m - 1) as f64;
                }
                for i in m - 1..d {
                    h[(i, i)] = -a / (n - m) as f64;
                }
            } else if k < m {
                let a = scale;
                let b = -((m - 1) as f64) / (m - k) as f64 * a;
                for i in 0..m - k {
                    h[(i, i)] = a / (m - k) as f64;
                }
                for i in m - k..d {
                    h[(i, i)] = b / (n - m) as f64;
                }
            } else {
                for i in 0..d {
                    h[(i, i)] = scale / d as f64;
                }
            }
            h
        })
        .collect()
}

/// Tangential gradients `G_k = D_{Σ_k} log ρ_k ∈ span(e_{k+1} … e_n)` for
/// `1 ≤ k ≤ m−1`; `ρ_0` is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientData {
    pub n: usize,
    pub m: usize,
    pub grads: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// `𝒢`.
    pub lhs: f64,
    /// `Σ_{k=2}^m (1/2 + 1/(2(k−1))) H_k²`.
    pub rhs: f64,
    pub slack: f64,
    /// The completed squares the slack should equal.
    pub squares: f64,
}

/// Projection onto `span(e_{k+1} … e_n)`, i.e. tangential to `Σ_k`.
fn project(v: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut out = v.clone();
    out.rows_mut(0, k).fill(0.0);
    out
}

impl GradientData {
    pub fn random(n: usize, m: usize, rng: &mut Rng) -> Self {
        let grads = (1..m).map(|k| project(&DVector::from_fn(n, |_, _| gaussian(rng)), k)).collect();
        GradientData { n, m, grads }
    }

    /// Every completed square vanishes: `G_1 ∈ span(e_2 … e_m)` and
    /// `G_k = P_k G_{k−1} / (2α_k)`.
    pub fn saturating(n: usize, m: usize, rng: &mut Rng) -> Self {
        let mut grads = Vec::with_capacity(m.saturating_sub(1));
        if m >= 2 {
            let mut g1 = DVector::zeros(n);
            for i in 1..m {
                g1[i] = uniform(rng, -1.0, 1.0);
            }
            grads.push(g1);
            for k in 2..m {
                let prev = project(&grads[k - 2], k);
                grads.push(prev * (k as f64 / (k - 1) as f64));
            }
        }
        GradientData { n, m, grads }
    }

    /// `H_k = −⟨G_{k−1}, e_k⟩` for `k ≥ 2`; `H_1 = 0`.
    pub fn mean_curvature(&self, k: usize) -> f64 {
        if k == 1 {
            0.0
        } else {
            -self.grads[k - 2][k - 1]
        }
    }

    /// `D_{Σ_k} log ρ_{k−1}`.
    fn lower(&self, k: usize) -> DVector<f64> {
        if k == 1 {
            DVector::zeros(self.n)
        } else {
            project(&self.grads[k - 2], k)
        }
    }

    pub fn estimate(&self) -> GradientEstimate {
        let m = self.m;
        let lhs: f64 = (1..m).map(|k| self.grads[k - 1].dot(&(&self.grads[k - 1] - self.lower(k)))).sum();
        let rhs: f64 = (2..=m).map(|k| (0.5 + 0.5 / (k - 1) as f64) * self.mean_curvature(k).powi(2)).sum();
        let mut squares = 0.0;
        for k in 2..m {
            let a = (k - 1) as f64 / (2 * k) as f64;
            squares += a * (&self.grads[k - 1] - self.lower(k) / (2.0 * a)).norm_squared();
        }
        if m >= 2 {
            let a = (m - 2) as f64 / (2 * (m - 1)) as f64;
            squares += (1.0 - a) * project(&self.grads[m - 2], m).norm_squared();
        }
        GradientEstimate { lhs, rhs, slack: lhs - rhs, squares }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussCheck {
    /// `Σ_p Ric_{Σ_{p−1}}(ν_p, ν_p)` from the level-by-level oracle.
    pub r: f64,
    pub cm: f64,
    pub extrinsic: f64,
    pub residual: f64,
}

/// Intrinsic curvature of `Σ_k` on `e_{k+1} … e_n`, obtained by applying
/// the Gauss equation once per level.
pub fn level_curvatures(rm: &CurvatureTensor, h: &[DMatrix<f64>]) -> Vec<CurvatureTensor> {
    let mut out = vec![rm.clone()];
    for hk in h {
        let next = out.last().unwrap().restrict_tail(1).add(&CurvatureTensor::gauss_product(hk));
        out.push(next);
    }
    out
}

/// `𝓡` against `C_m + Σ_k Σ_{p=k+1}^m Σ_{q>p} (h_k(e_p,e_p) h_k(e_q,e_q) − h_k(e_p,e_q)²)`.
pub fn iterated_gauss_synthetic(rm: &CurvatureTensor, h: &[DMatrix<f64>], m: usize) -> Result<GaussCheck> {
    let n = rm.dim();
    if rm.basis() != Basis::Orthonormal {
        return Err(CurvError::NotOrthonormal);
    }
    if !(1..n).contains(&m) {
        return Err(CurvError::BadOrder { m, n, max: n - 1 });
    }
    check_shapes(&h[..m - 1], n, m - 1)?;
    let levels = level_curvatures(rm, &h[..m - 1]);
    let r: f64 = (1..=m)
        .map(|p| {
            let t = &levels[p - 1];
            (1..t.dim()).map(|j| t.get(0, j, 0, j)).sum::<f64>()
        })
        .sum();
    let cm = cm_axes(rm, m);
    let extrinsic: f64 = (1..m).map(|k| gauss_pairs(&h[k - 1], 0, m - k)).sum();
    Ok(GaussCheck { r, cm, extrinsic, residual: r - cm - extrinsic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullSlicingSynthetic {
    /// `𝓡 − ½ scal − ½ Σ_{k≤n−2} (H_k² − |h_k|²)`.
    pub curvature_residual: f64,
    /// `𝓡 + 𝓔 + 𝓖` minus `½ scal + ½ Σ |h_k|² − ½ Σ H_k² + 𝓖`.
    pub branch_residual: f64,
}

/// The `m = n − 1` rewriting of `𝓡` and of `𝓡 + 𝓔 + 𝓖`.
pub fn full_slicing_synthetic(rm: &CurvatureTensor, h: &[DMatrix<f64>], g: f64) -> Result<FullSlicingSynthetic> {
    let n = rm.dim();
    let m = n - 1;
    check_shapes(h, n, m)?;
    let gauss = iterated_gauss_synthetic(rm, h, m)?;
    let scal = rm.scalar(&DMatrix::identity(n, n));
    let mean2 = |k: usize| h[k - 1].trace().powi(2);
    let norm2 = |k: usize| h[k - 1].norm_squared();
    let curvature_residual = gauss.r - 0.5 * scal - 0.5 * (1..=n - 2).map(|k| mean2(k) - norm2(k)).sum::<f64>();
    let e: f64 = (1..=m).map(norm2).sum::<f64>() - (2..=m).map(mean2).sum::<f64>();
    let branch = 0.5 * scal + 0.5 * (1..=m).map(|k| norm2(k) - mean2(k)).sum::<f64>() + g;
    Ok(FullSlicingSynthetic { curvature_residual, branch_residual: gauss.r + e + g - branch })
}

/// The two gradient terms produced by `ψ = ρ^{−1}` in the bottom-slice
/// stability inequality, computed separately from `(ρ, Dρ, Δρ)`:
/// `−Δψ − ρ^{−1} Δ log ρ` and `−⟨D log ρ, Dψ⟩`.
pub fn bottom_slice_gradient_terms(rho: f64, grad: &[f64], lap: f64) -> (f64, f64) {
    let g2: f64 = grad.iter().map(|x| x * x).sum();
    let lap_psi = -lap / (rho * rho) + 2.0 * g2 / rho.powi(3);
    let lap_log = lap / rho - g2 / (rho * rho);
    let first = -lap_psi - lap_log / rho;
    let dpsi: Vec<f64> = grad.iter().map(|x| -x / (rho * rho)).collect();
    let second = -grad.iter().zip(&dpsi).map(|(a, b)| a / rho * b).sum::<f64>();
    (first, second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub trials: usize,
    pub violations: usize,
    pub min_slack: f64,
}

impl SweepStats {
    fn merge(self, o: Self) -> Self {
        SweepStats { trials: self.trials + o.trials, violations: self.violations + o.violations, min_slack: self.min_slack.min(o.min_slack) }
    }

    fn single(slack: f64, tol: f64) -> Self {
        SweepStats { trials: 1, violations: usize::from(slack < tol), min_slack: slack }
    }

    fn empty() -> Self {
        SweepStats { trials: 0, violations: 0, min_slack: f64::INFINITY }
    }
}

/// Slacks are scaled by the data size so that the threshold is meaningful
/// for unit-variance Gaussian draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaSweep {
    pub n: usize,
    pub m: usize,
    pub gradient: SweepStats,
    pub top: SweepStats,
    pub intermediate: SweepStats,
    pub bottom: SweepStats,
    pub cauchy_schwarz: SweepStats,
    pub young: SweepStats,
}

impl LemmaSweep {
    pub fn violations(&self) -> usize {
        [self.gradient, self.top, self.intermediate, self.bottom, self.cauchy_schwarz, self.young].iter().map(|s| s.violations).sum()
    }
}

/// `Σx_i² − (Σx_i)²/d`.
pub fn cauchy_schwarz_slack(x: &[f64]) -> f64 {
    let s: f64 = x.iter().sum();
    x.iter().map(|v| v * v).sum::<f64>() - s * s / x.len() as f64
}

/// `xy + (λ/2)x² + (1/(2λ))y²` for `λ > 0`.
pub fn young_slack(x: f64, y: f64, lambda: f64) -> f64 {
    x * y + 0.5 * lambda * x * x + 0.5 / lambda * y * y
}

/// Random sweep of the gradient estimate and the `𝒱_k` bounds for one
/// `(n, m)` with `2 ≤ m ≤ n−1`. A trial violates when its slack is below
/// `tol`.
pub fn lemma_sweep(n: usize, m: usize, trials: usize, seed: u64, tol: f64) -> Result<LemmaSweep> {
    check_order(n, m)?;
    let per = |i: usize| -> Result<[SweepStats; 6]> {
        let mut rng = rng_from(derive_seed(seed, i as u64));
        let h = random_forms(n, m, &mut rng);
        let v = vk_terms(&h, n, m)?;
        let gd = GradientData::random(n, m, &mut rng).estimate();
        let mid = if m > 2 {
            (2..m).map(|k| SweepStats::single(v.slacks[k - 1], tol)).fold(SweepStats::empty(), SweepStats::merge)
        } else {
            SweepStats::empty()
        };
        let d = (n - 1).min(2 + i % (n - 1));
        let xs: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let lam = uniform(&mut rng, 0.05, 20.0);
        Ok([
            SweepStats::single(gd.slack, tol),
            SweepStats::single(v.slacks[0], tol),
            mid,
            SweepStats::single(v.slacks[m - 1], tol),
            SweepStats::single(cauchy_schwarz_slack(&xs), tol),
            SweepStats::single(young_slack(xs[0], xs[1 % d], lam), tol),
        ])
    };
    let acc = (0..trials).into_par_iter().map(per).try_reduce(|| [SweepStats::empty(); 6], |a, b| Ok(std::array::from_fn(|j| a[j].merge(b[j]))))?;
    Ok(LemmaSweep { n, m, gradient: acc[0], top: acc[1], intermediate: acc[2], bottom: acc[3], cauchy_schwarz: acc[4], young: acc[5] })
}

/// Largest `|slack|` over the equality cases of every `𝒱_k` bound and of
/// the gradient estimate.
pub fn witness_defect(n: usize, m: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..16 {
        let scale = uniform(&mut rng, -2.0, 2.0);
        let v = vk_terms(&saturating_forms(n, m, scale), n, m)?;
        worst = worst.max(v.slacks.iter().fold(0.0, |a, s| a.max(s.abs())));
        let g = GradientData::saturating(n, m, &mut rng).estimate();
        worst = worst.max(g.slack.abs());
    }
    Ok(worst)
}

/// Witnesses against `𝒱_k ≥ 0`, the form in which the bounds enter the
/// non-existence argument: the saturating forms give `𝒱_k = c(n,m)·(…)²`,
/// which is negative exactly when the dimension condition fails. Returns
/// the `k` with a negative `𝒱_k` and its value.
pub fn sign_flip_witnesses(n: usize, m: usize) -> Result<Vec<(usize, f64)>> {
    let v = vk_terms_with_coefficient(&saturating_forms(n, m, 1.0), n, m, 0.0)?;
    Ok(v.values.iter().enumerate().filter(|(_, x)| **x < 0.0).map(|(k, x)| (k + 1, *x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_forms_give_zero() {
        let h: Vec<_> = (1..=3).map(|k| DMatrix::zeros(6 - k, 6 - k)).collect();
        let v = vk_terms(&h, 6, 3).unwrap();
        assert!(v.values.iter().chain(&v.lower_bounds).all(|x| *x == 0.0));
    }

    #[test]
    fn bottom_slice_equality_for_n4_m2() {
        let mut h = random_forms(4, 2, &mut rng_from(1));
        h[1] = DMatrix::identity(2, 2) * 0.35;
        let v = vk_terms(&h, 4, 2).unwrap();
        assert_eq!(v.coefficient, 0.5);
        assert!(v.slacks[1].abs() < 1e-15);
    }

    #[test]
    fn shape_and_trace_errors() {
        let mut h = random_forms(5, 2, &mut rng_from(2));
        h[1] = DMatrix::zeros(2, 2);
        assert!(matches!(vk_terms(&h, 5, 2), Err(CurvError::BadShape(_))));
        let mut h = random_forms(5, 2, &mut rng_from(2));
        h[0][(0, 0)] += 0.1;
        assert!(matches!(vk_terms(&h, 5, 2), Err(CurvError::NotTraceless { .. })));
    }

    #[test]
    fn sweep_small() {
        for (n, m) in [(4, 2), (5, 3), (6, 4), (7, 3)] {
            let s = lemma_sweep(n, m, 2000, 7, -1e-12).unwrap();
            assert_eq!(s.violations(), 0, "{s:?}");
        }
    }

    #[test]
    fn witnesses_saturate() {
        for (n, m) in [(3, 2), (5, 3), (7, 5), (8, 7)] {
            assert!(witness_defect(n, m, 3).unwrap() < 1e-10);
        }
    }

    #[test]
    fn infeasible_pair_has_witnesses() {
        assert!(!sign_flip_witnesses(8, 3).unwrap().is_empty());
        assert!(sign_flip_witnesses(7, 3).unwrap().is_empty());
    }

    #[test]
    fn gradient_slack_is_completed_squares() {
        let mut rng = rng_from(5);
        for m in 2..=6 {
            let g = GradientData::random(7, m, &mut rng).estimate();
            assert!((g.slack - g.squares).abs() < 1e-12 * g.lhs.abs().max(1.0));
        }
    }

    #[test]
    fn iterated_gauss_oracle() {
        let mut rng = rng_from(9);
        for n in 3..=7 {
            let rm = CurvatureTensor::random_algebraic(n, &mut rng);
            for m in 1..n {
                let h: Vec<_> = (1..=m).map(|k| random_symmetric(n - k, &mut rng)).collect();
                let c = iterated_gauss_synthetic(&rm, &h, m).unwrap();
                assert!(c.residual.abs() < 1e-12 * c.r.abs().max(1.0), "{c:?}");
            }
        }
    }

    #[test]
    fn full_slicing_branch() {
        let mut rng = rng_from(10);
        for n in 3..=6 {
            let rm = CurvatureTensor::random_algebraic(n, &mut rng);
            let h = random_forms(n, n - 1, &mut rng);
            let f = full_slicing_synthetic(&rm, &h, 0.7).unwrap();
            assert!(f.curvature_residual.abs() < 1e-12 && f.branch_residual.abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn bottom_slice_terms_cancel() {
        let mut rng = rng_from(11);
        for _ in 0..100 {
            let rho = uniform(&mut rng, 0.1, 3.0);
            let grad = [gaussian(&mut rng), gaussian(&mut rng)];
            let (a, b) = bottom_slice_gradient_terms(rho, &grad, gaussian(&mut rng));
            assert!((a + b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}
