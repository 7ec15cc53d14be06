use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chart::MetricChart;
use super::RANK_TOL;
use crate::error::{CurvError, Result};
use crate::rng::{derive_seed, gaussian_vec, rng_from};

/// `m` metric-orthonormal tangent vectors at a point, optionally completed to
/// a full orthonormal basis. Vectors are coordinate components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalFrame {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub completion: Option<Vec<DVector<f64>>>,
}

fn inner(g: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (u.transpose() * g * v)[(0, 0)]
}

impl OrthonormalFrame {
    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }

    pub fn is_completed(&self) -> bool {
        self.vectors.len() == self.dim() || self.completion.as_ref().is_some_and(|c| c.len() + self.vectors.len() == self.dim())
    }

    /// All basis vectors (frame first, completion after) as matrix columns.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let mut cols: Vec<DVector<f64>> = self.vectors.clone();
        if let Some(c) = &self.completion {
            cols.extend(c.iter().cloned());
        }
        DMatrix::from_columns(&cols)
    }

    pub fn frame_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vectors)
    }

    /// Gram matrix `g(v_i, v_j)` over every stored vector.
    pub fn gram(&self) -> DMatrix<f64> {
        let b = self.basis_matrix();
        b.transpose() * &self.metric * b
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.gram();
        let k = gram.nrows();
        (gram - DMatrix::identity(k, k)).amax()
    }

    /// Same frame in an orthonormal basis whose columns are `basis`.
    pub fn from_orthonormal_coords(point: Vec<f64>, metric: DMatrix<f64>, basis: &DMatrix<f64>, coords: &DMatrix<f64>) -> Self {
        let vs = basis * coords;
        OrthonormalFrame { point, metric, vectors: vs.column_iter().map(|c| c.into_owned()).collect(), completion: None }
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass, in the metric `g`.
/// Returns the orthonormalized vector or `None` if its relative pivot falls
/// below `tol`.
fn orthonormalize_against(g: &DMatrix<f64>, basis: &[DVector<f64>], v: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let orig = inner(g, v, v).max(0.0).sqrt();
    if orig == 0.0 || !orig.is_finite() {
        return None;
    }
    let mut w = v.clone();
    for _ in 0..2 {
        for u in basis {
            let c = inner(g, u, &w);
            w -= u * c;
        }
    }
    let norm = inner(g, &w, &w).max(0.0).sqrt();
    if norm / orig < tol {
        return None;
    }
    Some(w / norm)
}

pub fn gram_schmidt(raw: &[DVector<f64>], chart: &MetricChart, point: &[f64]) -> Result<OrthonormalFrame> {
    let (g, _) = chart.metric_checked(point)?;
    gram_schmidt_in(raw, &g, point)
}

/// Gram-Schmidt against an explicit metric matrix.
pub fn gram_schmidt_in(raw: &[DVector<f64>], g: &DMatrix<f64>, point: &[f64]) -> Result<OrthonormalFrame> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(raw.len());
    for (i, v) in raw.iter().enumerate() {
        if v.len() != g.nrows() {
            return Err(CurvError::BadShape(format!("vector {i} has length {}, expected {}", v.len(), g.nrows())));
        }
        match orthonormalize_against(g, &out, v, RANK_TOL) {
            Some(w) => out.push(w),
            None => return Err(CurvError::DegenerateInput(format!("vector {i} is linearly dependent on its predecessors"))),
        }
    }
    Ok(OrthonormalFrame { point: point.to_vec(), metric: g.clone(), vectors: out, completion: None })
}

const COMPLETION_TOL: f64 = 1e-6;
const COMPLETION_RETRIES: u64 = 16;

/// Extends a frame to a full orthonormal basis. Coordinate axes are tried
/// first, then seeded random candidates; the original vectors are untouched.
pub fn complete_frame(frame: &OrthonormalFrame) -> Result<OrthonormalFrame> {
    let n = frame.dim();
    let m = frame.m();
    let mut all = frame.vectors.clone();
    let mut extra = Vec::with_capacity(n - m.min(n));
    let g = &frame.metric;
    for i in 0..n {
        if all.len() == n {
            break;
        }
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        if let Some(w) = orthonormalize_against(g, &all, &e, COMPLETION_TOL) {
            all.push(w.clone());
            extra.push(w);
        }
    }
    let mut attempt = 0;
    while all.len() < n {
        if attempt == COMPLETION_RETRIES {
            return Err(CurvError::DegenerateInput("frame completion candidates collapsed".into()));
        }
        let mut rng = rng_from(derive_seed(0xC0_4D1E7E, attempt));
        let e = DVector::from_vec(gaussian_vec(&mut rng, n));
        if let Some(w) = orthonormalize_against(g, &all, &e, COMPLETION_TOL) {
            all.push(w.clone());
            extra.push(w);
        }
        attempt += 1;
    }
    Ok(OrthonormalFrame { completion: Some(extra), ..frame.clone() })
}

/// Haar-distributed orthonormal `m`-frame: Gaussian coefficients in a
/// `g`-orthonormal basis, then Gram-Schmidt.
pub fn haar_random_frame(seed: u64, chart: &MetricChart, point: &[f64], m: usize) -> Result<OrthonormalFrame> {
    let (g, chol) = chart.metric_checked(point)?;
    let n = g.nrows();
    if m == 0 || m > n {
        return Err(CurvError::BadOrder { m, n, max: n });
    }
    // Columns of L^{-T} are g-orthonormal.
    let l_inv_t = chol.l().try_inverse().ok_or_else(|| CurvError::SingularMetric { point: point.to_vec() })?.transpose();
    let mut rng = rng_from(seed);
    let raw: Vec<DVector<f64>> = (0..m).map(|_| &l_inv_t * DVector::from_vec(gaussian_vec(&mut rng, n))).collect();
    gram_schmidt_in(&raw, &g, point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use std::sync::Arc;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        let a = DMatrix::from_vec(n, n, gaussian_vec(&mut rng, n * n));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn chart_with(g: DMatrix<f64>) -> MetricChart {
        let n = g.nrows();
        MetricChart::new(n, Arc::new(move |_| g.clone()))
    }

    #[test]
    fn euclidean_gram_schmidt() {
        let chart = MetricChart::euclidean(2);
        let f = gram_schmidt(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![1.0, 1.0])], &chart, &[0.0, 0.0]).unwrap();
        assert_eq!(f.vectors[0].as_slice(), &[1.0, 0.0]);
        assert!((f.vectors[1][0]).abs() < 1e-15 && (f.vectors[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn anisotropic_scaling() {
        let chart = chart_with(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])));
        let f = gram_schmidt(&[DVector::from_vec(vec![1.0, 0.0])], &chart, &[0.0, 0.0]).unwrap();
        assert!((f.vectors[0][0] - 0.5).abs() < 1e-15);
        // g-orthonormal but not Euclidean-unit
        assert!((f.vectors[0].norm() - 1.0).abs() > 0.1);
        assert!(f.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn random_spd_frames() {
        let g = random_spd(5, 1);
        let chart = chart_with(g);
        let mut rng = rng_from(2);
        let raw: Vec<_> = (0..3).map(|_| DVector::from_vec(gaussian_vec(&mut rng, 5))).collect();
        let f = gram_schmidt(&raw, &chart, &[0.0; 5]).unwrap();
        assert!(f.orthonormality_defect() < 1e-12);
        // idempotence
        let again = gram_schmidt(&f.vectors, &chart, &[0.0; 5]).unwrap();
        for (a, b) in f.vectors.iter().zip(&again.vectors) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn dependent_vectors_rejected() {
        let chart = MetricChart::euclidean(3);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let err = gram_schmidt(&[v.clone(), v * 2.0], &chart, &[0.0; 3]).unwrap_err();
        assert!(matches!(err, CurvError::DegenerateInput(_)));
    }

    #[test]
    fn completion_keeps_prefix_bitwise() {
        let chart = chart_with(random_spd(6, 9));
        let f = haar_random_frame(4, &chart, &[0.0; 6], 2).unwrap();
        let c = complete_frame(&f).unwrap();
        assert_eq!(c.vectors, f.vectors);
        assert!(c.is_completed());
        assert!(c.orthonormality_defect() < 1e-12);

        let empty = OrthonormalFrame { point: vec![0.0; 3], metric: DMatrix::identity(3, 3), vectors: vec![], completion: None };
        let full = complete_frame(&empty).unwrap();
        assert!(full.orthonormality_defect() < 1e-15);

        let e1 = gram_schmidt(&[DVector::from_vec(vec![1.0, 0.0, 0.0])], &MetricChart::euclidean(3), &[0.0; 3]).unwrap();
        let c1 = complete_frame(&e1).unwrap();
        for v in c1.completion.as_ref().unwrap() {
            assert!(v[0].abs() < 1e-15);
        }
    }

    #[test]
    fn haar_is_deterministic_and_symmetric() {
        let chart = MetricChart::euclidean(3);
        let a = haar_random_frame(7, &chart, &[0.0; 3], 2).unwrap();
        let b = haar_random_frame(7, &chart, &[0.0; 3], 2).unwrap();
        assert_eq!(a, b);
        let mut mean = [0.0; 3];
        let count = 10_000;
        for s in 0..count {
            let f = haar_random_frame(derive_seed(100, s), &chart, &[0.0; 3], 1).unwrap();
            assert!((f.vectors[0].norm() - 1.0).abs() < 1e-14);
            for k in 0..3 {
                mean[k] += f.vectors[0][k] / count as f64;
            }
        }
        for k in 0..3 {
            assert!(mean[k].abs() < 0.05, "component {k} mean {}", mean[k]);
        }
    }

    #[test]
    fn full_haar_basis_volume() {
        let g = random_spd(4, 21);
        let det_g = g.determinant();
        let chart = chart_with(g);
        let f = haar_random_frame(3, &chart, &[0.0; 4], 4).unwrap();
        let det = f.frame_matrix().determinant().abs();
        assert!((det - 1.0 / det_g.sqrt()).abs() < 1e-9);
    }
}
