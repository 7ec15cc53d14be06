use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::rng::{gaussian, Rng};

/// Which basis the tensor components refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Coordinate,
    Orthonormal,
}

/// A (0,4) tensor with the Riemann symmetries
/// `Rm(p,q,r,s) = -Rm(q,p,r,s) = -Rm(p,q,s,r) = Rm(r,s,p,q)`,
/// stored once per unordered pair of index pairs.
///
/// Sign convention: `Rm(X,Y,Z,W) = -g(D_X D_Y Z - D_Y D_X Z - D_[X,Y] Z, W)`,
/// so `Rm(e1,e2,e1,e2)` is the sectional curvature of an orthonormal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTensor {
    dim: usize,
    basis: Basis,
    /// Symmetric `npairs × npairs` matrix over pairs `p < q`; only the upper
    /// triangle is ever read.
    data: Vec<f64>,
}

fn pair_count(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

impl CurvatureTensor {
    pub fn zeros(dim: usize, basis: Basis) -> Self {
        let np = pair_count(dim);
        CurvatureTensor { dim, basis, data: vec![0.0; np * np] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    fn pair_index(&self, p: usize, q: usize) -> (usize, f64) {
        let n = self.dim;
        let (a, b, sign) = if p < q { (p, q, 1.0) } else { (q, p, -1.0) };
        // Row-major enumeration of pairs (a, b), a < b.
        let idx = a * n - a * (a + 1) / 2 + (b - a - 1);
        (idx, sign)
    }

    fn slot(&self, p: usize, q: usize, r: usize, s: usize) -> Option<(usize, f64)> {
        if p == q || r == s {
            return None;
        }
        let (i, si) = self.pair_index(p, q);
        let (j, sj) = self.pair_index(r, s);
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        Some((a * pair_count(self.dim) + b, si * sj))
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        match self.slot(p, q, r, s) {
            Some((k, sign)) => sign * self.data[k],
            None => 0.0,
        }
    }

    /// Writes `Rm(p,q,r,s) = value`; all symmetric images follow.
    pub fn set(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        if let Some((k, sign)) = self.slot(p, q, r, s) {
            self.data[k] = sign * value;
        } else {
            assert!(value == 0.0, "Rm with a repeated antisymmetric index must vanish");
        }
    }

    /// Canonicalizes a dense `n^4` array by averaging its eight symmetric images.
    pub fn from_dense(dim: usize, basis: Basis, dense: &[f64]) -> Self {
        let n = dim;
        let at = |p: usize, q: usize, r: usize, s: usize| dense[((p * n + q) * n + r) * n + s];
        let mut t = CurvatureTensor::zeros(dim, basis);
        for p in 0..n {
            for q in (p + 1)..n {
                for r in 0..n {
                    for s in (r + 1)..n {
                        let v =
                            (at(p, q, r, s) - at(q, p, r, s) - at(p, q, s, r) + at(q, p, s, r) + at(r, s, p, q) - at(s, r, p, q) - at(r, s, q, p)
                                + at(s, r, q, p))
                                / 8.0;
                        t.set(p, q, r, s, v);
                    }
                }
            }
        }
        t
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n * n * n];
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        out[((p * n + q) * n + r) * n + s] = self.get(p, q, r, s);
                    }
                }
            }
        }
        out
    }

    /// Constant sectional curvature `k` with respect to the metric `g`:
    /// `Rm_ijkl = k (g_ik g_jl - g_il g_jk)`.
    pub fn constant_curvature(k: f64, g: &DMatrix<f64>, basis: Basis) -> Self {
        let n = g.nrows();
        let mut t = CurvatureTensor::zeros(n, basis);
        for p in 0..n {
            for q in (p + 1)..n {
                for r in 0..n {
                    for s in (r + 1)..n {
                        t.set(p, q, r, s, k * (g[(p, r)] * g[(q, s)] - g[(p, s)] * g[(q, r)]));
                    }
                }
            }
        }
        t
    }

    /// `Rm(u, v, w, z)` for arbitrary vectors in this tensor's basis.
    pub fn eval(&self, u: &[f64], v: &[f64], w: &[f64], z: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let a = u[p] * v[q] - u[q] * v[p];
                if a == 0.0 {
                    continue;
                }
                for r in 0..n {
                    for s in (r + 1)..n {
                        let b = w[r] * z[s] - w[s] * z[r];
                        if b != 0.0 {
                            acc += a * b * self.get(p, q, r, s);
                        }
                    }
                }
            }
        }
        acc
    }

    /// `Rm(u, v, u, v)`.
    pub fn sectional_numerator(&self, u: &[f64], v: &[f64]) -> f64 {
        self.eval(u, v, u, v)
    }

    /// Symmetric matrix `M(v)_ac = Rm(e_a, v, e_c, v)`, so that
    /// `Rm(u, v, u, v) = uᵀ M(v) u`.
    pub fn jacobi_matrix(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for c in a..n {
                let mut acc = 0.0;
                for b in 0..n {
                    if v[b] == 0.0 {
                        continue;
                    }
                    for d in 0..n {
                        acc += self.get(a, b, c, d) * v[b] * v[d];
                    }
                }
                m[(a, c)] = acc;
                m[(c, a)] = acc;
            }
        }
        m
    }

    /// Components in the basis given by the columns of `e`:
    /// `R'_abcd = R_ijkl e_ia e_jb e_kc e_ld`.
    pub fn change_basis(&self, e: &DMatrix<f64>, basis: Basis) -> Self {
        let n = self.dim;
        let k = e.ncols();
        assert_eq!(e.nrows(), n);
        let src = self.to_dense();
        // Contract one slot at a time; each pass moves the transformed index to the front.
        let mut cur = src;
        let mut dims = [n, n, n, n];
        for _ in 0..4 {
            let [d0, d1, d2, d3] = dims;
            let mut next = vec![0.0; d1 * d2 * d3 * k];
            // cur indexed [i][j][l][m] with i contracted; next indexed [j][l][m][a].
            for i in 0..d0 {
                for j in 0..d1 {
                    for l in 0..d2 {
                        for m in 0..d3 {
                            let v = cur[((i * d1 + j) * d2 + l) * d3 + m];
                            if v == 0.0 {
                                continue;
                            }
                            let base = ((j * d2 + l) * d3 + m) * k;
                            for a in 0..k {
                                next[base + a] += v * e[(i, a)];
                            }
                        }
                    }
                }
            }
            cur = next;
            dims = [d1, d2, d3, k];
        }
        CurvatureTensor::from_dense(k, basis, &cur)
    }

    /// Conjugation by an orthogonal matrix (rows of `q` act on indices).
    pub fn rotate(&self, q: &DMatrix<f64>) -> Self {
        self.change_basis(&q.transpose(), self.basis)
    }

    /// `Ric_bd = g^{ac} Rm_abcd`.
    pub fn ricci(&self, g_inv: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut ric = DMatrix::zeros(n, n);
        for b in 0..n {
            for d in b..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        let gi = g_inv[(a, c)];
                        if gi != 0.0 {
                            acc += gi * self.get(a, b, c, d);
                        }
                    }
                }
                ric[(b, d)] = acc;
                ric[(d, b)] = acc;
            }
        }
        ric
    }

    pub fn ricci_orthonormal(&self) -> DMatrix<f64> {
        self.ricci(&DMatrix::identity(self.dim, self.dim))
    }

    pub fn scalar(&self, g_inv: &DMatrix<f64>) -> f64 {
        let ric = self.ricci(g_inv);
        ric.component_mul(g_inv).sum()
    }

    /// Largest first-Bianchi defect `|Rm(p,q,r,s) + Rm(q,r,p,s) + Rm(r,p,q,s)|`.
    pub fn bianchi_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let c = self.get(p, q, r, s) + self.get(q, r, p, s) + self.get(r, p, q, s);
                        worst = worst.max(c.abs());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        out
    }

    /// Generic algebraic curvature tensor: a Gaussian 4-array projected onto
    /// the pair symmetries, then onto the kernel of the Bianchi map.
    pub fn random_algebraic(dim: usize, rng: &mut Rng) -> Self {
        let n = dim;
        let raw: Vec<f64> = (0..n * n * n * n).map(|_| gaussian(rng)).collect();
        let sym = CurvatureTensor::from_dense(n, Basis::Orthonormal, &raw);
        let mut out = CurvatureTensor::zeros(n, Basis::Orthonormal);
        for p in 0..n {
            for q in (p + 1)..n {
                for r in 0..n {
                    for s in (r + 1)..n {
                        let cyc = sym.get(p, q, r, s) + sym.get(q, r, p, s) + sym.get(r, p, q, s);
                        out.set(p, q, r, s, sym.get(p, q, r, s) - cyc / 3.0);
                    }
                }
            }
        }
        out
    }

    /// Gauss-equation term `h(a,c)h(b,d) - h(a,d)h(b,c)` as a tensor.
    pub fn gauss_product(h: &DMatrix<f64>) -> Self {
        let n = h.nrows();
        let mut t = CurvatureTensor::zeros(n, Basis::Orthonormal);
        for a in 0..n {
            for b in (a + 1)..n {
                for c in 0..n {
                    for d in (c + 1)..n {
                        t.set(a, b, c, d, h[(a, c)] * h[(b, d)] - h[(a, d)] * h[(b, c)]);
                    }
                }
            }
        }
        t
    }

    /// Restriction to the indices `from..dim`.
    pub fn restrict_tail(&self, from: usize) -> Self {
        let k = self.dim - from;
        let mut t = CurvatureTensor::zeros(k, self.basis);
        for p in 0..k {
            for q in (p + 1)..k {
                for r in 0..k {
                    for s in (r + 1)..k {
                        t.set(p, q, r, s, self.get(p + from, q + from, r + from, s + from));
                    }
                }
            }
        }
        t
    }
}

#[allow(dead_code)]
pub(crate) fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    #[test]
    fn round_sphere_sign_is_positive() {
        let t = CurvatureTensor::constant_curvature(1.0, &DMatrix::identity(2, 2), Basis::Orthonormal);
        assert_eq!(t.get(0, 1, 0, 1), 1.0);
        assert_eq!(t.get(1, 0, 0, 1), -1.0);
    }

    proptest! {
        #[test]
        fn storage_symmetries_are_exact(p in 0usize..5, q in 0usize..5, r in 0usize..5, s in 0usize..5, v in -10.0f64..10.0) {
            let mut t = CurvatureTensor::zeros(5, Basis::Orthonormal);
            t.set(p, q, r, s, if p == q || r == s { 0.0 } else { v });
            prop_assert_eq!(t.get(r, s, q, p), -t.get(p, q, r, s));
            prop_assert_eq!(t.get(q, p, r, s), -t.get(p, q, r, s));
            prop_assert_eq!(t.get(p, q, s, r), -t.get(p, q, r, s));
            prop_assert_eq!(t.get(r, s, p, q), t.get(p, q, r, s));
        }
    }

    #[test]
    fn random_algebraic_satisfies_bianchi() {
        let mut rng = rng_from(3);
        for n in 2..=6 {
            let t = CurvatureTensor::random_algebraic(n, &mut rng);
            assert!(t.bianchi_defect() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn change_basis_identity_and_rotation() {
        let mut rng = rng_from(11);
        let t = CurvatureTensor::random_algebraic(4, &mut rng);
        let same = t.change_basis(&DMatrix::identity(4, 4), Basis::Orthonormal);
        for (a, b) in t.to_dense().iter().zip(same.to_dense()) {
            assert!((a - b).abs() < 1e-14);
        }
        let theta: f64 = 0.3;
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = theta.cos();
        q[(0, 1)] = -theta.sin();
        q[(1, 0)] = theta.sin();
        q[(1, 1)] = theta.cos();
        let rt = t.rotate(&q);
        let g = DMatrix::identity(4, 4);
        assert!((rt.scalar(&g) - t.scalar(&g)).abs() < 1e-12);
        assert!(rt.bianchi_defect() < 1e-12);
    }

    #[test]
    fn jacobi_matrix_quadratic_form() {
        let mut rng = rng_from(5);
        let t = CurvatureTensor::random_algebraic(5, &mut rng);
        let u: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let v: Vec<f64> = (0..5).map(|i| (i as f64 * 1.3).cos()).collect();
        let m = t.jacobi_matrix(&v);
        let uu = DVector::from_column_slice(&u);
        let q = (uu.transpose() * &m * &uu)[(0, 0)];
        assert!((q - t.sectional_numerator(&u, &v)).abs() < 1e-12);
    }
}
