//! Trigonometric interpolation of periodic grid data, with derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::grid::{Axis, BaseGrid};
use crate::error::{CurvError, Result};

fn fft(data: &[f64]) -> Vec<Complex64> {
    let n = data.len();
    let mut buf: Vec<Complex64> = data.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| c / n as f64).collect()
}

/// Signed wave number of FFT bin `k` and its weight (½ for the Nyquist bin,
/// which is split between `±n/2`).
fn wave(k: usize, n: usize) -> (f64, f64) {
    if 2 * k == n {
        (k as f64, 0.5)
    } else if 2 * k < n {
        (k as f64, 1.0)
    } else {
        (k as f64 - n as f64, 1.0)
    }
}

/// Values of `Σ_k c_k e^{i ω_k t}` and its first two derivatives.
fn eval_series(coef: &[Complex64], axis: &Axis, t: f64) -> [f64; 3] {
    let n = coef.len();
    let scale = 2.0 * PI / (axis.hi - axis.lo);
    let s = t - axis.lo;
    let mut out = [0.0; 3];
    for (k, c) in coef.iter().enumerate() {
        let (kk, w) = wave(k, n);
        let om = kk * scale;
        let add = |out: &mut [f64; 3], om: f64, w: f64| {
            let e = Complex64::from_polar(1.0, om * s) * c * w;
            out[0] += e.re;
            out[1] += (e * Complex64::new(0.0, om)).re;
            out[2] -= om * om * e.re;
        };
        add(&mut out, om, w);
        if w == 0.5 {
            add(&mut out, -om, 0.5);
        }
    }
    out
}

/// Spectral derivative along the first axis of a 2-D periodic field.
fn derivative_x(f: &[f64], nx: usize, ny: usize, lx: f64, order: u32) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    for j in 0..ny {
        let mut buf: Vec<Complex64> = (0..nx).map(|i| Complex64::new(f[i * ny + j], 0.0)).collect();
        fwd.process(&mut buf);
        for (k, b) in buf.iter_mut().enumerate() {
            let (kk, w) = wave(k, nx);
            let om = Complex64::new(0.0, kk * 2.0 * PI / lx);
            // odd derivatives of the Nyquist mode vanish at grid points
            let factor = if w == 0.5 && order % 2 == 1 { Complex64::new(0.0, 0.0) } else { om.powu(order) };
            *b *= factor / nx as f64;
        }
        inv.process(&mut buf);
        for i in 0..nx {
            out[i * ny + j] = buf[i].re;
        }
    }
    out
}

/// `(f, f_x, f_y, f_xx, f_xy, f_yy)`.
pub type Jet2 = [f64; 6];

/// Trigonometric interpolant of a field on a 2-D periodic grid.
///
/// Evaluation at a grid column `x = x_i` costs `O(n_y)`: the column series of
/// `f`, `f_x` and `f_xx` are precomputed. Off-column points fall back to the
/// full double sum.
#[derive(Debug, Clone)]
pub struct SpectralField2 {
    ax: Axis,
    ay: Axis,
    columns: [Vec<Vec<Complex64>>; 3],
    full: Vec<Vec<Complex64>>,
}

impl SpectralField2 {
    pub fn new(grid: &BaseGrid, f: &[f64]) -> Result<Self> {
        if grid.dim() != 2 || !grid.axes.iter().all(|a| a.periodic) || f.len() != grid.len() {
            return Err(CurvError::BadShape("spectral interpolation needs a periodic 2-D grid".into()));
        }
        let (ax, ay) = (grid.axes[0], grid.axes[1]);
        let (nx, ny) = (ax.n, ay.n);
        let lx = ax.hi - ax.lo;
        let fx = derivative_x(f, nx, ny, lx, 1);
        let fxx = derivative_x(f, nx, ny, lx, 2);
        let col = |g: &[f64]| -> Vec<Vec<Complex64>> { (0..nx).map(|i| fft(&g[i * ny..(i + 1) * ny])).collect() };
        let columns = [col(f), col(&fx), col(&fxx)];
        // full 2-D coefficients: FFT along x of the column coefficients
        let mut full = vec![vec![Complex64::new(0.0, 0.0); ny]; nx];
        let fwd = FftPlanner::new().plan_fft_forward(nx);
        for ky in 0..ny {
            let mut buf: Vec<Complex64> = (0..nx).map(|i| columns[0][i][ky]).collect();
            fwd.process(&mut buf);
            for kx in 0..nx {
                full[kx][ky] = buf[kx] / nx as f64;
            }
        }
        Ok(SpectralField2 { ax, ay, columns, full })
    }

    fn column_of(&self, x: f64) -> Option<usize> {
        let h = self.ax.step();
        let t = (x - self.ax.lo) / h;
        let i = t.round();
        ((t - i).abs() < 1e-9).then(|| (i as isize).rem_euclid(self.ax.n as isize) as usize)
    }

    pub fn jet(&self, x: f64, y: f64) -> Jet2 {
        if let Some(i) = self.column_of(x) {
            let f = eval_series(&self.columns[0][i], &self.ay, y);
            let fx = eval_series(&self.columns[1][i], &self.ay, y);
            let fxx = eval_series(&self.columns[2][i], &self.ay, y);
            return [f[0], fx[0], f[1], fxx[0], fx[1], f[2]];
        }
        self.jet_full(x, y)
    }

    pub fn jet_full(&self, x: f64, y: f64) -> Jet2 {
        let (nx, ny) = (self.ax.n, self.ay.n);
        let (sx, sy) = (2.0 * PI / (self.ax.hi - self.ax.lo), 2.0 * PI / (self.ay.hi - self.ay.lo));
        let (dx, dy) = (x - self.ax.lo, y - self.ay.lo);
        let mut out = [0.0; 6];
        for kx in 0..nx {
            let (wx, cx) = wave(kx, nx);
            let xs: &[f64] = if cx == 0.5 { &[1.0, -1.0] } else { &[1.0] };
            for &sgx in xs {
                let ox = sgx * wx * sx;
                let ex = Complex64::from_polar(cx, ox * dx);
                for ky in 0..ny {
                    let (wy, cy) = wave(ky, ny);
                    let ys: &[f64] = if cy == 0.5 { &[1.0, -1.0] } else { &[1.0] };
                    for &sgy in ys {
                        let oy = sgy * wy * sy;
                        let e = ex * Complex64::from_polar(cy, oy * dy) * self.full[kx][ky];
                        let i = Complex64::new(0.0, 1.0);
                        out[0] += e.re;
                        out[1] += (e * i * ox).re;
                        out[2] += (e * i * oy).re;
                        out[3] -= ox * ox * e.re;
                        out[4] -= ox * oy * e.re;
                        out[5] -= oy * oy * e.re;
                    }
                }
            }
        }
        out
    }
}

/// Trigonometric interpolant on a 1-D periodic grid.
#[derive(Debug, Clone)]
pub struct SpectralField1 {
    axis: Axis,
    coef: Arc<Vec<Complex64>>,
}

impl SpectralField1 {
    pub fn new(axis: Axis, f: &[f64]) -> Result<Self> {
        if !axis.periodic || f.len() != axis.n {
            return Err(CurvError::BadShape("spectral interpolation needs a periodic axis".into()));
        }
        Ok(SpectralField1 { axis, coef: Arc::new(fft(f)) })
    }

    /// `(f, f', f'')`.
    pub fn jet(&self, t: f64) -> [f64; 3] {
        eval_series(&self.coef, &self.axis, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(x: f64, y: f64) -> Jet2 {
        let (a, b) = (2.0 * PI * x, 4.0 * PI * y);
        let f = a.sin() * b.cos() + 0.3 * (a + b).cos();
        let fx = 2.0 * PI * (a.cos() * b.cos() - 0.3 * (a + b).sin());
        let fy = 4.0 * PI * (-a.sin() * b.sin() - 0.3 * (a + b).sin());
        let fxx = -4.0 * PI * PI * (a.sin() * b.cos() + 0.3 * (a + b).cos());
        let fxy = 8.0 * PI * PI * (-a.cos() * b.sin() - 0.3 * (a + b).cos());
        let fyy = -16.0 * PI * PI * (a.sin() * b.cos() + 0.3 * (a + b).cos());
        [f, fx, fy, fxx, fxy, fyy]
    }

    #[test]
    fn interpolates_trig_polynomials_exactly() {
        let g = BaseGrid::unit_torus(2, 16);
        let f = g.sample(|p| field(p[0], p[1])[0]);
        let s = SpectralField2::new(&g, &f).unwrap();
        for (x, y) in [(0.25, 0.123), (0.3, 0.77), (0.0625 * 3.0, 0.5)] {
            let exact = field(x, y);
            for (a, b) in s.jet(x, y).iter().zip(exact) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
            for (a, b) in s.jet_full(x, y).iter().zip(exact) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn one_dimensional() {
        let axis = Axis::periodic(12, 0.0, 2.0);
        let f: Vec<f64> = (0..12).map(|i| (PI * axis.coord(i)).cos()).collect();
        let s = SpectralField1::new(axis, &f).unwrap();
        let j = s.jet(0.3);
        assert!((j[0] - (0.3 * PI).cos()).abs() < 1e-12);
        assert!((j[1] + PI * (0.3 * PI).sin()).abs() < 1e-11);
        assert!((j[2] + PI * PI * (0.3 * PI).cos()).abs() < 1e-10);
    }
}
