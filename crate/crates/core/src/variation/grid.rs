use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CurvError, Result};

/// One base-grid axis. Periodic axes sample `lo + i·h`; interval axes sample
/// cell centers `lo + (i + ½)·h` and carry zero-flux boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn periodic(n: usize, lo: f64, hi: f64) -> Self {
        Axis { n, lo, hi, periodic: true }
    }

    pub fn interval(n: usize, lo: f64, hi: f64) -> Self {
        Axis { n, lo, hi, periodic: false }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        let off = if self.periodic { 0.0 } else { 0.5 };
        self.lo + (i as f64 + off) * self.step()
    }

    /// Index for stencil access: wraps on periodic axes, reflects (even
    /// extension about the cell face) on interval axes.
    pub fn stencil_index(&self, i: isize) -> usize {
        let n = self.n as isize;
        if self.periodic {
            i.rem_euclid(n) as usize
        } else {
            let mut j = i;
            loop {
                if j < 0 {
                    j = -j - 1;
                } else if j >= n {
                    j = 2 * n - 1 - j;
                } else {
                    return j as usize;
                }
            }
        }
    }

    /// Neighbor across an edge, `None` across an interval boundary.
    pub fn neighbor(&self, i: usize, off: isize) -> Option<usize> {
        let j = i as isize + off;
        if self.periodic {
            Some(j.rem_euclid(self.n as isize) as usize)
        } else if (0..self.n as isize).contains(&j) {
            Some(j as usize)
        } else {
            None
        }
    }
}

/// Uniform product grid, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseGrid {
    pub axes: Vec<Axis>,
}

impl BaseGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(CurvError::BadShape("grid needs at least one axis".into()));
        }
        for a in &axes {
            if a.n < 4 || a.hi.is_nan() || a.lo.is_nan() || a.hi <= a.lo {
                return Err(CurvError::BadShape(format!("bad axis {a:?}: need n ≥ 4 and hi > lo")));
            }
        }
        Ok(BaseGrid { axes })
    }

    /// `R^dim` periodic grid on the unit torus.
    pub fn unit_torus(dim: usize, r: usize) -> Self {
        BaseGrid { axes: vec![Axis::periodic(r, 0.0, 1.0); dim] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.n).product()
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.axes[a].n;
            flat /= self.axes[a].n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.n + i)
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat).iter().zip(&self.axes).map(|(i, a)| a.coord(*i)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step()).product()
    }

    /// Flat index of the cell offset by `off` along `axis`, with stencil
    /// wrapping/reflection.
    pub fn offset(&self, flat: usize, axis: usize, off: isize) -> usize {
        let ax = &self.axes[axis];
        let stride = self.stride(axis);
        let i = (flat / stride) % ax.n;
        let j = ax.stencil_index(i as isize + off);
        flat + j * stride - i * stride
    }

    pub fn edge_neighbor(&self, flat: usize, axis: usize, off: isize) -> Option<usize> {
        let ax = &self.axes[axis];
        let stride = self.stride(axis);
        let i = (flat / stride) % ax.n;
        ax.neighbor(i, off).map(|j| flat + j * stride - i * stride)
    }

    /// Fourth-order central first derivative along `axis`.
    pub fn d1(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let h = self.axes[axis].step();
        (0..f.len())
            .map(|c| {
                let at = |o: isize| f[self.offset(c, axis, o)];
                (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h)
            })
            .collect()
    }

    /// Fourth-order central second derivative along `axis`.
    pub fn d2(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let h = self.axes[axis].step();
        (0..f.len())
            .map(|c| {
                let at = |o: isize| f[self.offset(c, axis, o)];
                (-at(-2) + 16.0 * at(-1) - 30.0 * at(0) + 16.0 * at(1) - at(2)) / (12.0 * h * h)
            })
            .collect()
    }

    /// Samples a function of the base coordinates.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|c| f(&self.coords(c))).collect()
    }

    /// Cyclic shift by `k` cells along a periodic axis.
    pub fn shift(&self, f: &[f64], axis: usize, k: isize) -> Vec<f64> {
        (0..f.len()).map(|c| f[self.offset(c, axis, k)]).collect()
    }
}

const MAGIC: &[u8; 8] = b"CVLGRID1";

/// Binary little-endian grid dump: magic, base dimension, per-axis
/// `(n: u64, lo: f64, hi: f64, periodic: u8)`, height axis (`u32`), then the
/// row-major `f64` heights.
pub fn write_grid_dump<W: Write>(mut w: W, grid: &BaseGrid, height_axis: usize, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(CurvError::BadShape(format!("{} values for a grid of {}", values.len(), grid.len())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for a in &grid.axes {
        w.write_all(&(a.n as u64).to_le_bytes())?;
        w.write_all(&a.lo.to_le_bytes())?;
        w.write_all(&a.hi.to_le_bytes())?;
        w.write_all(&[a.periodic as u8])?;
    }
    w.write_all(&(height_axis as u32).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_dump<R: Read>(mut r: R) -> Result<(BaseGrid, usize, Vec<f64>)> {
    fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)?;
        Ok(b)
    }
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(CurvError::Io("not a grid dump".into()));
    }
    let dim = u32::from_le_bytes(take(&mut r)?) as usize;
    if dim == 0 || dim > 8 {
        return Err(CurvError::Io(format!("implausible grid dimension {dim}")));
    }
    let mut axes = Vec::with_capacity(dim);
    for _ in 0..dim {
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let lo = f64::from_le_bytes(take(&mut r)?);
        let hi = f64::from_le_bytes(take(&mut r)?);
        let periodic = take::<1, _>(&mut r)?[0] != 0;
        axes.push(Axis { n, lo, hi, periodic });
    }
    let grid = BaseGrid::new(axes)?;
    let height_axis = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(f64::from_le_bytes(take(&mut r)?));
    }
    Ok((grid, height_axis, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fourth_order_derivatives() {
        let mut errs = vec![];
        for r in [32, 64] {
            let g = BaseGrid::unit_torus(2, r);
            let f = g.sample(|x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
            let d = g.d1(&f, 0);
            let dd = g.d2(&f, 1);
            let mut e: f64 = 0.0;
            for c in 0..g.len() {
                let x = g.coords(c);
                let exact = 2.0 * PI * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos();
                let exact2 = -4.0 * PI * PI * f[c];
                e = e.max((d[c] - exact).abs()).max((dd[c] - exact2).abs() / (2.0 * PI));
            }
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.8, "order {order}");
    }

    #[test]
    fn reflection_is_even() {
        let a = Axis::interval(6, 0.0, 1.0);
        assert_eq!(a.stencil_index(-1), 0);
        assert_eq!(a.stencil_index(-2), 1);
        assert_eq!(a.stencil_index(6), 5);
        assert_eq!(a.stencil_index(7), 4);
        assert_eq!(a.neighbor(5, 1), None);
        let p = Axis::periodic(6, 0.0, 1.0);
        assert_eq!(p.stencil_index(-1), 5);
        assert_eq!(p.neighbor(5, 1), Some(0));
    }

    #[test]
    fn flatten_roundtrip() {
        let g = BaseGrid::new(vec![Axis::periodic(5, 0.0, 1.0), Axis::interval(7, 0.0, 2.0), Axis::periodic(4, 0.0, 1.0)]).unwrap();
        for c in 0..g.len() {
            assert_eq!(g.flatten(&g.unflatten(c)), c);
        }
        assert_eq!(g.offset(0, 1, -1), 0);
        assert_eq!(g.offset(0, 0, -1), g.flatten(&[4, 0, 0]));
    }

    #[test]
    fn dump_roundtrip() {
        let g = BaseGrid::new(vec![Axis::periodic(4, 0.0, 1.0), Axis::interval(5, 0.0, 3.0)]).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut buf = Vec::new();
        write_grid_dump(&mut buf, &g, 2, &v).unwrap();
        let (g2, h, v2) = read_grid_dump(buf.as_slice()).unwrap();
        assert_eq!((g2, h, v2), (g, 2, v));
        assert!(read_grid_dump(&b"garbage!"[..]).is_err());
    }
}
