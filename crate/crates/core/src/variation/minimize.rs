use serde::{Deserialize, Serialize};

use super::operator::{assemble_from_geometry, pcg};
use super::surface::{sup_norm, DiscreteHypersurface, SurfaceGeometry};
use super::weight::WeightField;
use crate::error::Result;
use crate::rng::{derive_seed, rng_from, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeAreaOptions {
    /// Stop when the critical residual sup-norm drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Random smooth test functions for the stability spot check.
    pub spot_checks: usize,
    pub seed: u64,
}

impl Default for MinimizeAreaOptions {
    fn default() -> Self {
        MinimizeAreaOptions { tol: 1e-6, max_iters: 200, spot_checks: 50, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub surface: DiscreteHypersurface,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// `min_f Q(f) / ⟨f, f⟩_ρ` over the spot-check functions.
    pub spot_check_min: f64,
    pub stable: bool,
}

/// Low-frequency random test function on the base grid: cosine/sine modes
/// (periodic axes) or Neumann cosines (interval axes), up to wave number 3.
pub fn random_smooth_function(hs: &DiscreteHypersurface, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let grid = &hs.grid;
    let k = grid.dim();
    let modes: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..4)
        .map(|_| {
            let freq: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.0, 3.999).floor()).collect();
            let phase: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.0, std::f64::consts::TAU)).collect();
            (freq, phase, uniform(&mut rng, -1.0, 1.0))
        })
        .collect();
    let c0 = uniform(&mut rng, -1.0, 1.0);
    (0..grid.len())
        .map(|c| {
            let x = grid.coords(c);
            let mut v = c0;
            for (freq, phase, amp) in &modes {
                let mut term = *amp;
                for a in 0..k {
                    let ax = &grid.axes[a];
                    let t = (x[a] - ax.lo) / (ax.hi - ax.lo);
                    term *=
                        if ax.periodic { (std::f64::consts::TAU * freq[a] * t + phase[a]).cos() } else { (std::f64::consts::PI * freq[a] * t).cos() };
                }
                v += term;
            }
            v
        })
        .collect()
}

/// `min_f Q(f)/⟨f,f⟩_ρ` over `count` random smooth test functions.
pub fn stability_spot_check(hs: &DiscreteHypersurface, geom: &SurfaceGeometry, rho: &WeightField, count: usize, seed: u64) -> Result<f64> {
    let op = assemble_from_geometry(hs, geom, rho)?;
    Ok((0..count)
        .map(|i| {
            let f = random_smooth_function(hs, derive_seed(seed, i as u64));
            op.quadratic_form(&f) / op.inner(&f, &f)
        })
        .fold(f64::INFINITY, f64::min))
}

/// Damped Newton iteration on the critical residual `R = H + ⟨D log ρ, ν⟩`.
///
/// Each step solves `(K − MP + μM) g = −M R` by CG and moves the graph with
/// normal speed `g` (`u ← u + W g`). The damping `μ` starts above `max P`, so
/// the first system is positive definite, shrinks by 4 after each accepted
/// step and grows by 4 after a rejected one.
pub fn minimize_weighted_area(hs0: &DiscreteHypersurface, rho: &WeightField, opts: &MinimizeAreaOptions) -> Result<MinimizeOutcome> {
    let mut hs = hs0.clone();
    let mut geom = hs.geometry()?;
    let mut res = geom.critical_residual(rho)?;
    let mut rnorm = sup_norm(&res);
    let mut mu: Option<f64> = None;
    let mut iters = 0;
    while rnorm >= opts.tol && iters < opts.max_iters {
        iters += 1;
        let op = assemble_from_geometry(&hs, &geom, rho)?;
        let m = mu.get_or_insert(op.descriptor.potential_max.max(0.0) + 1.0);
        let n = op.len();
        let kdiag = op.stiffness.diag();
        let mut accepted = false;
        for _ in 0..12 {
            let shift: Vec<f64> = (0..n).map(|i| op.mass[i] * (*m - op.potential[i])).collect();
            let diag: Vec<f64> = (0..n).map(|i| kdiag[i] + shift[i]).collect();
            let b: Vec<f64> = (0..n).map(|i| -op.mass[i] * res[i]).collect();
            let mut g = vec![0.0; n];
            let out = pcg(
                |x| {
                    let kx = op.stiffness.matvec(x);
                    (0..n).map(|i| kx[i] + shift[i] * x[i]).collect()
                },
                &diag,
                &b,
                &mut g,
                1e-10,
                5000,
            );
            if out.indefinite || diag.iter().any(|d| *d <= 0.0) {
                *m *= 4.0;
                continue;
            }
            let mut step = 1.0;
            for _ in 0..4 {
                let trial = hs.normal_variation(&geom, step, &g);
                let tg = trial.geometry()?;
                let tr = tg.critical_residual(rho)?;
                let tn = sup_norm(&tr);
                if tn < rnorm {
                    hs = trial;
                    geom = tg;
                    res = tr;
                    rnorm = tn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                *m = (*m / 4.0).max(1e-8);
                break;
            }
            *m *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let spot = stability_spot_check(&hs, &geom, rho, opts.spot_checks, opts.seed)?;
    Ok(MinimizeOutcome { surface: hs, converged: rnorm < opts.tol, iterations: iters, residual: rnorm, spot_check_min: spot, stable: spot >= -1e-6 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_chart, flat_torus_chart, TrigTerm};
    use crate::variation::grid::BaseGrid;
    use std::f64::consts::PI;

    #[test]
    fn flat_graph_flattens() {
        let hs = DiscreteHypersurface::graph(flat_torus_chart(&[1.0; 3]), BaseGrid::unit_torus(2, 32), 2, |x| 0.5 + 0.2 * (2.0 * PI * x[0]).sin())
            .unwrap();
        let out = minimize_weighted_area(&hs, &WeightField::unit(), &MinimizeAreaOptions::default()).unwrap();
        assert!(out.converged, "residual {}", out.residual);
        let mean = out.surface.height.iter().sum::<f64>() / out.surface.height.len() as f64;
        assert!(out.surface.height.iter().all(|u| (u - mean).abs() < 1e-6));
        assert!((out.surface.geometry().unwrap().area() - 1.0).abs() < 1e-10);
        assert!(out.stable);
    }

    #[test]
    fn settles_at_weight_minimum() {
        let eps = 0.3;
        let rho = WeightField::exp_trig(vec![TrigTerm { amplitude: eps, wave: vec![0.0, 0.0, 1.0], phase: 0.0 }], &[Some(1.0); 3]);
        let hs = DiscreteHypersurface::level(flat_torus_chart(&[1.0; 3]), BaseGrid::unit_torus(2, 16), 2, 0.35).unwrap();
        let out = minimize_weighted_area(&hs, &rho, &MinimizeAreaOptions::default()).unwrap();
        assert!(out.converged);
        // 1-D reduction: ∂_z log ρ = −2πε sin 2πz vanishes at z = ½ (the stable level)
        assert!(out.surface.height.iter().all(|u| (u - 0.5).abs() < 1e-6), "{}", out.surface.height[0]);
        assert!(out.stable);
    }

    #[test]
    fn conformal_torus_minimizer() {
        let chart = build_chart(&"conformal(torus(3), [0.05, [0,0,1], 0.0], [0.05, [0,1,0], 0.0], [0.03, [1,0,1], 0.4])".parse().unwrap()).unwrap();
        let hs = DiscreteHypersurface::level(chart, BaseGrid::unit_torus(2, 32), 2, 0.4).unwrap();
        let out = minimize_weighted_area(&hs, &WeightField::unit(), &MinimizeAreaOptions::default()).unwrap();
        assert!(out.converged, "residual {} after {}", out.residual, out.iterations);
        assert!(out.stable, "{}", out.spot_check_min);
    }
}
