//! Finite-difference cross-checks of the variation formulas and the
//! scenario families they run on.

use serde::{Deserialize, Serialize};

use super::grid::BaseGrid;
use super::minimize::random_smooth_function;
use super::operator::second_variation;
use super::surface::DiscreteHypersurface;
use super::weight::{LogJet, WeightField};
use crate::error::Result;
use crate::geometry::MetricChart;
use crate::models::{build_chart, ModelSpec, TrigTerm};
use crate::rng::{derive_seed, rng_from, uniform, Rng};

use std::f64::consts::TAU;
use std::sync::Arc;

/// Step for the first-variation difference quotient.
pub const FIRST_STEP: f64 = 1e-4;
/// Step for the second-variation difference quotient.
pub const SECOND_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub surface: DiscreteHypersurface,
    pub weight: WeightField,
    pub speed: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdComparison {
    pub formula: f64,
    pub finite_difference: f64,
    /// Scale used for the relative error.
    pub scale: f64,
    pub relative_error: f64,
}

fn compare(formula: f64, fd: f64, scale: f64) -> FdComparison {
    let scale = scale.max(f64::MIN_POSITIVE);
    FdComparison { formula, finite_difference: fd, scale, relative_error: (fd - formula).abs() / scale }
}

/// Weighted area along `s ↦ u + s f W` at the given offsets.
fn area_along(sc: &Scenario, steps: &[f64]) -> Result<Vec<f64>> {
    let geom = sc.surface.geometry()?;
    steps.iter().map(|s| sc.surface.normal_variation(&geom, *s, &sc.speed).geometry()?.weighted_area(&sc.weight)).collect()
}

/// First variation against the fourth-order central difference
/// `(−A(2s) + 8A(s) − 8A(−s) + A(−2s)) / 12s`.
///
/// The relative error is measured against `max(|formula|, ∫ρ|f||R| dμ)`, so
/// surfaces that are (nearly) critical are not judged against a vanishing
/// denominator.
pub fn first_variation_check(sc: &Scenario, s: f64) -> Result<FdComparison> {
    let geom = sc.surface.geometry()?;
    let formula = geom.first_variation(&sc.weight, &sc.speed)?;
    let res = geom.critical_residual(&sc.weight)?;
    let w = geom.weights(&sc.weight)?;
    let absolute: f64 = (0..res.len()).map(|i| w[i] * (sc.speed[i] * res[i]).abs() * geom.cells[i].area).sum();
    let a = area_along(sc, &[2.0 * s, s, -s, -2.0 * s])?;
    let fd = (-a[0] + 8.0 * a[1] - 8.0 * a[2] + a[3]) / (12.0 * s);
    Ok(compare(formula, fd, formula.abs().max(absolute)))
}

/// Second variation at a critical surface against
/// `(−A(2s) + 16A(s) − 30A(0) + 16A(−s) − A(−2s)) / 12s²`.
pub fn second_variation_check(sc: &Scenario, s: f64) -> Result<FdComparison> {
    let formula = second_variation(&sc.surface, &sc.weight, &sc.speed)?;
    let a = area_along(sc, &[2.0 * s, s, 0.0, -s, -2.0 * s])?;
    let fd = (-a[0] + 16.0 * a[1] - 30.0 * a[2] + 16.0 * a[3] - a[4]) / (12.0 * s * s);
    Ok(compare(formula, fd, formula.abs()))
}

/// Least-squares slope of `log err` against `log h`.
pub fn convergence_order(resolutions: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = resolutions.iter().map(|r| (1.0 / *r as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn random_terms(rng: &mut Rng, dim: usize, count: usize, amp: f64, max_wave: f64) -> Vec<TrigTerm> {
    (0..count)
        .map(|_| TrigTerm {
            amplitude: uniform(rng, -amp, amp),
            wave: (0..dim).map(|_| uniform(rng, 0.0, max_wave + 0.999).floor()).collect(),
            phase: uniform(rng, 0.0, TAU),
        })
        .collect()
}

/// Random trig polynomial on the unit 2-torus, as closure parameters.
fn random_graph(rng: &mut Rng) -> (f64, Vec<(f64, f64, f64, f64)>) {
    let base = uniform(rng, 0.0, 1.0);
    let modes = (0..3)
        .map(|_| (uniform(rng, -0.04, 0.04), uniform(rng, 0.0, 1.999).floor(), uniform(rng, 0.0, 1.999).floor(), uniform(rng, 0.0, TAU)))
        .collect();
    (base, modes)
}

fn random_ambient(rng: &mut Rng) -> (ModelSpec, MetricChart) {
    let spec = if uniform(rng, 0.0, 1.0) < 0.25 {
        ModelSpec::torus(3)
    } else {
        ModelSpec::conformal(ModelSpec::torus(3), random_terms(rng, 3, 3, 0.05, 1.0))
    };
    let chart = build_chart(&spec).expect("valid random spec");
    (spec, chart)
}

/// Random graphs over the unit 2-torus in flat or conformally perturbed
/// `T³`, random positive weights and random smooth speeds.
pub fn first_variation_scenarios(r: usize, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    (0..count)
        .map(|i| {
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let (spec, chart) = random_ambient(&mut rng);
            let (base, modes) = random_graph(&mut rng);
            let weight =
                if i % 5 == 0 { WeightField::unit() } else { WeightField::exp_trig(random_terms(&mut rng, 3, 3, 0.2, 1.0), &[Some(1.0); 3]) };
            let surface = DiscreteHypersurface::graph(chart, BaseGrid::unit_torus(2, r), 2, |x| {
                base + modes.iter().map(|(a, kx, ky, ph)| a * (TAU * (kx * x[0] + ky * x[1]) + ph).cos()).sum::<f64>()
            })?;
            let speed = random_smooth_function(&surface, rng_seed(&mut rng));
            Ok(Scenario { label: format!("graph in {spec}, weight {}", weight.label()), surface, weight, speed })
        })
        .collect()
}

fn rng_seed(rng: &mut Rng) -> u64 {
    (uniform(rng, 0.0, 1.0) * 2f64.powi(52)) as u64
}

/// Critical flat levels `z = z₀` in flat `T³` with weights
/// `ρ = exp(ε cos 2π(z − z₀) + b(x, y))`, which makes the level critical
/// (`∂_z log ρ = 0`) with potential `4π²ε`. Speeds are `1 + ` small smooth
/// perturbations.
pub fn second_variation_scenarios(r: usize, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    (0..count)
        .map(|i| {
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let z0 = uniform(&mut rng, 0.0, 1.0);
            let eps = uniform(&mut rng, 0.05, 0.3) * if i % 2 == 0 { 1.0 } else { -1.0 };
            let horizontal = random_terms(&mut rng, 2, 2, 0.2, 1.0);
            let hz = horizontal.clone();
            let weight = WeightField::from_log_jet(Arc::new(move |x: &[f64]| {
                let arg = TAU * (x[2] - z0);
                let mut value = eps * arg.cos();
                let mut grad = vec![0.0, 0.0, -eps * TAU * arg.sin()];
                let mut hess = nalgebra::DMatrix::zeros(3, 3);
                hess[(2, 2)] = -eps * TAU * TAU * arg.cos();
                for t in &hz {
                    let w = [TAU * t.wave[0], TAU * t.wave[1]];
                    let a = w[0] * x[0] + w[1] * x[1] + t.phase;
                    value += t.amplitude * a.cos();
                    for p in 0..2 {
                        grad[p] -= t.amplitude * a.sin() * w[p];
                        for q in 0..2 {
                            hess[(p, q)] -= t.amplitude * a.cos() * w[p] * w[q];
                        }
                    }
                }
                LogJet { value, grad, hess }
            }))
            .with_label("exp(eps cos 2π(z−z0) + b(x,y))");
            let surface = DiscreteHypersurface::level(build_chart(&ModelSpec::torus(3))?, BaseGrid::unit_torus(2, r), 2, z0)?;
            let wobble = random_smooth_function(&surface, rng_seed(&mut rng));
            let speed = wobble.iter().map(|v| 1.0 + 0.1 * v).collect();
            Ok(Scenario { label: format!("critical level z0={z0:.4}, eps={eps:.4}"), surface, weight, speed })
        })
        .collect()
}
