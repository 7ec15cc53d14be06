//! Discrete stable weighted slicings of a 3-dimensional periodic ambient:
//! `Σ_1` is a graph over the first two coordinates, `Σ_2` a curve `y = c(x)`
//! inside the chart of `Σ_1`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CurvError, Result};
use crate::geometry::{MetricChart, MetricJet};
use crate::models::{ModelSpec, TrigTerm};
use crate::variation::{
    assemble_stability_operator, first_eigenpair, minimize_weighted_area, refine_eigenpair, sup_norm, Axis, BaseGrid, DiscreteHypersurface,
    EigenOptions, HighOrderOperator, LogJet, MinimizeAreaOptions, SpectralField2, WeightField,
};

/// Stability threshold on `λ_k`.
pub const STABILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicingOptions {
    pub resolution: usize,
    pub minimize: MinimizeAreaOptions,
    pub eigen: EigenOptions,
    /// Flat starting levels scanned per slice; they are tried in order of
    /// increasing weighted area until one converges to a stable slice.
    pub start_levels: usize,
    /// How many of the scanned levels are tried.
    pub attempts: usize,
}

impl Default for SlicingOptions {
    fn default() -> Self {
        SlicingOptions { resolution: 64, minimize: MinimizeAreaOptions::default(), eigen: EigenOptions::default(), start_levels: 16, attempts: 4 }
    }
}

/// One slice `Σ_k ⊂ Σ_{k−1}` with its eigen data.
#[derive(Debug, Clone)]
pub struct SliceLevel {
    pub k: usize,
    /// Graph in the chart of `Σ_{k−1}`.
    pub surface: DiscreteHypersurface,
    /// `ρ_{k−1}` in the chart of `Σ_{k−1}`.
    pub weight: WeightField,
    /// Sup-norm of `H + ⟨D log ρ_{k−1}, ν_k⟩`.
    pub criticality: f64,
    pub minimizer_iterations: usize,
    /// Ground-state eigenvalue of the fourth-order operator.
    pub lambda: f64,
    /// Eigenvalue of the second-order operator.
    pub lambda_raw: f64,
    /// `‖L₄ v − λ v‖∞` with `max v = 1`.
    pub eigen_residual: f64,
    /// `v_k`, scaled to unit maximum.
    pub v: Vec<f64>,
    /// `ρ_k = ρ_{k−1} v_k` at the cells of `Σ_k`.
    pub rho: Vec<f64>,
}

impl SliceLevel {
    pub fn is_stable(&self) -> bool {
        self.lambda >= -STABILITY_TOL && self.v.iter().all(|v| *v > 0.0)
    }
}

/// Chart of the top slice `Σ_1`: spectral interpolants of its height, its
/// induced metric and `log v_1` over the base grid.
#[derive(Debug, Clone)]
pub struct TopSliceChart {
    pub grid: BaseGrid,
    pub height: Arc<SpectralField2>,
    /// `γ_11, γ_12, γ_22`.
    pub gamma: Arc<[SpectralField2; 3]>,
    pub log_v: Arc<SpectralField2>,
    pub chart: MetricChart,
    /// `ρ_1 = v_1` in this chart.
    pub weight: WeightField,
}

impl TopSliceChart {
    pub fn new(level: &SliceLevel) -> Result<Self> {
        let hs = &level.surface;
        if hs.grid.dim() != 2 || hs.height_axis != 2 {
            return Err(CurvError::BadShape("top slice must be a graph over the first two coordinates".into()));
        }
        let geom = hs.geometry()?;
        let comp = |i: usize, j: usize| geom.cells.iter().map(|c| c.induced[(i, j)]).collect::<Vec<_>>();
        let gamma = Arc::new([
            SpectralField2::new(&hs.grid, &comp(0, 0))?,
            SpectralField2::new(&hs.grid, &comp(0, 1))?,
            SpectralField2::new(&hs.grid, &comp(1, 1))?,
        ]);
        let height = Arc::new(SpectralField2::new(&hs.grid, &hs.height)?);
        let logs: Vec<f64> = level.v.iter().map(|v| v.ln()).collect();
        let log_v = Arc::new(SpectralField2::new(&hs.grid, &logs)?);
        let gm = gamma.clone();
        let metric = Arc::new(move |x: &[f64]| {
            let j: Vec<_> = gm.iter().map(|f| f.jet(x[0], x[1])).collect();
            DMatrix::from_row_slice(2, 2, &[j[0][0], j[1][0], j[1][0], j[2][0]])
        });
        let gm = gamma.clone();
        let jet = Arc::new(move |x: &[f64]| {
            let j: Vec<_> = gm.iter().map(|f| f.jet(x[0], x[1])).collect();
            let at = |s: usize| DMatrix::from_row_slice(2, 2, &[j[0][s], j[1][s], j[1][s], j[2][s]]);
            MetricJet { g: at(0), dg: vec![at(1), at(2)], ddg: vec![at(3), at(4), at(4), at(5)] }
        });
        let periods: Vec<Option<f64>> = hs.grid.axes.iter().map(|a| Some(a.hi - a.lo)).collect();
        let chart = MetricChart::new(2, metric).with_jet(jet).with_periods(periods).with_label(format!("top slice of {}", hs.ambient.label()));
        let lv = log_v.clone();
        let weight = WeightField::from_log_jet(Arc::new(move |x: &[f64]| {
            let j = lv.jet(x[0], x[1]);
            LogJet { value: j[0], grad: vec![j[1], j[2]], hess: DMatrix::from_row_slice(2, 2, &[j[3], j[4], j[4], j[5]]) }
        }))
        .with_label("v_1");
        Ok(TopSliceChart { grid: hs.grid.clone(), height, gamma, log_v, chart, weight })
    }
}

/// Conformally perturbed `T³` used by the slicing demo. The `z`-only mode
/// breaks every translation symmetry that would make `Σ_1` neutrally
/// stable.
pub fn demo_perturbed_torus(amplitude: f64) -> ModelSpec {
    let t = |a: f64, w: [f64; 3], phase: f64| TrigTerm { amplitude: a * amplitude, wave: w.to_vec(), phase };
    ModelSpec::conformal(
        ModelSpec::torus(3),
        vec![t(1.0, [0.0, 0.0, 1.0], 0.0), t(0.6, [1.0, 0.0, 1.0], 0.4), t(0.4, [0.0, 1.0, 1.0], 1.3), t(0.4, [1.0, 1.0, 0.0], 2.1)],
    )
}

#[derive(Debug, Clone)]
pub struct Slicing {
    pub m: usize,
    pub ambient: MetricChart,
    pub levels: Vec<SliceLevel>,
    pub top_chart: Option<TopSliceChart>,
    pub options: SlicingOptions,
}

impl Slicing {
    pub fn is_complete(&self) -> bool {
        self.levels.len() == self.m
    }

    pub fn level(&self, k: usize) -> Result<&SliceLevel> {
        self.levels.get(k.wrapping_sub(1)).ok_or_else(|| CurvError::IncompleteSlicing(format!("level {k} of {} is missing", self.m)))
    }

    pub fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(CurvError::IncompleteSlicing(format!("{} of {} levels built", self.levels.len(), self.m)))
        }
    }

    /// Every level critical and stable with a positive eigenfunction.
    pub fn is_valid(&self) -> bool {
        self.is_complete() && self.levels.iter().all(|l| l.criticality < crate::variation::CRITICAL_TOL && l.is_stable())
    }

    /// Serializable summary; bitwise reproducible for a fixed configuration.
    pub fn snapshot(&self) -> SlicingSnapshot {
        SlicingSnapshot {
            m: self.m,
            ambient: self.ambient.label().to_string(),
            resolution: self.options.resolution,
            complete: self.is_complete(),
            levels: self
                .levels
                .iter()
                .map(|l| LevelSnapshot {
                    k: l.k,
                    criticality: l.criticality,
                    minimizer_iterations: l.minimizer_iterations,
                    lambda: l.lambda,
                    lambda_raw: l.lambda_raw,
                    eigen_residual: l.eigen_residual,
                    stable: l.is_stable(),
                    height: l.surface.height.clone(),
                    v: l.v.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub k: usize,
    pub criticality: f64,
    pub minimizer_iterations: usize,
    /// Ground-state eigenvalue of the fourth-order operator.
    pub lambda: f64,
    /// Eigenvalue of the second-order operator.
    pub lambda_raw: f64,
    pub eigen_residual: f64,
    pub stable: bool,
    pub height: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingSnapshot {
    pub m: usize,
    pub ambient: String,
    pub resolution: usize,
    pub complete: bool,
    pub levels: Vec<LevelSnapshot>,
}

fn solve_level(
    k: usize,
    start: DiscreteHypersurface,
    weight: WeightField,
    rho_prev: &dyn Fn(&DiscreteHypersurface) -> Result<Vec<f64>>,
    opts: &SlicingOptions,
) -> Result<SliceLevel> {
    let mut mopts = opts.minimize;
    mopts.seed = crate::rng::derive_seed(opts.minimize.seed, k as u64);
    let out = minimize_weighted_area(&start, &weight, &mopts)?;
    if !out.converged {
        return Err(CurvError::IterationLimit { iterations: out.iterations, best_residual: out.residual });
    }
    let surface = out.surface;
    let criticality = sup_norm(&surface.geometry()?.critical_residual(&weight)?);
    let op = assemble_stability_operator(&surface, &weight)?;
    let low = first_eigenpair(&op, &opts.eigen)?;
    let high = HighOrderOperator::new(&surface, &surface.geometry()?, &weight)?;
    let rep = refine_eigenpair(&op, &high, &low, &opts.eigen)?;
    let v = rep.eigenfunction.clone();
    let rho = v.iter().zip(rho_prev(&surface)?).map(|(a, b)| a * b).collect();
    Ok(SliceLevel {
        k,
        surface,
        weight,
        criticality,
        minimizer_iterations: out.iterations,
        lambda: rep.lambda_1,
        lambda_raw: low.lambda_1,
        eigen_residual: rep.absolute_residual,
        v,
        rho,
    })
}

/// Flat levels `x_h = c` ordered by weighted area.
fn start_candidates(
    ambient: &MetricChart,
    grid: &BaseGrid,
    hx: usize,
    period: f64,
    weight: &WeightField,
    opts: &SlicingOptions,
) -> Result<Vec<DiscreteHypersurface>> {
    let mut scored = (0..opts.start_levels)
        .map(|i| {
            let hs = DiscreteHypersurface::level(ambient.clone(), grid.clone(), hx, (i as f64 + 0.5) / opts.start_levels as f64 * period)?;
            let a = hs.geometry()?.weighted_area(weight)?;
            Ok((a, i, hs))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, _, hs)| hs).collect())
}

/// First stable level among the candidates; otherwise the last result.
fn solve_stable_level(
    k: usize,
    starts: Vec<DiscreteHypersurface>,
    weight: &WeightField,
    rho_prev: &dyn Fn(&DiscreteHypersurface) -> Result<Vec<f64>>,
    opts: &SlicingOptions,
) -> Result<SliceLevel> {
    let mut last = Err(CurvError::DegenerateInput("no starting level".into()));
    for start in starts.into_iter().take(opts.attempts.max(1)) {
        last = solve_level(k, start, weight.clone(), rho_prev, opts);
        if matches!(&last, Ok(l) if l.is_stable()) {
            break;
        }
    }
    last
}

/// Builds as many levels as converge; the error, if any, is returned next
/// to the partial slicing.
pub fn build_slicing_partial(ambient: &MetricChart, m: usize, opts: &SlicingOptions) -> (Slicing, Option<CurvError>) {
    let mut sl = Slicing { m, ambient: ambient.clone(), levels: Vec::new(), top_chart: None, options: *opts };
    let err = build_into(&mut sl).err();
    (sl, err)
}

/// Slicing of order `m ∈ {1, 2}` of a 3-dimensional ambient periodic in
/// every coordinate.
pub fn build_slicing(ambient: &MetricChart, m: usize, opts: &SlicingOptions) -> Result<Slicing> {
    match build_slicing_partial(ambient, m, opts) {
        (sl, None) => Ok(sl),
        (_, Some(e)) => Err(e),
    }
}

fn build_into(sl: &mut Slicing) -> Result<()> {
    let (ambient, m, opts) = (sl.ambient.clone(), sl.m, sl.options);
    if ambient.dim() != 3 || !(1..=2).contains(&m) {
        return Err(CurvError::BadOrder { m, n: ambient.dim(), max: 2 });
    }
    let periods: Vec<f64> = ambient
        .periods()
        .iter()
        .map(|p| p.ok_or_else(|| CurvError::BadShape("slicing needs an ambient periodic in every coordinate".into())))
        .collect::<Result<_>>()?;
    let r = opts.resolution;
    let grid = BaseGrid::new(vec![Axis::periodic(r, 0.0, periods[0]), Axis::periodic(r, 0.0, periods[1])])?;
    let unit = WeightField::unit();
    let starts = start_candidates(&ambient, &grid, 2, periods[2], &unit, &opts)?;
    let top = solve_stable_level(1, starts, &unit, &|hs| Ok(vec![1.0; hs.grid.len()]), &opts)?;
    sl.levels.push(top);
    if m == 1 {
        return Ok(());
    }
    let tc = TopSliceChart::new(&sl.levels[0])?;
    let curve_grid = BaseGrid::new(vec![grid.axes[0]])?;
    let weight = tc.weight.clone();
    let starts = start_candidates(&tc.chart, &curve_grid, 1, periods[1], &weight, &opts)?;
    sl.top_chart = Some(tc);
    // ρ_1 at the curve cells, from the interpolant that also defines the weight
    let rho1 = |hs: &DiscreteHypersurface| (0..hs.grid.len()).map(|c| weight.value(&hs.cell_point(c))).collect::<Result<Vec<f64>>>();
    let level = solve_stable_level(2, starts, &weight, &rho1, &opts)?;
    sl.levels.push(level);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_chart;

    fn opts(r: usize) -> SlicingOptions {
        SlicingOptions { resolution: r, ..Default::default() }
    }

    #[test]
    fn flat_torus_slicing_is_trivial() {
        let sl = build_slicing(&build_chart(&ModelSpec::torus(3)).unwrap(), 2, &opts(16)).unwrap();
        assert!(sl.is_valid());
        for l in &sl.levels {
            assert!(l.lambda.abs() < 1e-10, "{}", l.lambda);
            assert!(l.v.iter().all(|v| (v - 1.0).abs() < 1e-10));
            assert!(l.criticality < 1e-12);
        }
    }

    #[test]
    fn perturbed_torus_slicing_converges() {
        let spec = ModelSpec::conformal(
            ModelSpec::torus(3),
            vec![
                TrigTerm { amplitude: 0.05, wave: vec![1.0, 0.0, 1.0], phase: 0.2 },
                TrigTerm { amplitude: 0.03, wave: vec![0.0, 1.0, 1.0], phase: 1.1 },
            ],
        );
        let sl = build_slicing(&build_chart(&spec).unwrap(), 2, &opts(24)).unwrap();
        assert!(sl.is_complete());
        for l in &sl.levels {
            assert!(l.criticality < 1e-5, "level {}: {}", l.k, l.criticality);
            assert!(l.v.iter().all(|v| *v > 0.0));
        }
        let again = build_slicing(&build_chart(&spec).unwrap(), 2, &opts(24)).unwrap();
        assert_eq!(sl.snapshot(), again.snapshot());
        eprintln!("{:?}", sl.levels.iter().map(|l| (l.lambda, l.criticality, l.minimizer_iterations)).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_unsupported_orders() {
        let chart = build_chart(&ModelSpec::torus(3)).unwrap();
        assert!(matches!(build_slicing(&chart, 3, &opts(8)), Err(CurvError::BadOrder { .. })));
    }
}
