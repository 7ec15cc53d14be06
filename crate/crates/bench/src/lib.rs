//! Fixtures shared by the criterion benches in `benches/`.

use curvlab::geometry::{CurvatureTensor, MetricChart};
use curvlab::models::{build_chart, ModelSpec};
use curvlab::rng::rng_from;
use curvlab::variation::checks::second_variation_scenarios;
use curvlab::variation::{DiscreteHypersurface, WeightField};

pub fn model(spec: &str) -> MetricChart {
    build_chart(&spec.parse::<ModelSpec>().expect("valid model")).expect("chart builds")
}

pub fn random_tensor(n: usize, seed: u64) -> CurvatureTensor {
    CurvatureTensor::random_algebraic(n, &mut rng_from(seed))
}

/// A critical weighted level at resolution `r` (stability operators need one).
pub fn critical_level(r: usize) -> (DiscreteHypersurface, WeightField) {
    let sc = second_variation_scenarios(r, 1, 0).expect("scenario builds").remove(0);
    (sc.surface, sc.weight)
}
