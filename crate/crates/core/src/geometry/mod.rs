//! Charts, symmetry-aware curvature tensors, and metric-orthonormal frames.

mod chart;
mod frame;
mod tensor;

pub use chart::{CurvatureFn, JetFn, MetricChart, MetricFn, MetricJet};
pub use frame::{complete_frame, gram_schmidt, gram_schmidt_in, haar_random_frame, OrthonormalFrame};
pub use tensor::{Basis, CurvatureTensor};

/// Pivot threshold below which Gram-Schmidt reports rank deficiency.
pub const RANK_TOL: f64 = 1e-10;
