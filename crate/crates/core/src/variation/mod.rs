//! Weighted-area calculus for graph hypersurfaces: the functional, its first
//! and second variation, the stability operator and its ground state, and a
//! minimizer.

pub mod checks;
pub mod grid;
pub mod minimize;
pub mod operator;
pub mod spectral;
pub mod surface;
pub mod weight;

pub use grid::{read_grid_dump, write_grid_dump, Axis, BaseGrid};
pub use minimize::{minimize_weighted_area, random_smooth_function, stability_spot_check, MinimizeAreaOptions, MinimizeOutcome};
pub use operator::{
    assemble_from_geometry, assemble_stability_operator, first_eigenpair, quadratic_form_quadrature, refine_eigenpair, second_variation,
    second_variation_unweighted, EigenOptions, HighOrderOperator, OperatorDescriptor, StabilityOperator, StabilityReport, CRITICAL_TOL,
};
pub use spectral::{SpectralField1, SpectralField2};
pub use surface::{
    critical_residual, first_variation, graph_cell_geometry, sup_norm, weighted_area, CellGeometry, DiscreteHypersurface, SurfaceGeometry,
};
pub use weight::{LogJet, WeightField};
