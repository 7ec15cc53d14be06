//! Weighted slicings: feasibility, pointwise algebra and discrete slicings.

pub mod build;
pub mod checks;
pub mod feasibility;
pub mod identities;
pub mod lemmas;

pub use build::*;
pub use checks::*;
pub use feasibility::*;
pub use identities::*;
pub use lemmas::*;
