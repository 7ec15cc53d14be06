//! Numerical toolkit for `m`-intermediate curvature.
//!
//! * [`geometry`]: charts, canonical curvature-tensor storage, orthonormal frames.
//! * [`curvature`]: Christoffel symbols, Riemann tensor, `C_m` and `s_{m,n}`.
//! * [`models`]: spheres, flat tori, products and conformal deformations.
//! * [`grassmann`]: minimization of `C_m` over `m`-planes and positivity certificates.
//! * [`variation`]: weighted area of periodic graph hypersurfaces, its first
//!   and second variation, the stability operator and its ground state.
//! * [`slicing`]: stable weighted slicings, the identities and inequalities
//!   relating their curvature terms, and the dimension condition.

#![allow(clippy::needless_range_loop)]

pub mod curvature;
pub mod error;
pub mod geometry;
pub mod grassmann;
pub mod models;
pub mod rng;
pub mod slicing;
pub mod variation;

pub use error::{CurvError, Result};
