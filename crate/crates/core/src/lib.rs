//! Numerical laboratory for the hypercritical deformed Hermitian-Yang-Mills
//! equation on flat complex tori.
//!
//! Every type is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! fix the working precision used by the tests and the command-line tool.

// `!(x > 0)` is how parameter checks reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eigenops;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod geodesic;
pub mod linalg;
pub mod quadrature;
pub mod regularize;
pub mod scalar;
pub mod torus;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PhaseVector64 = eigenops::PhaseVector<f64>;
pub type ConeSpec64 = eigenops::ConeSpec<f64>;
pub type HermitianPencil64 = eigenops::HermitianPencil<f64>;
pub type TorusGrid64 = torus::TorusGrid<f64>;
pub type Potential64 = torus::Potential<f64>;
pub type HermitianField64 = torus::HermitianField<f64>;
pub type CalibrationData64 = functionals::CalibrationData<f64>;
pub type FlowConfig64 = flow::FlowConfig<f64>;
pub type FlowTrace64 = flow::FlowTrace<f64>;
pub type PathPotential64 = geodesic::PathPotential<f64>;
pub type GeodesicConfig64 = geodesic::GeodesicConfig<f64>;
pub type GeodesicReport64 = geodesic::GeodesicReport<f64>;
pub type MollifierSpec64 = regularize::MollifierSpec<f64>;
pub type GluePatch64 = regularize::GluePatch<f64>;
