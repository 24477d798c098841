//! Structure-preserving model reduction for parametric Hamiltonian systems.
//!
//! The crate covers the full pipeline: full-order models ([`model`]), implicit
//! energy- and structure-preserving time stepping ([`integrate`]),
//! orthosymplectic reduced bases ([`reduce`]), gradient-preserving DEIM
//! hyper-reduction of the reduced Jacobian ([`deim`]), its online adaptive
//! variant ([`adapt`]) and run diagnostics ([`metrics`]).
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix `f64`, which is what the documented tolerances assume.

pub mod adapt;
pub mod deim;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod reduce;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instances of the generic types.
pub type Swe2d = model::Swe2d<f64>;
pub type Nls1d = model::Nls1d<f64>;
pub type SymplecticBasis = reduce::SymplecticBasis<f64>;
pub type DeimProjector = deim::DeimProjector<f64>;
pub type Integrator = integrate::Integrator<f64>;
pub type Trajectory = integrate::Trajectory<f64>;
pub type AdaptiveRun = adapt::AdaptiveRun<f64>;
