//! Interacting particle systems with vision-geometric sensitivity regions and
//! reflecting boundaries, the aggregation-diffusion equation they approach
//! in the mean-field limit, and the Monte Carlo machinery that measures how
//! fast they approach it.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: convex domains, projections and the reflected Euler step
//! - [`sensitivity`]: the regions `K(w(x))`, generalized boundaries and
//!   mollified indicators
//! - [`velocity`]: interaction kernels and the nonlocal velocity `V[mu](x)`
//! - [`particles`]: the interacting and McKean–Vlasov particle systems
//! - [`pde`]: a conservative finite-volume solver for the mean-field equation
//! - [`transport`]: exact empirical Wasserstein distances
//! - [`harness`]: rate experiments, slope fits and report tables
//! - [`report`]: CSV writers for trajectories and densities
//!
//! The guide in `book/` walks through each layer; its code listings are
//! compiled and run as doctests of this crate.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod harness;
mod linalg;
pub mod particles;
pub mod pde;
mod quadrature;
pub mod report;
pub mod rng;
pub mod sensitivity;
pub mod transport;
pub mod velocity;

pub use error::{Error, Result};
pub use geometry::{DomainSpec, ReflectionLedger};
pub use particles::{CoupledRun, ParticleCloud, SimConfig};
pub use pde::{DensityProvider, GridDensity, PdeConfig};
pub use sensitivity::{MollificationParams, OrientationField, Region, SensitivitySpec};
pub use velocity::KernelSpec;

/// Library version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/sensitivity.md")]
    mod sensitivity {}
    #[doc = include_str!("../../../book/src/velocity.md")]
    mod velocity {}
    #[doc = include_str!("../../../book/src/particles.md")]
    mod particles {}
    #[doc = include_str!("../../../book/src/pde.md")]
    mod pde {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
