//! Numerical toolkit for asymptotically hyperbolic metrics in normal form
//! `g = (dρ² + h_ρ)/ρ²`: geodesic flow up to the boundary, scattering data,
//! renormalized lengths and distances, X-ray transforms of symmetric tensors,
//! Jacobi-field diagnostics and recovery of boundary jets from lengths.
//!
//! The geometric core is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the tolerances are tuned for.

pub mod error;
pub mod flow;
pub mod jacobi;
pub mod linalg;
pub mod metric;
pub mod ode;
pub mod quad;
pub mod recover;
pub mod renorm;
pub mod scalar;
pub mod xray;

pub use error::{AhxError, Result};
pub use scalar::Real;

pub type Family = metric::BoundaryMetricFamily<f64>;
pub type Eval = metric::MetricEval<f64>;
