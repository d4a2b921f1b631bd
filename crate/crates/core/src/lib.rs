//! Desk-scale digital twin for distribution system state estimation.
//!
//! The crate covers the whole loop on small feeders:
//!
//! - [`grid`]: radial three-phase feeder models, admittance matrices and a
//!   backward/forward sweep power flow that produces ground-truth voltages.
//! - [`telemetry`]: the measurement model `z = h(x) + e`, Gaussian noise,
//!   Bernoulli masking and dataset assembly / CSV interchange.
//! - [`wls`]: a Gauss-Newton weighted least squares estimator used as the
//!   model-based baseline.
//! - [`tensor`]: a small dense tensor engine with reverse-mode autodiff.
//! - [`model`]: the two-branch interactive attention estimator (parallel
//!   projections, grouped-query attention, cross-interaction gates) and its
//!   concatenation baseline.
//! - [`bench`]: metrics, missing-ratio sweeps and report emission.

pub mod bench;
pub mod error;
pub mod grid;
pub mod model;
pub mod rng;
pub mod telemetry;
pub mod tensor;
pub mod wls;

pub use error::Error;
