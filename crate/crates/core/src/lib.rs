//! Small-noise large-deviation toolkit.
//!
//! Given a drift field `b(x)` for the diffusion `dX = b(X) dt + sqrt(2 eps) dW`,
//! this crate samples paths and rare-event rates, integrates the associated
//! Hamiltonian `H(q, p) = |p|^2 + b(q).p`, computes most probable paths,
//! evolves the Hamilton-Jacobi equation for the rate function `u(x, t)` and
//! evaluates nonequilibrium diagnostics such as entropy production.

pub mod circle;
pub mod cli;
pub mod error;
pub mod fields;
pub mod hje;
pub mod mechanics;
pub mod mpp;
pub mod numerics;
pub mod oracle;
pub mod ratefn;
pub mod simulate;
pub mod neq;

pub use error::{Error, Result};
pub use fields::{Domain, DriftField, FieldSpec};
pub use hje::GridFn;
pub use mechanics::{HamiltonianTrajectory, PhasePoint};
pub use simulate::{PathSample, RateReport};
