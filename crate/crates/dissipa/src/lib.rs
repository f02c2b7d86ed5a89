//! Local QSR dissipativity analysis of nonlinear control-affine systems.
//!
//! The library certifies input-output properties (L2 gain, passivity, conic
//! bounds) of systems
//!
//! ```text
//! x' = f(x) + (B + G(x)) u
//! y  = h(x) + (D + J(x)) u
//! ```
//!
//! on a box region of the state space by synthesizing a continuous
//! piecewise-affine storage function over a Kuhn triangulation (optionally
//! combined with a quadratic storage function near the origin) and solving a
//! single semidefinite program whose vertex constraints are inflated by
//! rigorous Taylor-remainder bounds, so that the Hamilton-Jacobi inequality
//! certified at the vertices holds everywhere on the region.
//!
//! Module map:
//! - [`expr`]: expression DSL, symbolic differentiation, interval bounds
//! - [`mesh`]: Kuhn triangulations, simplex geometry, point location
//! - [`bounds`]: per-simplex and origin-ball second-derivative constants
//! - [`lmi`]: LMI block assembly and QSR supply-rate presets
//! - [`sdp`]: conic program model and the bundled interior-point solver
//! - [`analysis`]: end-to-end orchestration of the two problem variants
//! - [`verify`]: solver-free verification of certificates

pub mod analysis;
pub mod bounds;
pub mod expr;
pub mod lmi;
pub mod mesh;
pub mod sdp;
pub mod verify;
