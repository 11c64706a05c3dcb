//! Stability cones, lattice Hermitian–Yang–Mills tooling and the moment-map
//! flow on a local slice for holomorphic bundles over flat complex tori.

pub mod cone;
pub mod flow;
pub mod lattice;
pub mod linalg;
pub mod scalar;
pub mod slice;

/// Exact rational scalar used by the cone engine.
pub type Rat = num_rational::BigRational;
