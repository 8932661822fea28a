//! Chance-constrained trajectory optimization for stochastic discrete-time
//! linear complementarity systems.

pub mod benchmarks;
pub mod chance;
pub mod lcp;
pub mod miqp;
pub mod model;
pub mod montecarlo;
pub mod normal;
