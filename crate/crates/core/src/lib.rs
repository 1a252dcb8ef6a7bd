//! Batched Newton-Raphson power flow for many tasks that share one
//! admittance-matrix sparsity pattern.

pub mod grid;
pub mod lu;
pub mod newton;
pub mod runtime;
pub mod sparse;
pub mod tape;
pub mod timing;
