//! Matrix-free space-time Galerkin solver for the time-dependent Maxwell
//! equations on brick meshes.
//!
//! The trial space is continuous in time within each slab (integrated
//! Legendre basis) and discontinuous in space; the test space is fully
//! discontinuous with temporal degree one lower. All element and face
//! kernels are applied matrix-free with tensor-product sum factorization.

pub mod adaptivity;
pub mod basis1d;
pub mod cli;
pub mod config;
pub mod fespace;
pub mod linalg;
pub mod mesh;
pub mod residual;
pub mod solver;
pub mod timeloop;
