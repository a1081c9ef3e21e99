//! Source-to-source optimizer for affine loop kernels targeting HLS.
//!
//! Pipeline: [`frontend`] parses the kernel, [`deps`] computes dependences
//! and distributes loops, [`space`] builds the per-body tiling template,
//! [`model`] scores an assignment, [`solver`] searches it, [`codegen`] emits
//! the design and a test harness, and [`verify`] re-checks everything.

pub mod cli;
pub mod codegen;
pub mod deps;
pub mod error;
pub mod frontend;
pub mod interp;
pub mod ir;
pub mod model;
pub mod platform;
pub mod report;
pub mod solution;
pub mod solver;
pub mod space;
pub mod verify;
