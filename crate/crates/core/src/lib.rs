//! Credible autocoding of annotated controller models: contract placement,
//! invariant propagation, verification-condition discharge and closed-loop
//! simulation of the car example.

// `!(v > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codegen;
pub mod expr;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod propagation;
pub mod vcfile;
pub mod vehicle;
pub mod verifier;
