#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod bsde;
pub mod config;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod paths;
pub mod quadrature;
pub mod stats;
