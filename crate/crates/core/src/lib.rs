//! Lane-level freeway anomaly detection with graph autoencoders.

// `!(x > y)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod autodiff;
pub mod data;
pub mod detection;
pub mod exec;
pub mod graph;
pub mod imputation;
pub mod models;
pub mod synthetic;
pub mod training;
