#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! System identification of gas-turbine governor and exciter models from
//! disturbance records.

pub mod blocks;
pub mod cli;
pub mod config;
pub mod estimate;
pub mod experiment;
pub mod optim;
pub mod params;
pub mod plants;
pub mod signals;
pub mod validate;
