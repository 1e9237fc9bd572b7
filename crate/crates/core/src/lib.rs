#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod loss;
pub mod objective;
pub mod rng;
pub mod sensitivity;
pub mod trs;
pub mod builders;
pub mod robust;
pub mod dynamic;
pub mod solvers;
pub mod synth;
pub mod io;
pub mod plot;
pub mod bench;
