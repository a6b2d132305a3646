// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brt;
pub mod cli;
pub mod flight;
pub mod hedgehog;
pub mod io;
pub mod kinematics;
pub mod planner;
pub mod sim;
pub mod trajectory;
