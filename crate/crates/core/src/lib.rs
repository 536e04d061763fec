// Range checks are written as `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod config;
pub mod dut_sim;
pub mod excitation;
pub mod measurement;
pub mod rig;
pub mod stats_report;
pub mod test_plan;
