// index loops mirror the tensor formulas; NaN-aware comparisons are deliberate
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod cli;
pub mod compat;
pub mod expr;
pub mod geometry;
pub mod io;
pub mod lifts;
pub mod linalg;
pub mod realization;
pub mod sim;
pub mod systems;
