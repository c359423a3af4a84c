//! Age of information over short-packet multi-connectivity links.
//!
//! Channel model and average block error probability live in [`channel`],
//! the closed-form age metrics in [`aoi`], the Monte Carlo counterpart in
//! [`sim`], connection-count selection in [`optimizer`] and the control loop
//! driven by the resulting age in [`control`].

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aoi;
pub mod channel;
pub mod control;
pub mod error;
pub mod optimizer;
pub mod quadrature;
pub mod sim;
pub mod special;

pub use aoi::{AoiMetrics, Scheme, TrafficParams};
pub use channel::{FblConfig, LinkBudget};
pub use control::{PlantModel, StateTrace};
pub use error::{Constraint, Error, Result};
pub use optimizer::{OptimizerParams, OptimizerResult};
pub use sim::{SimConfig, SimResult};
