//! Revenue-optimal selling of an item of uncertain quality when the seller
//! controls what buyers learn about it.
//!
//! The seller privately observes the quality `q`, buyers hold private types
//! `t_i`, and a buyer's value is `alpha(q) * t_i`. The optimal mechanism asks
//! at most one buyer to buy: the one with the highest ironed virtual value,
//! provided it clears the quality cutoff `xi(q) = r(q) / alpha(q)`.

// `!(x > y)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod config;
pub mod dist;
pub mod error;
pub mod info;
pub mod instance;
pub mod mechanism;
pub mod revenue;
pub mod valuation;
pub mod verify;
pub mod virtual_value;

pub use dist::{GriddedDistribution, GriddedFunction, IntervalUnion};
pub use error::{Error, Result};
pub use instance::{ProblemInstance, QualityModel};
pub use mechanism::{build_optimal_mechanism, Signal, ThresholdMechanism};
pub use valuation::ValuationForm;
pub use virtual_value::VirtualValueCurve;
