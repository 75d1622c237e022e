//! Joint trajectory, transmission-schedule and positioning-point planning for
//! a UAV fleet serving a ground sensor network.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod bcd;
pub mod channel;
pub mod energy;
pub mod error;
pub mod model;
pub mod output;
pub mod par;
pub mod pipeline;
pub mod pso;
pub mod sca;
pub mod schedule;
pub mod simplex;
pub mod spline;
pub mod tdoa;

pub use error::{Error, Result};
pub use model::{Point, Scenario, Schedule, SensorSpec, TimeGrid, Trajectory};
pub use par::Execution;
