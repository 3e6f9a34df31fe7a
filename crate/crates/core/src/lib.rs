//! Gravitational allocation of Lebesgue measure to a unit-intensity Poisson
//! point process in `R^d`, `d >= 3`.
//!
//! Every point of space flows along the gravitational field generated by the
//! stars until it is captured; the set of points captured by a star is its
//! basin, and all basins have unit volume. This crate evaluates the field,
//! integrates the flow, builds allocation maps, and runs statistical and
//! deterministic checks of the allocation's properties on finite samples.
//!
//! The infinite-process field is replaced by the compensated truncation
//!
//! ```text
//! F(x | B(c, L)) = sum_{|z - c| <= L} (z - x) / |z - x|^d + kappa_d (x - c)
//! ```
//!
//! which equals the star field minus the pull of a uniform unit density on
//! the truncation ball, and so has mean zero at every interior point.

pub mod allocation;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod index;
pub mod io;
pub mod rng;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use field::{FarFieldOptions, FieldModel};
pub use flow::{basin_of, flow_time, integrate_flow, Basin, FlowOptions, FlowTrace, Terminal};
pub use geometry::{kappa, Point, Region, StarConfig};
