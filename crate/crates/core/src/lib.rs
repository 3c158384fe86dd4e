//! Improved aggregated flexibility models of electric-vehicle fleets.
//!
//! The toolkit builds a single "AEV unit" (aggregated electric vehicle) that
//! stands in for a whole fleet. Per-group scaling factors on the aggregated
//! charge/discharge/SOC envelopes are fitted so that the profit-maximizing
//! dispatch of the aggregated unit tracks the summed dispatch of the
//! individually optimized vehicles. The fit is a bilevel problem; it is
//! recast to a single level through the inner problem's KKT conditions and
//! solved by complementarity branch-and-bound (or exported as a big-M MIQP
//! for external solvers). A plain virtual-storage aggregation serves as the
//! benchmark baseline.
//!
//! Module map:
//! - [`profiles`]: synthetic commuter fleets, CSV ingestion, uncontrolled
//!   charging simulation, validation.
//! - [`lp`]: sparse LP/QP kernel with primal-dual solutions plus MPS/LP-text
//!   export and parsing.
//! - [`dispatch`]: per-vehicle optimal dispatch and fleet reference assembly.
//! - [`aggregate`]: envelope summation, the simple-aggregation baseline,
//!   scaling-factor mapping and application.
//! - [`bilevel`]: single-level KKT assembly, big-M reformulation,
//!   branch-and-bound solve, and solution validation.
//! - [`eval`]: RMSE metrics, comparison reports, figure-ready data.

pub mod aggregate;
pub mod bilevel;
pub mod dispatch;
pub mod eval;
pub mod grid;
pub mod lp;
pub mod prices;
pub mod profiles;

pub use grid::TimeGrid;
pub use prices::PriceSeries;
