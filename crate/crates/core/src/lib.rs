//! Move-or-localize planning for a robot that follows a waypoint path without
//! continuous localization.
//!
//! The robot dead-reckons between GPS fixes, and surfacing for a fix is itself
//! dangerous in some regions. A high-level planner decides each step whether
//! to move or localize; a low-level planner turns moves into motion commands
//! and repairs the path after each fix. Planners range from fixed cadences to
//! POMCP and its cost-constrained variant, which keeps the belief's failure
//! probability under a budget.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod belief;
pub mod ccpomcp;
pub mod environment;
pub mod harness;
pub mod model;
pub mod planner;
pub mod pomcp;
pub mod scalar;

pub use scalar::Scalar;

pub type Rewards = model::RewardConfig<f64>;
pub type Noise = model::MotionNoise<f64>;
pub type Search = pomcp::SearchParams<f64>;
pub type CcSearch = ccpomcp::CcSearchParams<f64>;
pub type Strategy = planner::HlpStrategy<f64>;
pub type Planner = planner::PlannerState<f64>;
pub type Config = harness::RunConfig<f64>;
pub type Episode = harness::RunResult<f64>;
