//! `plangym` is an environment engine and reward laboratory for
//! tool-augmented itinerary planning.
//!
//! The crate is organised around the life of one episode:
//!
//! * [`sandbox`] holds the grounded record universe and generates feasible
//!   queries (each with a retained witness plan).
//! * [`tools`] parses agent turns, dispatches the seven sandbox tools and
//!   evaluates calculator expressions.
//! * [`episode`] is the transcript state machine with its turn and token caps.
//! * [`plan`] validates answers against the day-plan schema.
//! * [`constraints`] checks commonsense and hard constraints.
//! * [`reward`] turns reports into the schema-gated, lambda-weighted reward.
//! * [`grpo`] implements the group-relative clipped objective together with a
//!   small softmax policy used for gradient checks and toy training.
//! * [`analytics`] scores trajectory dumps, classifies failures and
//!   reconstructs update FLOPs.
//! * [`gateway`] exposes everything over a line-delimited JSON protocol.
//!
//! A narrative guide lives in the `book/` directory at the repository root;
//! its code listings are compiled and run as doc-tests of this crate.

pub mod analytics;
pub mod constraints;
pub mod episode;
pub mod gateway;
pub mod grpo;
pub mod json;
pub mod plan;
pub mod reward;
pub mod sandbox;
pub mod tokens;
pub mod tools;

pub use constraints::{ConstraintReport, ConstraintResult, CostBreakdown};
pub use episode::{Episode, EpisodeConfig, EpisodeStatus, Observation, Segment, TrajectoryRecord};
pub use plan::{DayPlan, ItineraryPlan, SchemaReport};
pub use reward::{CurriculumSchedule, LambdaVector, RewardBreakdown};
pub use sandbox::{GeneratedQuery, QuerySpec, SandboxStore, SizeProfile};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sandbox.md")]
    mod sandbox {}
    #[doc = include_str!("../../../book/src/tools.md")]
    mod tools {}
    #[doc = include_str!("../../../book/src/episodes.md")]
    mod episodes {}
    #[doc = include_str!("../../../book/src/plans.md")]
    mod plans {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/reward.md")]
    mod reward {}
    #[doc = include_str!("../../../book/src/grpo.md")]
    mod grpo {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
}
