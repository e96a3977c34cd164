//! Scaling laws for continual pre-training that condition on the
//! pre-training budget (tokens per parameter, "ptpp").
//!
//! The crate fits candidate laws to loss measurements, forecasts adaptation
//! loss at unseen pre-training stages, scores those forecasts, and plans the
//! replay ratio and adaptation budget that satisfy forgetting and target-loss
//! constraints.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fit;
pub mod law;
pub mod metrics;
pub mod planner;
pub mod protocol;
pub mod synth;

pub use dataset::{Dataset, Domain, GridSpec, Measurement};
pub use error::{Error, ErrorKind, Result};
pub use fit::{fit, fit_with_anchors, FitConfig, FitResult};
pub use law::{EvalPoint, Law, LawForm, LawParams, Param};
pub use metrics::MetricsReport;
pub use planner::{plan, PlanConstraints, PlanProblem, PlanResult, ToleranceMode};
pub use protocol::{run_experiment, run_oracle, AnchorPolicy, ComparisonTable, ExperimentSpec};
