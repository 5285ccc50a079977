//! Simulation laboratory for conditional average treatment effect (CATE)
//! estimators under unmeasured confounding.
//!
//! The crate generates synthetic cohorts from a configurable logistic
//! data-generating process, fits an honest causal forest and an X-learner
//! with and without access to the unmeasured confounder, and scores both
//! against a parametric oracle. A negative-control outcome, simulated from
//! the same confounding structure but untouched by treatment, provides a
//! falsification signal: any apparent treatment effect on it inside a
//! predicted-benefit subgroup is bias, not biology.
//!
//! Modules mirror the pipeline:
//!
//! * [`sim`] - scenario configuration and cohort generation
//! * [`glm`] - logistic regression, cross-validated lasso, regression forests
//! * [`causal`] - the honest causal forest with local centering and tuning
//! * [`xlearner`] - the two-stage lasso X-learner
//! * [`metrics`] - quartile assignment, error metrics, c-for-benefit, and
//!   the negative-control subgroup diagnostic
//! * [`harness`] - replication orchestration, aggregation, and file output

pub mod causal;
pub mod error;
pub mod glm;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod sim;
pub mod stream;
pub mod xlearner;

pub use error::Error;
pub use matrix::Matrix;
pub use sim::{Scenario, ScenarioSpec, Setting, SimDataset};
