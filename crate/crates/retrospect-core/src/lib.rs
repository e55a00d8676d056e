//! Core library for synthesizing multi-level reflections from agent task
//! trajectories and training data for a retrospective model.
//!
//! The pipeline runs in four stages over a pool of trajectories:
//! retry loops with per-trial reflection, error-taxonomy induction and
//! per-step classification, cross-task clustering with per-error-type
//! reflection, and a final merge that distills everything into one
//! reflection per trajectory. A foresight loop covers interactive tasks
//! where retries are impossible.

pub mod canonical;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod fixtures;
pub mod foresight;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pool;
pub mod synthesis;
pub mod taxonomy;
pub mod trials;

pub use config::{BackendConfig, ReductionFormula, ReferencePolicy, RunConfig};
pub use error::{Error, Result};
pub use gateway::{Backend, Gateway, PromptRole};
pub use model::{
    ErrorLabel, ErrorPath, ErrorTaxonomy, ErrorType, ForesightTurn, MergeManifest, Outcome,
    Reflection, ReflectionLevel, ReflectionSource, Step, TaskInstance, Trajectory,
};
pub use pool::TrajectoryPool;
