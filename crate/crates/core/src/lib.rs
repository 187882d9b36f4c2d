//! Consistency testing for in-context learners.
//!
//! The crate builds a full factorial space of few-shot prompts over natural
//! language inference data, collects label predictions from a pluggable
//! model backend and measures how stable those predictions are when
//! task-irrelevant parts of the prompt change.
//!
//! Modules, bottom-up:
//!
//! * [`corpus`]: datasets, stable data IDs, evaluation-set sampling, training pools
//! * [`template`]: instruction templates, byte-exact rendering, label matching
//! * [`design`]: factors, setup enumeration and the setup-ID digit codec
//! * [`sampler`]: in-context selection and prompt assembly per setup
//! * [`model`]: label scoring backends, greedy prediction, contextual calibration
//! * [`metrics`]: masking, accuracy, Cohen's kappa, entropy consistency, diversity
//! * [`stats`]: least squares fits, main and interaction effects, template ranking

pub mod corpus;
pub mod design;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod stats;
pub mod synthetic;
pub mod template;

mod hashing;

pub use corpus::{Corpus, DataRecord, Split, Task};
pub use design::{Factor, FactorSet, Level, Setup, SetupId};
pub use metrics::EvalTable;
pub use model::{LabelScores, Prediction};
pub use sampler::PromptInstance;
pub use template::InstructionTemplate;
