//! Personalized mood prediction from sparse self-reported check-ins.
//!
//! A check-in is one cell on the 8×8 core-affect grid together with whatever
//! environmental factors (weather, calendar, fitness) the user has shared.
//! Predictions retrieve similar past moments per factor, weight each factor
//! by how well it has tracked the user's mood so far, and return a short
//! ranked list of candidate cells.

pub mod config;
pub mod dataset;
pub mod emotion;
pub mod error;
pub mod evaluation;
pub mod factor;
pub mod ingest;
pub mod personalization;
pub mod predictor;
pub mod profile;
pub mod similarity;
pub mod simulator;

pub use config::{ConfigOverrides, ModelConfig};
pub use emotion::{grid_center, nearest_cell, within_tolerance, EmotionPoint, GridIndex};
pub use error::{DataError, EmotionError, FactorError, IngestError, ModelError};
pub use factor::{
    default_registry, validate_snapshot, CheckIn, EnvSnapshot, FactorDescriptor, FactorKind,
    FactorRegistry, FactorValue, RangePolicy, SourceGroup,
};
pub use ingest::{snapshot_at, SourceRecord};
pub use personalization::{process_feedback, FeedbackReport};
pub use predictor::{predict, Candidate, Prediction};
pub use profile::{PersonalWeights, UserProfile};
pub use similarity::{retrieve, SimilarityTable};
