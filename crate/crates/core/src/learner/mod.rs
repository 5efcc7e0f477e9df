//! Differentiable temporal walk, scoring and training.

pub mod controller;
pub mod features;
pub mod model;
pub mod score;
pub mod tape;
pub mod train;
pub mod walk;

pub use controller::{attention, AttentionState, ControllerKind, Mix, ParamSpace};
pub use features::{targets_for, FeatureContext, Grids, QueryFeatures, Scoring};
pub use score::{loss, probabilities, score_event_split, score_rule_split, Scorer};
pub use walk::{rule_score, walk_forward};
pub use train::{loss_and_grad, train, EpochStats, TrainConfig, TrainOutcome};
pub use model::{sha256_hex, Model};
