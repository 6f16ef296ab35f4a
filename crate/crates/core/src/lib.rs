//! Desk-scale engine for online 3D bin packing under physical-stability
//! constraints: exact axis-aligned geometry, empty-maximal-space placement
//! candidates, quasi-static settling with domain-randomized physics,
//! heuristic and softmax policies, policy-gradient training with
//! importance-sampled fine-tuning, dataset generation and an evaluation
//! harness for space-utilization and collapse-rate metrics.

pub mod config;
pub mod data;
pub mod ems;
pub mod env;
pub mod geometry;
pub mod learn;
pub mod metrics;
pub mod policy;
pub mod randomizer;
pub mod stability;

pub use config::ExperimentConfig;
pub use ems::{ActionCandidate, AnchorMode, EmsBox, GripperSpec};
pub use env::{EpisodeResult, PackState, TerminalKind, TrajectoryRecord, Transition};
pub use geometry::{ContainerState, ItemId, ItemSpec, PlacedItem, Pose, Unit};
pub use policy::{FeatureVector, PackPolicy, SoftmaxPolicy};
pub use randomizer::{ParamRange, ParamTable};
pub use stability::{CollapseThresholds, PhysicsParams, SettleOutcome, StabilityConfig};
