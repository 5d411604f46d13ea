//! Deterministic federated learning simulator for studying poisoning
//! attacks and average accuracy deviation detection (AADD).
//!
//! A run partitions a seeded synthetic dataset over clients, trains a small
//! classifier with synchronous FedAvg, lets selected clients poison their
//! data or skip training, and has the server flag clients whose local model
//! is markedly less accurate than the client average. Flagged clients can be
//! blacklisted. Detection quality is tallied in a confusion matrix.
//!
//! Modules map onto the pipeline:
//!
//! * [`data`]: dataset generation, client shards, round partitions
//! * [`model`]: classifier, SGD training, per-label evaluation
//! * [`attacks`]: label flipping, pixel noise, lazy updates
//! * [`federation`]: FedAvg rounds and blacklisting
//! * [`detector`]: AADD 1.0 / 2.0
//! * [`reporting`]: confusion matrices, attack outcome, CSV/JSON output
//! * [`experiment`]: TOML configs and the end-to-end runner
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod attacks;
pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod model;
pub mod reporting;
pub mod seed;

pub use attacks::{lazy_update, PoisonConfig, TargetLabel};
pub use data::{ClientShard, DatasetSpec, LabeledExample};
pub use detector::{
    detect_round, epsilon_threshold, Cause, ClientAccuracy, DetectionEvent, DetectorConfig,
    DetectorVersion,
};
pub use error::{Error, Result};
pub use experiment::{load_config, run_experiment, simulate, ExperimentConfig, PoisonedClient};
pub use federation::{aggregate_fedavg, BlacklistPolicy, Federation, RoundRecord, RunStatus};
pub use model::{EvalResult, ModelShape, ParameterVector, TrainConfig};
pub use reporting::{classify_attack_success, AttackClass, AttackOutcome, ConfusionMatrix};
