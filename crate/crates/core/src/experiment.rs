//! Experiment configuration and the end-to-end runner behind the `aadd run`
//! command.
//!
//! Configs are TOML. Every key is optional except `master_seed`; unknown
//! keys are rejected. Defaults:
//!
//! | key                   | default                      |
//! |-----------------------|------------------------------|
//! | `num_clients`         | 10                           |
//! | `rounds`              | 16                           |
//! | `output_dir`          | `aadd-output`                |
//! | `discard_on_arrival`  | false                        |
//! | `baseline_accuracy`   | unset (clean run computed)   |
//! | `workers`             | 1                            |
//! | `[dataset]`           | see [`DatasetSpec`]          |
//! | `[model] hidden_units`| 0 (logistic regression)      |
//! | `[train]`             | 10 epochs, batch 128, lr 0.1 |
//! | `[detector]`          | enabled, `aadd_2_0`, scales 1.0 / 4.8 |
//! | `[blacklist]`         | disabled, 3 of the last 10   |
//! | `[[poisoned_clients]]`| none                         |
//!
//! Seeds not given explicitly are derived from `master_seed` with
//! [`crate::seed::derive_seed`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::PoisonConfig;
use crate::data::{
    generate_synthetic_dataset, load_dataset_file, partition_homogeneous, DatasetSpec,
    LabeledExample,
};
use crate::detector::{DetectorConfig, DetectorVersion, ThresholdParams};
use crate::error::{Error, Result};
use crate::federation::{
    BlacklistPolicy, ClientState, Federation, FederationConfig, RoundRecord, RunStatus,
};
use crate::model::{init_params, ModelShape, TrainConfig};
use crate::reporting::{
    classify_attack_success, emit_reports, AttackOutcome, ConfusionMatrix, Summary,
};
use crate::seed::{derive_seed, TAG_DATASET, TAG_INIT, TAG_PARTITION};

fn default_num_clients() -> usize {
    10
}
fn default_rounds() -> usize {
    16
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("aadd-output")
}
fn default_workers() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_version() -> DetectorVersion {
    DetectorVersion::Aadd2
}
fn default_average_scale() -> f64 {
    1.0
}
fn default_label_scale() -> f64 {
    4.8
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// 0 selects plain logistic regression.
    #[serde(default)]
    pub hidden_units: usize,
}

/// `[detector]` section: a [`DetectorConfig`] plus an on/off switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_version")]
    pub version: DetectorVersion,
    #[serde(default = "default_average_scale")]
    pub average_scale: f64,
    #[serde(default = "default_label_scale")]
    pub label_scale: f64,
    #[serde(default)]
    pub threshold: ThresholdParams,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            version: default_version(),
            average_scale: default_average_scale(),
            label_scale: default_label_scale(),
            threshold: ThresholdParams::default(),
        }
    }
}

impl DetectorSettings {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn to_config(&self) -> Option<DetectorConfig> {
        self.enabled.then_some(DetectorConfig {
            version: self.version,
            average_scale: self.average_scale,
            label_scale: self.label_scale,
            threshold: self.threshold,
        })
    }
}

impl From<DetectorConfig> for DetectorSettings {
    fn from(c: DetectorConfig) -> Self {
        Self {
            enabled: true,
            version: c.version,
            average_scale: c.average_scale,
            label_scale: c.label_scale,
            threshold: c.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonedClient {
    pub client_id: usize,
    pub poison: PoisonConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Compare against this accuracy instead of running a clean baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
    #[serde(default)]
    pub discard_on_arrival: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detector: DetectorSettings,
    #[serde(default)]
    pub blacklist: BlacklistPolicy,
    #[serde(default)]
    pub poisoned_clients: Vec<PoisonedClient>,
}

impl ExperimentConfig {
    /// A config with every default and the given seed.
    pub fn with_seed(master_seed: u64) -> Self {
        toml::from_str(&format!("master_seed = {master_seed}")).expect("defaults parse")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if let Some(b) = self.baseline_accuracy {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config("baseline_accuracy", "must lie in [0, 1]"));
            }
        }
        self.dataset.validate()?;
        self.train.validate()?;
        self.blacklist.validate()?;
        if let Some(d) = self.detector.to_config() {
            d.validate()?;
        }
        let mut seen = BTreeSet::new();
        for (i, pc) in self.poisoned_clients.iter().enumerate() {
            let field = format!("poisoned_clients[{i}].client_id");
            if pc.client_id >= self.num_clients {
                return Err(Error::config(
                    field,
                    format!(
                        "{} is not below num_clients = {}",
                        pc.client_id, self.num_clients
                    ),
                ));
            }
            if !seen.insert(pc.client_id) {
                return Err(Error::config(
                    field,
                    format!("{} listed twice", pc.client_id),
                ));
            }
            pc.poison.validate(
                &format!("poisoned_clients[{i}].poison"),
                self.dataset.num_classes,
                self.dataset.feature_dim,
            )?;
        }
        Ok(())
    }

    /// Ground-truth set of clients running any attack.
    pub fn poisoned_set(&self) -> BTreeSet<usize> {
        self.poisoned_clients
            .iter()
            .filter(|p| p.poison.is_poisoned())
            .map(|p| p.client_id)
            .collect()
    }

    /// Fills in derived seeds and switches features to pixel scale when a
    /// pixel attack is configured. Idempotent.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.dataset.generator_seed.is_none() {
            cfg.dataset.generator_seed = Some(derive_seed(cfg.master_seed, TAG_DATASET, &[]));
        }
        if cfg
            .poisoned_clients
            .iter()
            .any(|p| matches!(p.poison, PoisonConfig::RandomPixel { .. }))
        {
            cfg.dataset.pixel_range = true;
        }
        cfg
    }

    /// The same experiment with every client clean.
    pub fn baseline(&self) -> Self {
        Self {
            poisoned_clients: Vec::new(),
            ..self.clone()
        }
    }
}

/// Reads and validates a TOML experiment config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Train pool and test set for a resolved config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let spec = &cfg.dataset;
    match (&spec.train_file, &spec.test_file) {
        (Some(train), Some(test)) => {
            let train = load_dataset_file(train, spec.num_classes)?;
            let test = load_dataset_file(test, spec.num_classes)?;
            for (name, set) in [("train_file", &train), ("test_file", &test)] {
                if set.is_empty() {
                    return Err(Error::config(
                        format!("dataset.{name}"),
                        "file holds no examples",
                    ));
                }
                if set[0].features.len() != spec.feature_dim {
                    return Err(Error::config(
                        format!("dataset.{name}"),
                        format!(
                            "{} features per example, config says feature_dim = {}",
                            set[0].features.len(),
                            spec.feature_dim
                        ),
                    ));
                }
            }
            Ok((train, test))
        }
        _ => generate_synthetic_dataset(spec, spec.examples_per_client * cfg.num_clients),
    }
}

/// Federation ready to run round 0 for a resolved config.
pub fn build_federation(
    cfg: &ExperimentConfig,
    train: &[LabeledExample],
    test: Vec<LabeledExample>,
) -> Result<Federation> {
    let shards = partition_homogeneous(
        train,
        cfg.num_clients,
        derive_seed(cfg.master_seed, TAG_PARTITION, &[]),
    )?;
    let clients = shards
        .into_iter()
        .map(|shard| {
            let poison = cfg
                .poisoned_clients
                .iter()
                .find(|p| p.client_id == shard.client_id)
                .map(|p| p.poison.clone())
                .unwrap_or_default();
            ClientState {
                client_id: shard.client_id,
                shard,
                poison,
                active: true,
            }
        })
        .collect();
    let (offset, scale) = cfg.dataset.input_normalization();
    let shape = ModelShape::linear(cfg.dataset.feature_dim, cfg.dataset.num_classes)
        .with_hidden(cfg.model.hidden_units)
        .with_input_normalization(offset, scale);
    let initial = init_params(shape, derive_seed(cfg.master_seed, TAG_INIT, &[]));
    Federation::new(
        clients,
        test,
        initial,
        FederationConfig {
            train: cfg.train.clone(),
            detector: cfg.detector.to_config(),
            blacklist: cfg.blacklist,
            discard_on_arrival: cfg.discard_on_arrival,
            master_seed: cfg.master_seed,
            workers: cfg.workers,
        },
    )
}

/// Records and status of one simulated federation.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub status: RunStatus,
    pub records: Vec<RoundRecord>,
}

impl SimulationRun {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.global_accuracy)
    }
}

/// Runs the federation for a config without writing anything.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let (train, test) = build_dataset(&cfg)?;
    let mut fed = build_federation(&cfg, &train, test)?;
    let status = fed.run(cfg.rounds)?;
    Ok(SimulationRun {
        status,
        records: fed.into_history(),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// The config after seed resolution, as echoed into `summary.json`.
    pub config: ExperimentConfig,
    pub run: SimulationRun,
    /// Clean comparison run, when one was needed.
    pub baseline: Option<SimulationRun>,
    pub confusion_matrix: ConfusionMatrix,
    pub outcome: AttackOutcome,
}

/// Runs the configured experiment, compares it with a clean baseline and
/// writes `rounds.csv` and `summary.json` to `cfg.output_dir`.
///
/// The baseline is a second run of the same config with no poisoned
/// clients. It is skipped when `baseline_accuracy` is given or when the
/// experiment itself is clean.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let resolved = cfg.resolved();
    let run = simulate(&resolved)?;
    let final_acc = run.final_accuracy().unwrap_or(0.0);

    let poisoned = resolved.poisoned_set();
    let (baseline_run, baseline_acc) = match resolved.baseline_accuracy {
        Some(b) => (None, b),
        None if poisoned.is_empty() => (None, final_acc),
        None => {
            let b = simulate(&resolved.baseline())?;
            let acc = b.final_accuracy().unwrap_or(0.0);
            (Some(b), acc)
        }
    };

    let confusion_matrix = ConfusionMatrix::from_records(&run.records, &poisoned);
    let outcome = classify_attack_success(baseline_acc, final_acc);
    let summary = Summary::new(
        &resolved,
        run.status,
        resolved.dataset.num_classes,
        &run.records,
        confusion_matrix,
        outcome,
    );
    emit_reports(&run.records, &summary, &resolved.output_dir)?;
    log::info!(
        "wrote reports to {} ({:?})",
        resolved.output_dir.display(),
        run.status
    );
    Ok(ExperimentReport {
        config: resolved,
        run,
        baseline: baseline_run,
        confusion_matrix,
        outcome,
    })
}
