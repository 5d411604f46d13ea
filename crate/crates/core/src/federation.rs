//! Synchronous FedAvg rounds with server-side evaluation, detection and
//! blacklisting.
//!
//! Each round every active client trains on its current partition (after
//! any poisoning) starting from the global parameters. The server averages
//! the updates, evaluates the new global model and every client's local
//! model on the test set, runs the detector and then applies the blacklist
//! policy. A client blacklisted at the end of round `r` still contributed to
//! round `r`'s aggregate and is excluded from round `r + 1` on.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{lazy_update, PoisonConfig};
use crate::data::{select_round_partition, ClientShard, LabeledExample};
use crate::detector::{detect_round, ClientAccuracy, DetectionEvent, DetectorConfig};
use crate::error::{Error, Result};
use crate::model::{evaluate, train_local, EvalResult, ParameterVector, TrainConfig};
use crate::seed::{derive_seed, TAG_POISON, TAG_TRAIN};

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    pub poison: PoisonConfig,
    /// Cleared permanently when the client is blacklisted.
    pub active: bool,
}

fn default_detections_required() -> usize {
    3
}
fn default_window_rounds() -> usize {
    10
}

/// Blacklist a client once it has been flagged in `detections_required` of
/// the last `window_rounds` rounds (current round included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlacklistPolicy {
    #[serde(default = "default_detections_required")]
    pub detections_required: usize,
    #[serde(default = "default_window_rounds")]
    pub window_rounds: usize,
    #[serde(default)]
    pub enabled: bool,
}

impl Default for BlacklistPolicy {
    fn default() -> Self {
        Self {
            detections_required: default_detections_required(),
            window_rounds: default_window_rounds(),
            enabled: false,
        }
    }
}

impl BlacklistPolicy {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.detections_required == 0 || self.detections_required > self.window_rounds {
            return Err(Error::config(
                "blacklist.detections_required",
                format!(
                    "must lie in [1, window_rounds = {}], got {}",
                    self.window_rounds, self.detections_required
                ),
            ));
        }
        Ok(())
    }
}

/// Evaluation snapshot of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_accuracy: f64,
    pub global_label_accuracies: Vec<Option<f64>>,
    pub client_accuracies: BTreeMap<usize, f64>,
    pub client_label_accuracies: BTreeMap<usize, Vec<Option<f64>>>,
    pub flags: Vec<DetectionEvent>,
    pub active_clients: Vec<usize>,
    /// Clients blacklisted at the end of this round.
    pub blacklisted: Vec<usize>,
    /// Clients whose update was left out of this round's aggregate.
    pub discarded: Vec<usize>,
}

impl RoundRecord {
    /// Clients with at least one detection event this round.
    pub fn flagged_clients(&self) -> BTreeSet<usize> {
        self.flags.iter().map(|e| e.client_id).collect()
    }
}

/// Weighted coordinate-wise mean, weights proportional to sample count.
///
/// Updates are folded in the given order as a running mean, and each result
/// coordinate is clamped to the range spanned by the inputs so rounding
/// never leaves the convex hull.
pub fn aggregate_fedavg(updates: &[(ParameterVector, usize)]) -> Result<ParameterVector> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::Precondition("no updates to aggregate".into()));
    };
    for (p, count) in updates {
        if p.shape != first.shape || p.len() != first.len() {
            return Err(Error::Protocol(format!(
                "update with {} parameters does not match {}",
                p.len(),
                first.len()
            )));
        }
        if *count == 0 {
            return Err(Error::Precondition("sample counts must be positive".into()));
        }
    }
    let mut mean = first.values.clone();
    let mut lo = first.values.clone();
    let mut hi = first.values.clone();
    let mut seen = updates[0].1 as f64;
    for (p, count) in &updates[1..] {
        seen += *count as f64;
        let w = *count as f64 / seen;
        for (i, &v) in p.values.iter().enumerate() {
            mean[i] += (v - mean[i]) * w;
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    for ((m, l), h) in mean.iter_mut().zip(&lo).zip(&hi) {
        *m = m.clamp(*l, *h);
    }
    Ok(ParameterVector {
        values: mean,
        shape: first.shape,
    })
}

/// Clients flagged in at least `detections_required` of the trailing
/// `window_rounds` rounds, judged at the last round in `history`.
pub fn apply_blacklist_policy(
    history: &[RoundRecord],
    policy: &BlacklistPolicy,
) -> BTreeSet<usize> {
    let Some(last) = history.last() else {
        return BTreeSet::new();
    };
    if !policy.enabled {
        return BTreeSet::new();
    }
    let start = (last.round + 1).saturating_sub(policy.window_rounds);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for record in history
        .iter()
        .filter(|r| r.round >= start && r.round <= last.round)
    {
        for client in record.flagged_clients() {
            *counts.entry(client).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n >= policy.detections_required)
        .map(|(c, _)| c)
        .collect()
}

/// Server-side settings of a simulation.
#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub train: TrainConfig,
    pub detector: Option<DetectorConfig>,
    pub blacklist: BlacklistPolicy,
    /// Drop updates from clients flagged in the previous round.
    pub discard_on_arrival: bool,
    pub master_seed: u64,
    /// Threads used for client training; results do not depend on it.
    pub workers: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            detector: None,
            blacklist: BlacklistPolicy::default(),
            discard_on_arrival: false,
            master_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed {
        rounds: usize,
    },
    /// Every client was blacklisted before `round` could start.
    Halted {
        round: usize,
    },
}

struct ClientResult {
    client_id: usize,
    update: ParameterVector,
    samples: usize,
    eval: EvalResult,
}

pub struct Federation {
    clients: Vec<ClientState>,
    test: Vec<LabeledExample>,
    global: ParameterVector,
    cfg: FederationConfig,
    history: Vec<RoundRecord>,
    discard_next: BTreeSet<usize>,
    pool: Option<rayon::ThreadPool>,
}

impl Federation {
    pub fn new(
        clients: Vec<ClientState>,
        test: Vec<LabeledExample>,
        initial: ParameterVector,
        cfg: FederationConfig,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("num_clients", "must be positive"));
        }
        if test.is_empty() {
            return Err(Error::Precondition("server test set is empty".into()));
        }
        cfg.train.validate()?;
        cfg.blacklist.validate()?;
        if let Some(d) = &cfg.detector {
            d.validate()?;
        }
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::config("workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            clients,
            test,
            global: initial,
            cfg,
            history: Vec::new(),
            discard_next: BTreeSet::new(),
            pool,
        })
    }

    pub fn global(&self) -> &ParameterVector {
        &self.global
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn into_history(self) -> Vec<RoundRecord> {
        self.history
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn active_clients(&self) -> Vec<usize> {
        self.clients
            .iter()
            .filter(|c| c.active)
            .map(|c| c.client_id)
            .collect()
    }

    fn client_step(&self, client: &ClientState, round: usize) -> Result<ClientResult> {
        let partition = select_round_partition(&client.shard, round);
        let id = client.client_id as u64;
        let update = if client.poison.is_lazy() {
            lazy_update(&self.global)
        } else {
            let poison_seed = match client.poison.rng_seed() {
                Some(s) => derive_seed(s, TAG_POISON, &[round as u64]),
                None => derive_seed(self.cfg.master_seed, TAG_POISON, &[id, round as u64]),
            };
            let data = client.poison.apply(partition, poison_seed)?;
            let train = TrainConfig {
                rng_seed: derive_seed(
                    self.cfg.master_seed,
                    TAG_TRAIN,
                    &[self.cfg.train.rng_seed, id, round as u64],
                ),
                ..self.cfg.train.clone()
            };
            train_local(&self.global, &data, &train)?
        };
        let eval = evaluate(&update, &self.test)?;
        Ok(ClientResult {
            client_id: client.client_id,
            update,
            samples: partition.len(),
            eval,
        })
    }

    /// Runs one round and appends its record to the history.
    pub fn run_round(&mut self, round: usize) -> Result<RoundRecord> {
        let active: Vec<&ClientState> = self.clients.iter().filter(|c| c.active).collect();
        if active.is_empty() {
            return Err(Error::NoActiveClients { round });
        }
        let results: Vec<ClientResult> = match &self.pool {
            Some(pool) => pool.install(|| {
                active
                    .par_iter()
                    .map(|c| self.client_step(c, round))
                    .collect::<Result<_>>()
            })?,
            None => active
                .iter()
                .map(|c| self.client_step(c, round))
                .collect::<Result<_>>()?,
        };

        let mut discarded = Vec::new();
        let mut contributions = Vec::with_capacity(results.len());
        for r in &results {
            if self.cfg.discard_on_arrival && self.discard_next.contains(&r.client_id) {
                discarded.push(r.client_id);
            } else {
                contributions.push((r.update.clone(), r.samples));
            }
        }
        if !contributions.is_empty() {
            self.global = aggregate_fedavg(&contributions)?;
        }
        let global_eval = evaluate(&self.global, &self.test)?;

        let flags = match &self.cfg.detector {
            Some(det) => {
                let accs: Vec<ClientAccuracy> = results
                    .iter()
                    .map(|r| ClientAccuracy {
                        client_id: r.client_id,
                        overall: r.eval.overall_accuracy,
                        per_label: r.eval.per_label_accuracy.clone(),
                    })
                    .collect();
                detect_round(&accs, round, det)
            }
            None => Vec::new(),
        };

        let record = RoundRecord {
            round,
            global_accuracy: global_eval.overall_accuracy,
            global_label_accuracies: global_eval.per_label_accuracy,
            client_accuracies: results
                .iter()
                .map(|r| (r.client_id, r.eval.overall_accuracy))
                .collect(),
            client_label_accuracies: results
                .iter()
                .map(|r| (r.client_id, r.eval.per_label_accuracy.clone()))
                .collect(),
            flags,
            active_clients: results.iter().map(|r| r.client_id).collect(),
            blacklisted: Vec::new(),
            discarded,
        };
        self.discard_next = record.flagged_clients();
        self.history.push(record);

        let to_blacklist = apply_blacklist_policy(&self.history, &self.cfg.blacklist);
        let mut newly = Vec::new();
        for c in self.clients.iter_mut() {
            if c.active && to_blacklist.contains(&c.client_id) {
                c.active = false;
                newly.push(c.client_id);
            }
        }
        if !newly.is_empty() {
            log::info!("round {round}: blacklisted clients {newly:?}");
        }
        let last = self.history.last_mut().expect("just pushed");
        last.blacklisted = newly;
        Ok(last.clone())
    }

    /// Runs rounds `0..rounds`, stopping early if every client has been
    /// blacklisted.
    pub fn run(&mut self, rounds: usize) -> Result<RunStatus> {
        for round in 0..rounds {
            match self.run_round(round) {
                Ok(_) => {}
                Err(Error::NoActiveClients { round }) => {
                    log::warn!("all clients blacklisted; halting before round {round}");
                    return Ok(RunStatus::Halted { round });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(RunStatus::Completed { rounds })
    }
}
