//! Average accuracy deviation detection.
//!
//! After each round the server evaluates every client's local model on the
//! server test set and compares each client with the cross-client mean. A
//! client whose overall accuracy sits more than a round-dependent threshold
//! below the mean is flagged (`AADD 1.0`). Version 2.0 additionally runs the
//! same comparison per class label with a wider threshold.
//!
//! The threshold for round `r` is
//!
//! ```text
//! eps(r, s) = x^(-1/1.5) * (3300 * ln x)^(1/3) * 1.6 * s / 100,   x = r + 2
//! ```
//!
//! which starts near 0.133 and decays slowly, so later rounds with tighter
//! client agreement are checked more strictly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the threshold curve. The defaults reproduce the reference
/// curve; all of them can be overridden from the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdParams {
    pub base: f64,
    pub gain: f64,
    /// `x` is raised to `-decay_exponent`.
    pub decay_exponent: f64,
    /// `base * ln x` is raised to `log_exponent`.
    pub log_exponent: f64,
    /// `x = round + round_offset`; must exceed 1 so that `ln x > 0`.
    pub round_offset: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            base: 3300.0,
            gain: 1.6,
            decay_exponent: 1.0 / 1.5,
            log_exponent: 1.0 / 3.0,
            round_offset: 2.0,
        }
    }
}

impl ThresholdParams {
    pub fn epsilon(&self, round: usize, scale: f64) -> f64 {
        let x = round as f64 + self.round_offset;
        (x.powf(-self.decay_exponent)
            * (self.base * x.ln()).powf(self.log_exponent)
            * self.gain
            * scale)
            / 100.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("detector.threshold.{name}"),
                    "must be a positive finite number",
                ))
            }
        };
        positive("base", self.base)?;
        positive("gain", self.gain)?;
        positive("decay_exponent", self.decay_exponent)?;
        positive("log_exponent", self.log_exponent)?;
        if !(self.round_offset.is_finite() && self.round_offset > 1.0) {
            return Err(Error::config(
                "detector.threshold.round_offset",
                "must be greater than 1",
            ));
        }
        Ok(())
    }
}

/// Threshold for `round` with the default curve constants.
pub fn epsilon_threshold(round: usize, scale: f64) -> f64 {
    ThresholdParams::default().epsilon(round, scale)
}

/// Strict check: `mean - eps > client`.
pub fn check_average_deviation(client_acc: f64, mean_acc: f64, round: usize, scale: f64) -> bool {
    mean_acc - epsilon_threshold(round, scale) > client_acc
}

pub fn check_label_deviation(
    client_label_acc: f64,
    mean_label_acc: f64,
    round: usize,
    label_scale: f64,
) -> bool {
    mean_label_acc - epsilon_threshold(round, label_scale) > client_label_acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorVersion {
    /// Overall accuracy only.
    #[serde(rename = "aadd_1_0")]
    Aadd1,
    /// Overall accuracy and per-label accuracy.
    #[serde(rename = "aadd_2_0")]
    Aadd2,
}

fn default_average_scale() -> f64 {
    1.0
}
fn default_label_scale() -> f64 {
    4.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub version: DetectorVersion,
    #[serde(default = "default_average_scale")]
    pub average_scale: f64,
    #[serde(default = "default_label_scale")]
    pub label_scale: f64,
    #[serde(default)]
    pub threshold: ThresholdParams,
}

impl DetectorConfig {
    pub fn new(version: DetectorVersion) -> Self {
        Self {
            version,
            average_scale: default_average_scale(),
            label_scale: default_label_scale(),
            threshold: ThresholdParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("average_scale", self.average_scale),
            ("label_scale", self.label_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("detector.{name}"),
                    "must be a positive finite number",
                ));
            }
        }
        self.threshold.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cause {
    AverageDeviation,
    LabelDeviation { label: usize },
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::AverageDeviation => f.write_str("average_deviation"),
            Cause::LabelDeviation { label } => write!(f, "label_deviation:{label}"),
        }
    }
}

/// One tripped check. `observed < mean - threshold` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub round: usize,
    pub client_id: usize,
    pub cause: Cause,
    pub observed: f64,
    pub mean: f64,
    pub threshold: f64,
}

/// What the detector sees of one client's local model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientAccuracy {
    pub client_id: usize,
    pub overall: f64,
    /// `None` where the label is absent from the evaluation set.
    pub per_label: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Runs the configured checks over one round of client accuracies.
///
/// Means are taken over all given clients, including the one under test.
/// Labels missing from any client's evaluation are skipped. With fewer than
/// two clients nothing can deviate from the mean and no events are emitted.
pub fn detect_round(
    clients: &[ClientAccuracy],
    round: usize,
    cfg: &DetectorConfig,
) -> Vec<DetectionEvent> {
    if clients.len() < 2 {
        log::info!(
            "round {round}: {} active client(s), skipping detection",
            clients.len()
        );
        return Vec::new();
    }
    let mut events = Vec::new();

    let avg_threshold = cfg.threshold.epsilon(round, cfg.average_scale);
    let avg_mean = mean(clients.iter().map(|c| c.overall));

    let label_means: Vec<Option<f64>> = if cfg.version == DetectorVersion::Aadd2 {
        let num_labels = clients.iter().map(|c| c.per_label.len()).max().unwrap_or(0);
        (0..num_labels)
            .map(|l| {
                let present: Option<Vec<f64>> = clients
                    .iter()
                    .map(|c| c.per_label.get(l).copied().flatten())
                    .collect();
                if present.is_none() {
                    log::debug!("round {round}: label {l} missing for some client, skipped");
                }
                present.map(|v| mean(v.into_iter()))
            })
            .collect()
    } else {
        Vec::new()
    };
    let label_threshold = cfg.threshold.epsilon(round, cfg.label_scale);

    for c in clients {
        if avg_mean - avg_threshold > c.overall {
            events.push(DetectionEvent {
                round,
                client_id: c.client_id,
                cause: Cause::AverageDeviation,
                observed: c.overall,
                mean: avg_mean,
                threshold: avg_threshold,
            });
        }
        for (label, m) in label_means.iter().enumerate() {
            let (Some(m), Some(Some(acc))) = (m, c.per_label.get(label)) else {
                continue;
            };
            if m - label_threshold > *acc {
                events.push(DetectionEvent {
                    round,
                    client_id: c.client_id,
                    cause: Cause::LabelDeviation { label },
                    observed: *acc,
                    mean: *m,
                    threshold: label_threshold,
                });
            }
        }
    }
    events
}
