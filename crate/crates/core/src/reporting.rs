//! Detection accounting and result files.
//!
//! Output files:
//!
//! * `rounds.csv` has one row per (round, active client). Columns are
//!   `round,client_id,overall_acc,label_0,...,label_{C-1},flag_causes`.
//!   Labels absent from the test set leave their cell empty. `flag_causes`
//!   joins the client's causes that round with `;` and is empty when the
//!   client was not flagged.
//! * `summary.json` holds, in this order: `config`, `status`,
//!   `num_classes`, `confusion_matrix`, `outcome`, `blacklist_timeline`,
//!   `global_accuracy`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectionEvent;
use crate::error::{Error, Result};
use crate::federation::{RoundRecord, RunStatus};

/// Detection decisions tallied against ground truth. One decision per
/// (client, round) in which the client was active.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    /// Adds one round of decisions. A client is a positive if it has at
    /// least one event, however many causes it tripped.
    pub fn update(
        &mut self,
        events: &[DetectionEvent],
        active: &[usize],
        poisoned: &BTreeSet<usize>,
    ) {
        let flagged: BTreeSet<usize> = events.iter().map(|e| e.client_id).collect();
        for client in active {
            match (flagged.contains(client), poisoned.contains(client)) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn from_records(records: &[RoundRecord], poisoned: &BTreeSet<usize>) -> Self {
        let mut m = Self::default();
        for r in records {
            m.update(&r.flags, &r.active_clients, poisoned);
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn actual_positive(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn actual_negative(&self) -> usize {
        self.fp + self.tn
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.actual_negative())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.actual_positive())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Functional form of the accounting above, for callers holding per-round
/// slices instead of records.
pub fn update_confusion_matrix<'a>(
    rounds: impl IntoIterator<Item = (&'a [DetectionEvent], &'a [usize])>,
    poisoned: &BTreeSet<usize>,
) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for (events, active) in rounds {
        m.update(events, active, poisoned);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackClass {
    /// Drop of 1.0 to 1.5 percentage points (inclusive).
    Successful,
    /// Drop smaller than 1.0 point, or no drop.
    Insufficient,
    /// Drop larger than 1.5 points.
    Excessive,
}

/// Slack on the band edges so that inputs like `0.80 -> 0.79` (which is
/// `-1.0000000000000009` in binary floating point) land inside the band.
const BAND_TOLERANCE_PP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub baseline_accuracy: f64,
    pub poisoned_accuracy: f64,
    pub delta_pp: f64,
    pub classification: AttackClass,
}

pub fn classify_attack_success(baseline: f64, poisoned: f64) -> AttackOutcome {
    let delta_pp = (poisoned - baseline) * 100.0;
    let classification = if delta_pp > -1.0 + BAND_TOLERANCE_PP {
        AttackClass::Insufficient
    } else if delta_pp < -1.5 - BAND_TOLERANCE_PP {
        AttackClass::Excessive
    } else {
        AttackClass::Successful
    };
    AttackOutcome {
        baseline_accuracy: baseline,
        poisoned_accuracy: poisoned,
        delta_pp,
        classification,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub client_id: usize,
    /// Round at whose end the client was blacklisted.
    pub round: usize,
}

/// Contents of `summary.json`. Field order is the serialized key order.
#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a, C: Serialize> {
    pub config: &'a C,
    pub status: RunStatus,
    pub num_classes: usize,
    pub confusion_matrix: ConfusionMatrix,
    pub outcome: AttackOutcome,
    pub blacklist_timeline: Vec<BlacklistEntry>,
    pub global_accuracy: Vec<f64>,
}

impl<'a, C: Serialize> Summary<'a, C> {
    pub fn new(
        config: &'a C,
        status: RunStatus,
        num_classes: usize,
        records: &[RoundRecord],
        confusion_matrix: ConfusionMatrix,
        outcome: AttackOutcome,
    ) -> Self {
        Self {
            config,
            status,
            num_classes,
            confusion_matrix,
            outcome,
            blacklist_timeline: blacklist_timeline(records),
            global_accuracy: records.iter().map(|r| r.global_accuracy).collect(),
        }
    }
}

pub fn blacklist_timeline(records: &[RoundRecord]) -> Vec<BlacklistEntry> {
    records
        .iter()
        .flat_map(|r| {
            r.blacklisted.iter().map(move |&client_id| BlacklistEntry {
                client_id,
                round: r.round,
            })
        })
        .collect()
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|a| a.to_string()).unwrap_or_default()
}

/// Renders `rounds.csv` into memory.
pub fn rounds_csv(records: &[RoundRecord], num_classes: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "round".to_string(),
        "client_id".into(),
        "overall_acc".into(),
    ];
    header.extend((0..num_classes).map(|l| format!("label_{l}")));
    header.push("flag_causes".into());
    let csv_err = |e: csv::Error| Error::Protocol(format!("csv encoding failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        for client in &r.active_clients {
            let mut row = vec![
                r.round.to_string(),
                client.to_string(),
                fmt_acc(r.client_accuracies.get(client).copied()),
            ];
            let labels = r.client_label_accuracies.get(client);
            row.extend(
                (0..num_classes).map(|l| fmt_acc(labels.and_then(|v| v.get(l).copied().flatten()))),
            );
            let causes: Vec<String> = r
                .flags
                .iter()
                .filter(|e| e.client_id == *client)
                .map(|e| e.cause.to_string())
                .collect();
            row.push(causes.join(";"));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Protocol(format!("csv encoding failed: {e}")))
}

/// Writes `rounds.csv` and `summary.json` into `dir`, creating it if needed.
pub fn emit_reports<C: Serialize>(
    records: &[RoundRecord],
    summary: &Summary<'_, C>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("rounds.csv");
    let csv = rounds_csv(records, summary.num_classes)?;
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(summary)
        .map_err(|e| Error::Protocol(format!("summary encoding failed: {e}")))?;
    json.write_all(b"\n").expect("writing to a Vec cannot fail");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}
