//! Runs both detector versions on a hand-written round of five clients.
//! Client 2 is weak overall; client 3 looks fine on average but is far
//! behind on label 0, so only AADD 2.0 catches it.

use aadd::{detect_round, ClientAccuracy, DetectorConfig, DetectorVersion};

fn main() {
    let table = [
        (69.3, [60.0, 73.0, 75.0]),
        (67.3, [57.0, 68.0, 77.0]),
        (50.0, [62.0, 45.0, 43.0]),
        (57.6, [22.0, 67.0, 84.0]),
        (64.6, [59.0, 70.0, 65.0]),
    ];
    let clients: Vec<ClientAccuracy> = table
        .iter()
        .enumerate()
        .map(|(id, (overall, labels))| ClientAccuracy {
            client_id: id,
            overall: overall / 100.0,
            per_label: labels.iter().map(|v| Some(v / 100.0)).collect(),
        })
        .collect();

    for version in [DetectorVersion::Aadd1, DetectorVersion::Aadd2] {
        println!("{version:?} at round 15:");
        for e in detect_round(&clients, 15, &DetectorConfig::new(version)) {
            println!(
                "  client {} flagged ({}): {:.3} < {:.3} - {:.3}",
                e.client_id, e.cause, e.observed, e.mean, e.threshold
            );
        }
    }
}
