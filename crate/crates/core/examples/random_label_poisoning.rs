//! Two of ten clients flip labels at random. Prints which clients AADD
//! flags each round and how much the final model loses.

use std::path::PathBuf;

use aadd::{classify_attack_success, load_config, simulate, ConfusionMatrix};

fn main() -> aadd::Result<()> {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_random_label.toml");
    let cfg = load_config(&path)?;

    let clean = simulate(&cfg.baseline())?;
    let poisoned = simulate(&cfg)?;
    for rec in &poisoned.records {
        println!(
            "round {:>2}  global {:.4}  flagged {:?}",
            rec.round,
            rec.global_accuracy,
            rec.flagged_clients()
        );
    }

    let cm = ConfusionMatrix::from_records(&poisoned.records, &cfg.poisoned_set());
    println!(
        "{cm:?}, false-positive rate {:.3}",
        cm.false_positive_rate()
    );
    let outcome = classify_attack_success(
        clean.final_accuracy().unwrap(),
        poisoned.final_accuracy().unwrap(),
    );
    println!(
        "final accuracy {:.4} -> {:.4} ({:+.2} pp, {:?})",
        outcome.baseline_accuracy,
        outcome.poisoned_accuracy,
        outcome.delta_pp,
        outcome.classification
    );
    Ok(())
}
