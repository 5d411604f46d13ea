//! Lazy clients send the global model straight back. Once flagged three
//! times within ten rounds they are blacklisted and stop taking part.

use std::path::PathBuf;

use aadd::reporting::blacklist_timeline;
use aadd::{load_config, simulate, ConfusionMatrix};

fn main() -> aadd::Result<()> {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_lazy_blacklist.toml");
    let cfg = load_config(&path)?;
    let run = simulate(&cfg)?;

    for rec in &run.records {
        println!(
            "round {:>2}: {} active, flagged {:?}, blacklisted {:?}",
            rec.round,
            rec.active_clients.len(),
            rec.flagged_clients(),
            rec.blacklisted
        );
    }
    for entry in blacklist_timeline(&run.records) {
        println!("client {} out after round {}", entry.client_id, entry.round);
    }
    let cm = ConfusionMatrix::from_records(&run.records, &cfg.poisoned_set());
    println!("{} decisions: {cm:?}", cm.total());
    Ok(())
}
