//! Sweeps how many clients relabel class 3 as class 5 and classifies each
//! attack by the drop in final accuracy. A drop of 1.0 to 1.5 points counts
//! as successful: noticeable damage that is still easy to miss.

use std::path::PathBuf;

use aadd::{
    classify_attack_success, load_config, simulate, PoisonConfig, PoisonedClient, TargetLabel,
};

fn main() -> aadd::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_clean.toml");
    let base = load_config(&path)?;
    let baseline = simulate(&base)?.final_accuracy().unwrap();

    for attackers in 1..=5 {
        for part_of_labels in [0.5, 1.0] {
            let mut cfg = base.clone();
            cfg.poisoned_clients = (0..attackers)
                .map(|client_id| PoisonedClient {
                    client_id,
                    poison: PoisonConfig::SpecificLabel {
                        source_label: 3,
                        target_label: TargetLabel::Class(5),
                        part_of_labels,
                        rng_seed: None,
                    },
                })
                .collect();
            let acc = simulate(&cfg)?.final_accuracy().unwrap();
            let o = classify_attack_success(baseline, acc);
            println!(
                "{attackers} attacker(s), {:>3.0}% of class 3: {:.4} -> {:.4} ({:+.2} pp) {:?}",
                part_of_labels * 100.0,
                o.baseline_accuracy,
                o.poisoned_accuracy,
                o.delta_pp,
                o.classification
            );
        }
    }
    Ok(())
}
