//! Wires a federation together by hand from the lower-level pieces instead
//! of going through a config file.

use aadd::data::{generate_synthetic_dataset, partition_homogeneous};
use aadd::federation::{ClientState, FederationConfig};
use aadd::model::init_params;
use aadd::{
    DatasetSpec, DetectorConfig, DetectorVersion, Federation, ModelShape, PoisonConfig, TrainConfig,
};

fn main() -> aadd::Result<()> {
    let spec = DatasetSpec {
        generator_seed: Some(11),
        class_separation: 4.5,
        ..DatasetSpec::default()
    };
    let (train, test) = generate_synthetic_dataset(&spec, 6 * 200)?;
    let clients = partition_homogeneous(&train, 6, 12)?
        .into_iter()
        .map(|shard| ClientState {
            client_id: shard.client_id,
            poison: if shard.client_id == 4 {
                PoisonConfig::Lazy
            } else {
                PoisonConfig::None
            },
            shard,
            active: true,
        })
        .collect();

    let shape = ModelShape::linear(spec.feature_dim, spec.num_classes).with_hidden(8);
    let mut fed = Federation::new(
        clients,
        test,
        init_params(shape, 13),
        FederationConfig {
            train: TrainConfig {
                learning_rate: 0.5,
                ..TrainConfig::default()
            },
            detector: Some(DetectorConfig::new(DetectorVersion::Aadd1)),
            master_seed: 14,
            ..FederationConfig::default()
        },
    )?;
    for round in 0..5 {
        let rec = fed.run_round(round)?;
        println!(
            "round {round}: global {:.4}, clients {:?}, flagged {:?}",
            rec.global_accuracy,
            rec.client_accuracies
                .values()
                .map(|a| format!("{a:.3}"))
                .collect::<Vec<_>>(),
            rec.flagged_clients()
        );
    }
    Ok(())
}
