//! Multiplicative pixel noise, first on a single image and then inside a
//! federation.

use std::path::PathBuf;

use aadd::attacks::poison_random_pixels;
use aadd::{load_config, simulate, ConfusionMatrix, LabeledExample};

fn main() -> aadd::Result<()> {
    let image = LabeledExample::new((0..16).map(|i| (i * 16) as f64).collect(), 1, 10);
    let noisy = poison_random_pixels(std::slice::from_ref(&image), 1.0, 8, 0.5, 1, 3)?;
    println!("before {:?}", image.features);
    println!("after  {:?}", noisy[0].features);

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_pixel.toml");
    let cfg = load_config(&path)?;
    let clean = simulate(&cfg.baseline())?;
    let run = simulate(&cfg)?;
    let cm = ConfusionMatrix::from_records(&run.records, &cfg.poisoned_set());
    println!(
        "final accuracy {:.4} clean, {:.4} with noisy clients; {cm:?}",
        clean.final_accuracy().unwrap(),
        run.final_accuracy().unwrap()
    );
    Ok(())
}
