//! How many distinct labels does random flipping actually touch? Draws
//! repeat, so 600 draws into 2500 examples hit about 533 of them.

use aadd::attacks::poison_random_labels;
use aadd::LabeledExample;

fn main() -> aadd::Result<()> {
    let (half, draws, trials) = (2500, 600, 200);
    // All-zero labels mark examples the attack has not written to yet.
    let data = vec![
        LabeledExample {
            features: Vec::new(),
            label: vec![0.0; 10],
        };
        2 * half
    ];
    let mut total = 0;
    for seed in 0..trials {
        let out = poison_random_labels(&data, draws, seed)?;
        total += out
            .iter()
            .filter(|e| e.label.iter().any(|&v| v != 0.0))
            .count();
    }
    let observed = total as f64 / (2 * trials) as f64;
    let expected = half as f64 * (1.0 - (1.0 - 1.0 / half as f64).powi(draws as i32));
    println!("distinct indices per half: observed {observed:.1}, expected {expected:.1}");
    Ok(())
}
