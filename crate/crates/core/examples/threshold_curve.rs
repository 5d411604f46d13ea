//! Prints the AADD detection threshold for the first rounds, at the overall
//! scale (1.0) and the per-label scale (4.8).

use aadd::epsilon_threshold;

fn main() {
    println!("round  overall  per-label");
    for round in 0..16 {
        println!(
            "{round:>5}  {:>7.4}  {:>9.4}",
            epsilon_threshold(round, 1.0),
            epsilon_threshold(round, 4.8)
        );
    }
}
