//! Regenerates `data/binary_truth.csv`.
//!
//! cargo run --release -p fqr-core --example binary_truth > crates/core/data/binary_truth.csv

use fqr_core::simlab::{binary_truth_oracle, SimScenario, ORACLE_DRAWS, ORACLE_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = SimScenario::binary();
    let grid = scenario.grid()?.refine(4);
    let taus = [0.5, 0.8, 0.9];
    let q = binary_truth_oracle(&scenario, &taus, grid.points(), ORACLE_DRAWS, ORACLE_SEED)?;
    println!("t,0.5,0.8,0.9");
    for (l, t) in grid.points().iter().enumerate() {
        let cells: Vec<String> = q
            .iter()
            .map(|[minus, plus]| format!("{:?}", (plus[l] - minus[l]) / 2.0))
            .collect();
        println!("{t:?},{}", cells.join(","));
    }
    Ok(())
}
