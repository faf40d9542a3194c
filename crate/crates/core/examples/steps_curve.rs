//! Robust accuracy against the number of attack steps. Longer runs only
//! add iterates, so each curve is non-increasing.
//!
//! cargo run --release --example steps_curve

use witchcraft::attack::{AttackConfig, ThreatModel};
use witchcraft::bench::sweep_steps;
use witchcraft::data::synthetic_blobs;
use witchcraft::model::{build_model, ArchSpec};
use witchcraft::train::{train_sgd, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = synthetic_blobs(4, 20, 400, 5)?;
    let model = build_model(&ArchSpec::mlp_small(&[20], 4), 5)?;
    let (model, _) = train_sgd(model, &data, &TrainConfig::new(10, 20, 0.3, 5))?;

    let grid = [1, 5, 10, 20, 50];
    let base = AttackConfig::pgd(0.005, 1);
    let s = sweep_steps(&model, &data, &ThreatModel::linf(0.1), &grid, 0.005, 4, &base)?;
    println!("{:>6} {:>10} {:>11} {:>8}", "steps", "pgd", "witchcraft", "gap");
    for (p, n) in s.grid.iter().enumerate() {
        let (pg, wc) = (s.mean(p, 0), s.mean(p, 1));
        println!("{n:>6} {pg:>10.4} {wc:>11.4} {:>8.4}", wc - pg);
    }
    Ok(())
}
