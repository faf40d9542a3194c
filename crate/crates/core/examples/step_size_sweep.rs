//! PGD with step `a` against WITCHcraft with expected step `a` across a
//! grid, several seeds each, written as CSV plus plot data.
//!
//! cargo run --release --example step_size_sweep -- [out_dir]

use witchcraft::attack::{AttackConfig, ThreatModel};
use witchcraft::bench::{emit_sweep, sweep_expected_step};
use witchcraft::data::synthetic_blobs;
use witchcraft::model::{build_model, ArchSpec};
use witchcraft::train::{train_sgd, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string());
    let data = synthetic_blobs(4, 20, 400, 3)?;
    let model = build_model(&ArchSpec::mlp_small(&[20], 4), 3)?;
    let (model, _) = train_sgd(model, &data, &TrainConfig::new(10, 20, 0.3, 3))?;

    let grid = [0.002, 0.005, 0.01, 0.02];
    let base = AttackConfig::pgd(grid[0], 20).with_seed(100);
    let sweep = sweep_expected_step(&model, &data, &ThreatModel::linf(0.1), &grid, 20, 3, &base)?;
    for (p, a) in sweep.grid.iter().enumerate() {
        println!(
            "a = {a:<6} pgd {:.3} +- {:.3}   witchcraft {:.3} +- {:.3}",
            sweep.mean(p, 0),
            sweep.std(p, 0),
            sweep.mean(p, 1),
            sweep.std(p, 1)
        );
    }
    let (rows, plot) = (format!("{out}/step_size_sweep.csv"), format!("{out}/step_size_sweep.plot.csv"));
    emit_sweep(&sweep, &rows, &plot)?;
    println!("wrote {rows} and {plot}");
    Ok(())
}
