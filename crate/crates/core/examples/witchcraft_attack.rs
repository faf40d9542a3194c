//! Train a small MLP on Gaussian blobs, then attack one point with PGD and
//! with WITCHcraft and compare their loss traces.
//!
//! cargo run --release --example witchcraft_attack

use witchcraft::attack::{pgd, witchcraft, AttackFlags, RngStream, ThreatModel};
use witchcraft::data::synthetic_blobs;
use witchcraft::model::{build_model, ArchSpec};
use witchcraft::train::{train_sgd, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = synthetic_blobs(3, 16, 300, 0)?;
    let model = build_model(&ArchSpec::mlp_small(&[16], 3), 0)?;
    let (model, _) = train_sgd(model, &data, &TrainConfig::new(10, 20, 0.3, 0))?;

    let (x, label) = (data.image::<f32>(0), data.label(0));
    let budget = ThreatModel::linf(0.15).budget(&x)?;
    let flags = AttackFlags::default();
    let stream = RngStream::new(42);
    let p = pgd(&model, label, &budget, 0.01, 40, flags, &mut stream.substream(0, 0))?;
    let w = witchcraft(&model, label, &budget, 0.01, 40, flags, &mut stream.substream(0, 0))?;
    for (name, r) in [("pgd", &p), ("witchcraft", &w)] {
        let trace: Vec<String> = r.loss_trace.iter().step_by(5).map(|l| format!("{l:.3}")).collect();
        println!(
            "{name:<11} success {:<5} first success {:?}  max|delta| {:.3}  loss every 5 steps: {}",
            r.success,
            r.first_success_step,
            r.delta.max_abs(),
            trace.join(" ")
        );
    }
    Ok(())
}
