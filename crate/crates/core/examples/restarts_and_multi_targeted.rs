//! Compute-matched baselines: PGD with random restarts and the
//! multi-targeted attack, with their gradient-evaluation bills.
//!
//! cargo run --release --example restarts_and_multi_targeted

use witchcraft::attack::{AttackConfig, ThreatModel};
use witchcraft::bench::eval_robust_accuracy;
use witchcraft::data::synthetic_blobs;
use witchcraft::model::{build_model, ArchSpec};
use witchcraft::train::{train_sgd, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = synthetic_blobs(4, 10, 200, 1)?;
    let model = build_model(&ArchSpec::mlp_small(&[10], 4), 1)?;
    let (model, _) = train_sgd(model, &data, &TrainConfig::new(10, 20, 0.3, 1))?;
    let threat = ThreatModel::linf(0.12);
    for cfg in [
        AttackConfig::pgd(0.01, 30),
        AttackConfig::pgd_restarts(0.01, 10, 3),
        AttackConfig::witchcraft(0.01, 30),
        AttackConfig::multi_targeted(0.01, 10),
    ] {
        let r = eval_robust_accuracy(&model, &data, &cfg, &threat)?;
        println!(
            "{:<15} steps {:>3} restarts {}  clean {:.3}  robust {:.3}  gradient evaluations {}",
            cfg.family.name(),
            cfg.steps,
            cfg.restarts,
            r.clean_accuracy(),
            r.robust_accuracy(),
            r.grad_evals
        );
    }
    Ok(())
}
