//! Natural vs PGD adversarial training on the bundled MNIST subset, then
//! robust accuracy of both twins under the same 40-step PGD attack.
//!
//! A small MLP and 2,000 examples keep this to a minute or so; the
//! `witchcraft train` command runs the full-size recipe.
//!
//! cargo run --release --example adversarial_training

use witchcraft::attack::{AttackConfig, ThreatModel};
use witchcraft::bench::eval_robust_accuracy;
use witchcraft::data::MnistFiles;
use witchcraft::model::{build_model, ArchSpec};
use witchcraft::train::{adversarial_train, train_sgd, AdversarialConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let files = MnistFiles::from_env();
    let train = files.train(Some(2000))?;
    let test = files.test(Some(300))?;
    let spec = ArchSpec::mlp_small(train.sample_shape(), 10);
    let cfg = TrainConfig::new(8, 20, 0.05, 0);
    let eps = 0.1;

    let (natural, _) = train_sgd(build_model(&spec, 0)?, &train, &cfg)?;
    let adv_cfg = cfg.with_adversary(AdversarialConfig::pgd(eps, eps / 3.0));
    let (robust, log) = adversarial_train(build_model(&spec, 0)?, &train, &adv_cfg)?;
    println!(
        "adversarial training: {} crafted examples, max |delta| {:.3}, {} outside the budget",
        log.adversarial_examples, log.max_perturbation, log.infeasible_perturbations
    );

    let attack = AttackConfig::pgd(eps / 10.0, 40);
    for (name, model) in [("natural", &natural), ("adversarial", &robust)] {
        let r = eval_robust_accuracy(model, &test, &attack, &ThreatModel::linf(eps))?;
        println!("{name:<12} clean {:.3}  robust (eps {eps}) {:.3}", r.clean_accuracy(), r.robust_accuracy());
    }
    Ok(())
}
