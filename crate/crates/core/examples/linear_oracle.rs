//! On a linear classifier the worst case over an l-inf ball sits on a
//! corner. FGSM, PGD and WITCHcraft all find it; brute force confirms.
//!
//! cargo run --release --example linear_oracle

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use witchcraft::attack::{fgsm, pgd, witchcraft, AttackFlags, PerturbationBudget, RngStream};
use witchcraft::loss::cross_entropy;
use witchcraft::selftest::{corner_max_loss, random_linear_case};

fn main() {
    let eps = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (model, x, label) = random_linear_case(&mut rng, 8, 2.0 * eps);
    let budget = PerturbationBudget::new(x.clone(), eps, 0.0, 1.0).unwrap();
    let (best, corner) = corner_max_loss(&model, &x, label, eps);
    let clean = cross_entropy(&model.logits(&x).unwrap(), label);
    println!("clean loss {clean:.6}, best corner loss {best:.6} at {:?}", corner.sign().data());

    let flags = AttackFlags {
        random_init: true,
        early_stop: false,
    };
    let stream = RngStream::new(0);
    let runs = [
        ("fgsm", fgsm(&model, label, &budget).unwrap()),
        ("pgd", pgd(&model, label, &budget, eps, 5, flags, &mut stream.substream(0, 0)).unwrap()),
        ("witchcraft", witchcraft(&model, label, &budget, eps, 40, flags, &mut stream.substream(0, 0)).unwrap()),
    ];
    for (name, r) in runs {
        println!("{name:<11} final loss {:.6}  gap {:.1e}", r.final_loss, best - r.final_loss);
    }
}
