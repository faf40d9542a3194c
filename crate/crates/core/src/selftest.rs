//! Independent oracles and the invariant suites built on them.
//!
//! The oracles only ever evaluate logits: gradients are checked against
//! central finite differences, and attack optima on linear classifiers
//! against brute force over the corners of the l-inf cube. Nothing here
//! goes through the backward pass or the attack update being checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{
    fgsm, pgd, witchcraft, AttackFlags, AttackResult, PerturbationBudget, RngStream, SignedGradientAttack,
    StepRule,
};
use crate::layers::Layer;
use crate::loss::cross_entropy;
use crate::model::{build_model, ArchSpec, Model};
use crate::tensor::{Scalar, Tensor};

/// Single dense layer: `logits = W^T x + b` with `W` given as one row of
/// weights per input coordinate (`weights[i][class]`).
pub fn linear_classifier<T: Scalar>(weights: &[Vec<f64>], bias: &[f64]) -> Model<T> {
    let classes = bias.len();
    let data = weights.iter().flatten().map(|&w| T::of(w)).collect();
    let layer = Layer::Dense {
        weight: Tensor::new(vec![weights.len(), classes], data).expect("rectangular weights"),
        bias: Tensor::new(vec![classes], bias.iter().map(|&b| T::of(b)).collect()).expect("bias"),
    };
    Model::from_layers("linear", &[weights.len()], vec![layer]).expect("valid linear model")
}

/// Model whose logits are identically zero (zero weights and biases).
pub fn constant_model<T: Scalar>(input_dim: usize, classes: usize) -> Model<T> {
    linear_classifier(&vec![vec![0.0; classes]; input_dim], &vec![0.0; classes])
}

/// Central finite-difference gradient of the true-label loss w.r.t. `x`.
pub fn finite_difference_grad(model: &Model<f64>, x: &Tensor<f64>, label: usize, h: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = cross_entropy(&model.logits(&probe).expect("probe shape"), label);
        probe.data_mut()[i] = orig - h;
        let dn = cross_entropy(&model.logits(&probe).expect("probe shape"), label);
        probe.data_mut()[i] = orig;
        grad.push((up - dn) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Largest true-label loss over the `2^d` perturbations in `{-eps, +eps}^d`.
pub fn corner_max_loss<T: Scalar>(model: &Model<T>, x: &Tensor<T>, label: usize, eps: T) -> (T, Tensor<T>) {
    let d = x.len();
    assert!(d <= 20, "corner enumeration over {d} dimensions is too large");
    let mut best: Option<(T, Tensor<T>)> = None;
    for mask in 0u32..(1 << d) {
        let corner: Vec<T> = (0..d)
            .map(|i| if mask >> i & 1 == 1 { eps } else { -eps })
            .collect();
        let corner = Tensor::new(x.shape().to_vec(), corner).expect("shape of x");
        let loss = cross_entropy(&model.logits(&x.add(&corner).unwrap()).unwrap(), label);
        if best.as_ref().map_or(true, |(b, _)| loss > *b) {
            best = Some((loss, corner));
        }
    }
    best.expect("at least one corner")
}

/// Outcome of one invariant suite.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Input gradients of random small MLPs and reduced-width CNNs against
/// central differences (`h = 1e-4`, inputs in `[-1, 1]`).
pub fn gradient_check_suite(models: usize, seed: u64, tolerance: f64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for m in 0..models {
        let (spec, shape) = if m % 2 == 0 {
            let d = rng.gen_range(2..12);
            (ArchSpec::mlp_small(&[d], rng.gen_range(2..6)).with_widths(&[rng.gen_range(3..10)]), vec![d])
        } else {
            let side = rng.gen_range(10..14);
            let shape = vec![side, side, rng.gen_range(1..3)];
            let spec = ArchSpec::cnn_2conv(&shape, rng.gen_range(2..5))
                .with_widths(&[rng.gen_range(2..4), rng.gen_range(2..4)])
                .with_kernel(3);
            (spec, shape)
        };
        let model: Model<f64> = build_model(&spec, rng.gen()).expect("valid arch");
        let model = randomize_biases(model, &mut rng);
        let x = random_input(&mut rng, &shape, -1.0, 1.0);
        let label = rng.gen_range(0..spec.classes);
        let analytic = model.grad_input(&x, label).expect("valid input");
        let numeric = finite_difference_grad(&model, &x, label, 1e-4);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    SuiteOutcome::new(
        "gradient-check",
        worst <= tolerance,
        format!("{models} models, worst relative error {worst:.3e} (tolerance {tolerance:.0e})"),
    )
}

/// Zero biases put many ReLU inputs on exactly the same side; small random
/// biases make the checked points generic.
fn randomize_biases(model: Model<f64>, rng: &mut ChaCha8Rng) -> Model<f64> {
    let mut model = model;
    for layer in model.layers_mut() {
        if let Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } = layer {
            for b in bias.data_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
    }
    model
}

/// Random binary linear classifier on `d` inputs and a clean point at
/// least `margin` inside the unit pixel range.
pub fn random_linear_case(rng: &mut impl Rng, d: usize, margin: f64) -> (Model<f64>, Tensor<f64>, usize) {
    let weights: Vec<Vec<f64>> = (0..d)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let bias = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let x = Tensor::from_vec((0..d).map(|_| rng.gen_range(margin..1.0 - margin)).collect());
    (linear_classifier(&weights, &bias), x, rng.gen_range(0..2))
}

/// FGSM, PGD (`tau = eps`, 5 steps) and WITCHcraft (`a = eps`, 40 steps,
/// no early stop) against the corner optimum on random linear classifiers.
pub fn linear_oracle_suite(cases: usize, seed: u64, eps: f64, tolerance: f64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let no_stop = AttackFlags {
        random_init: true,
        early_stop: false,
    };
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let d = rng.gen_range(1..=10);
        let (model, x, label) = random_linear_case(&mut rng, d, 2.0 * eps);
        let budget = PerturbationBudget::new(x.clone(), eps, 0.0, 1.0).unwrap();
        let (best, _) = corner_max_loss(&model, &x, label, eps);
        let stream = RngStream::new(seed ^ case as u64);
        let runs: [AttackResult<f64>; 3] = [
            fgsm(&model, label, &budget).unwrap(),
            pgd(&model, label, &budget, eps, 5, no_stop, &mut stream.substream(0, 0)).unwrap(),
            witchcraft(&model, label, &budget, eps, 40, no_stop, &mut stream.substream(0, 0)).unwrap(),
        ];
        for run in &runs {
            worst = worst.max(best - run.final_loss);
        }
    }
    SuiteOutcome::new(
        "linear-oracle",
        worst <= tolerance,
        format!("{cases} linear classifiers, largest gap to corner optimum {worst:.3e} (tolerance {tolerance:.0e})"),
    )
}

fn random_cnn(rng: &mut ChaCha8Rng) -> (Model<f32>, Vec<usize>) {
    let shape = vec![16, 16, 1];
    let spec = ArchSpec::cnn_2conv(&shape, 10).with_widths(&[4, 8]).with_kernel(3);
    (build_model(&spec, rng.gen()).expect("valid arch"), shape)
}

/// WITCHcraft with a zero-variance step field against PGD with `tau = a`
/// from the same initialization: every iterate must match bit for bit.
pub fn degenerate_equivalence_suite(models: usize, steps: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let flags = AttackFlags {
        random_init: true,
        early_stop: false,
    };
    for m in 0..models {
        let (model, shape) = random_cnn(&mut rng);
        let x: Tensor<f32> = random_input(&mut rng, &shape, 0.0, 1.0).cast();
        let label = rng.gen_range(0..10);
        let budget = PerturbationBudget::new(x, 0.3, 0.0, 1.0).unwrap();
        let a = 0.02f32;
        let trajectory = |step: StepRule<f32>| {
            let mut iterates = Vec::new();
            let result = SignedGradientAttack {
                step,
                steps,
                flags,
                target: None,
            }
            .run_observed(
                &model,
                label,
                &budget,
                &mut RngStream::new(seed).substream(m as u64, 0),
                &mut |it| iterates.push(it.delta.clone()),
            )
            .unwrap();
            (iterates, result)
        };
        let (fixed, r1) = trajectory(StepRule::Fixed(a));
        let (field, r2) = trajectory(StepRule::ConstantField { mean: a });
        let same_bits = |p: &Tensor<f32>, q: &Tensor<f32>| {
            p.data().iter().zip(q.data()).all(|(u, v)| u.to_bits() == v.to_bits())
        };
        if fixed.len() != steps
            || fixed.len() != field.len()
            || !fixed.iter().zip(&field).all(|(p, q)| same_bits(p, q))
            || r1 != r2
        {
            mismatches += 1;
        }
    }
    SuiteOutcome::new(
        "degenerate-randomness",
        mismatches == 0,
        format!("{models} CNNs x {steps} steps, {mismatches} diverging trajectories"),
    )
}

/// Runs randomized attacks and checks every intermediate iterate against
/// the budget, counting at least `min_steps` steps in total.
pub fn feasibility_suite(min_steps: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut case = 0u64;
    let (cnn, cnn_shape) = random_cnn(&mut rng);
    while checked < min_steps {
        case += 1;
        let eps = [0.3, 0.031, 0.1, 0.5][rng.gen_range(0..4)];
        let (model, shape): (Model<f32>, Vec<usize>) = if case % 4 == 0 {
            (cnn.clone(), cnn_shape.clone())
        } else {
            let d = rng.gen_range(2..40);
            let spec = ArchSpec::mlp_small(&[d], rng.gen_range(2..6)).with_widths(&[8]);
            (build_model(&spec, rng.gen()).unwrap(), vec![d])
        };
        // Inputs that sit on or near the pixel bounds exercise the range clamp.
        let n: usize = shape.iter().product();
        let x: Vec<f32> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        let x = Tensor::new(shape, x).unwrap();
        let label = rng.gen_range(0..model.classes());
        let budget = PerturbationBudget::new(x, eps as f32, 0.0, 1.0).unwrap();
        let step = match rng.gen_range(0..3) {
            0 => StepRule::Fixed(rng.gen_range(0.001..0.5)),
            1 => StepRule::RandomField { mean: rng.gen_range(0.001..0.5) },
            _ => StepRule::ConstantField { mean: rng.gen_range(0.001..0.5) },
        };
        let target = (model.classes() > 2 && rng.gen_bool(0.3))
            .then(|| (label + 1) % model.classes());
        let attack = SignedGradientAttack {
            step,
            steps: rng.gen_range(1..60),
            flags: AttackFlags {
                random_init: rng.gen_bool(0.8),
                early_stop: false,
            },
            target,
        };
        let mut stream_rng = RngStream::new(seed).substream(case, 0);
        let result = attack
            .run_observed(&model, label, &budget, &mut stream_rng, &mut |it| {
                checked += 1;
                violations += budget.violations(it.delta);
            })
            .unwrap();
        violations += budget.violations(&result.delta);
    }
    SuiteOutcome::new(
        "feasibility",
        violations == 0,
        format!("{checked} attack steps over {case} runs, {violations} coordinate violations"),
    )
}
