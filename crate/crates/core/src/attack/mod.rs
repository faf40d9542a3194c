//! l-inf attacks: projection onto the budget, seeded sampling, FGSM, PGD,
//! PGD with restarts, WITCHcraft, and targeted / multi-targeted variants.
//!
//! Every attack is a pure function of the model, the input, the label, the
//! configuration and the seed.

mod budget;
mod rng;
mod signed;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use budget::{PerturbationBudget, ThreatModel};
pub use rng::{sample_init, sample_step_field, RngStream};
pub use signed::{fgsm, pgd, targeted_step, witchcraft, AttackFlags, Iterate, SignedGradientAttack, StepRule};

use crate::model::{Classifier, ModelError};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("target class {0} is the true label")]
    TargetIsTrueLabel(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult<T> {
    /// Final perturbation; always inside the budget.
    pub delta: Tensor<T>,
    /// Some recorded iterate was misclassified.
    pub success: bool,
    /// 1-based step at which the first misclassified iterate appeared.
    pub first_success_step: Option<usize>,
    /// True-label loss after each executed step.
    pub loss_trace: Vec<T>,
    /// True-label loss at the final perturbation.
    pub final_loss: T,
    /// Input-gradient evaluations spent.
    pub grad_evals: u64,
    /// Class the run was targeted at, if any.
    pub target: Option<usize>,
}

/// Wraps a classifier and counts input-gradient evaluations.
#[derive(Debug)]
pub struct Counted<C> {
    inner: C,
    evals: AtomicU64,
}

impl<C> Counted<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            evals: AtomicU64::new(0),
        }
    }

    pub fn grad_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<T: Scalar, C: Classifier<T>> Classifier<T> for Counted<C> {
    type Record = C::Record;

    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn forward_recorded(&self, x: &Tensor<T>) -> (Tensor<T>, Self::Record) {
        self.inner.forward_recorded(x)
    }
    fn input_gradient(&self, record: Self::Record, grad_logits: &Tensor<T>) -> Tensor<T> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.input_gradient(record, grad_logits)
    }
    fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        self.inner.logits(x)
    }
}

/// `restarts` independent PGD runs, restart `r` drawing from substream
/// `(example, r)`. Returns the first successful run, otherwise the run with
/// the largest final loss (earliest on ties). Gradient evaluations of all
/// runs are summed.
#[allow(clippy::too_many_arguments)]
pub fn pgd_restarts<T: Scalar, C: Classifier<T>>(
    model: &C,
    label: usize,
    budget: &PerturbationBudget<T>,
    tau: T,
    steps: usize,
    restarts: usize,
    early_stop: bool,
    stream: RngStream,
    example: u64,
) -> Result<AttackResult<T>, AttackError> {
    if restarts == 0 {
        return Err(AttackError::Config("restarts must be at least 1".into()));
    }
    let flags = AttackFlags {
        random_init: true,
        early_stop,
    };
    let mut best: Option<AttackResult<T>> = None;
    let mut spent = 0;
    for r in 0..restarts {
        let mut rng = stream.substream(example, r as u64);
        let run = pgd(model, label, budget, tau, steps, flags, &mut rng)?;
        spent += run.grad_evals;
        let done = run.success;
        if best.as_ref().map_or(true, |b| run.final_loss > b.final_loss || done) {
            best = Some(run);
        }
        if done {
            break;
        }
    }
    let mut best = best.expect("at least one restart ran");
    best.grad_evals = spent;
    Ok(best)
}

/// Targeted attack toward every incorrect class, target `t` drawing from
/// substream `(example, t)`. An iterate counts as a success when it is
/// misclassified. Among successful runs the one with the largest
/// true-label loss wins; without any success, the largest-loss run is
/// returned. Gradient evaluations of all runs are summed.
pub fn multi_targeted<T: Scalar, C: Classifier<T>>(
    model: &C,
    label: usize,
    budget: &PerturbationBudget<T>,
    step: StepRule<T>,
    steps: usize,
    flags: AttackFlags,
    stream: RngStream,
    example: u64,
) -> Result<AttackResult<T>, AttackError> {
    signed::check_inputs(model, budget, label)?;
    let mut best: Option<AttackResult<T>> = None;
    let mut spent = 0;
    for target in (0..model.num_classes()).filter(|&t| t != label) {
        let mut rng = stream.substream(example, target as u64);
        let run = SignedGradientAttack {
            step,
            steps,
            flags,
            target: Some(target),
        }
        .run(model, label, budget, &mut rng)?;
        spent += run.grad_evals;
        let better = match &best {
            None => true,
            Some(b) => (run.success, run.final_loss) > (b.success, b.final_loss),
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least two classes");
    best.grad_evals = spent;
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    PgdRestarts,
    Witchcraft,
    MultiTargeted,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 5] = [
        AttackFamily::Fgsm,
        AttackFamily::Pgd,
        AttackFamily::PgdRestarts,
        AttackFamily::Witchcraft,
        AttackFamily::MultiTargeted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::PgdRestarts => "pgd-restarts",
            AttackFamily::Witchcraft => "witchcraft",
            AttackFamily::MultiTargeted => "multi-targeted",
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackFamily {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| AttackError::Config(format!("unknown attack family `{s}`")))
    }
}

/// Everything that determines an attack run apart from model and data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// Scalar step `tau` (PGD, restarts, multi-targeted) or expected step
    /// `a` (WITCHcraft). Unused by FGSM, which steps by epsilon.
    pub step: f64,
    pub steps: usize,
    pub restarts: usize,
    pub early_stop: bool,
    pub random_init: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(family: AttackFamily, step: f64, steps: usize) -> Self {
        Self {
            family,
            step,
            steps,
            restarts: 1,
            early_stop: true,
            random_init: true,
            seed: 0,
        }
    }

    pub fn pgd(tau: f64, steps: usize) -> Self {
        Self::new(AttackFamily::Pgd, tau, steps)
    }

    pub fn witchcraft(expected_step: f64, steps: usize) -> Self {
        Self::new(AttackFamily::Witchcraft, expected_step, steps)
    }

    pub fn fgsm() -> Self {
        Self {
            random_init: false,
            ..Self::new(AttackFamily::Fgsm, 0.0, 1)
        }
    }

    pub fn pgd_restarts(tau: f64, steps: usize, restarts: usize) -> Self {
        Self {
            restarts,
            ..Self::new(AttackFamily::PgdRestarts, tau, steps)
        }
    }

    pub fn multi_targeted(tau: f64, steps: usize) -> Self {
        Self::new(AttackFamily::MultiTargeted, tau, steps)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_early_stop(mut self, early_stop: bool) -> Self {
        self.early_stop = early_stop;
        self
    }

    pub fn with_random_init(mut self, random_init: bool) -> Self {
        self.random_init = random_init;
        self
    }

    pub fn flags(&self) -> AttackFlags {
        AttackFlags {
            random_init: self.random_init,
            early_stop: self.early_stop,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.family == AttackFamily::Fgsm {
            return Ok(());
        }
        if self.steps == 0 {
            return Err(AttackError::Config("steps must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(AttackError::Config("restarts must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(AttackError::Config(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Worst-case gradient evaluations for one example.
    pub fn max_grad_evals(&self, classes: usize) -> u64 {
        let per_run = self.steps as u64;
        match self.family {
            AttackFamily::Fgsm => 1,
            AttackFamily::Pgd | AttackFamily::Witchcraft => per_run,
            AttackFamily::PgdRestarts => per_run * self.restarts as u64,
            AttackFamily::MultiTargeted => per_run * (classes as u64 - 1),
        }
    }
}

/// Runs the configured attack on one example. Randomness comes from the
/// `(config.seed, example)` substreams, so the outcome does not depend on
/// which other examples are attacked or in what order.
pub fn run_attack<T: Scalar, C: Classifier<T>>(
    model: &C,
    label: usize,
    budget: &PerturbationBudget<T>,
    config: &AttackConfig,
    example: u64,
) -> Result<AttackResult<T>, AttackError> {
    config.validate()?;
    let stream = RngStream::new(config.seed);
    let step = T::of(config.step);
    match config.family {
        AttackFamily::Fgsm => fgsm(model, label, budget),
        AttackFamily::Pgd => pgd(
            model,
            label,
            budget,
            step,
            config.steps,
            config.flags(),
            &mut stream.substream(example, 0),
        ),
        AttackFamily::Witchcraft => witchcraft(
            model,
            label,
            budget,
            step,
            config.steps,
            config.flags(),
            &mut stream.substream(example, 0),
        ),
        AttackFamily::PgdRestarts => pgd_restarts(
            model,
            label,
            budget,
            step,
            config.steps,
            config.restarts,
            config.early_stop,
            stream,
            example,
        ),
        AttackFamily::MultiTargeted => multi_targeted(
            model,
            label,
            budget,
            StepRule::Fixed(step),
            config.steps,
            config.flags(),
            stream,
            example,
        ),
    }
}
