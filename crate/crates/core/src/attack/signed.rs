//! Signed-gradient attacks: one loop, parameterized by how each step is
//! sized. PGD uses one scalar step for every coordinate; WITCHcraft draws a
//! fresh step for every coordinate on every iteration from `U(0, 2a)` and
//! applies it with a Hadamard product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::rng::{sample_init, sample_step_field};
use crate::attack::{AttackError, AttackResult, PerturbationBudget};
use crate::loss::{cross_entropy, softmax_cross_entropy};
use crate::model::Classifier;
use crate::tensor::{Scalar, Tensor};

/// How the signed gradient is scaled on each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule<T> {
    /// One scalar step for all coordinates (PGD).
    Fixed(T),
    /// Fresh i.i.d. `U(0, 2 * mean)` step per coordinate per iteration.
    RandomField { mean: T },
    /// A field with every coordinate equal to `mean`: the zero-variance
    /// limit of `RandomField`, applied through the same Hadamard path.
    ConstantField { mean: T },
}

impl<T: Scalar> StepRule<T> {
    /// Mean step size per coordinate.
    pub fn expected(&self) -> T {
        match *self {
            StepRule::Fixed(t) => t,
            StepRule::RandomField { mean } | StepRule::ConstantField { mean } => mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackFlags {
    /// Start from a uniform sample of the budget instead of zero.
    pub random_init: bool,
    /// Stop at the first iterate that is misclassified.
    pub early_stop: bool,
}

impl Default for AttackFlags {
    fn default() -> Self {
        Self {
            random_init: true,
            early_stop: true,
        }
    }
}

/// One iterate, as handed to an observer after each step.
#[derive(Debug)]
pub struct Iterate<'a, T> {
    /// 1-based step index.
    pub step: usize,
    pub delta: &'a Tensor<T>,
    /// Cross-entropy on the true label at `x + delta`.
    pub loss: T,
    pub misclassified: bool,
}

/// Fully specified signed-gradient attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedGradientAttack<T> {
    pub step: StepRule<T>,
    pub steps: usize,
    pub flags: AttackFlags,
    /// `Some(t)` descends the loss of class `t` instead of ascending the
    /// loss of the true label.
    pub target: Option<usize>,
}

impl<T: Scalar> SignedGradientAttack<T> {
    pub fn run<C, R>(
        &self,
        model: &C,
        label: usize,
        budget: &PerturbationBudget<T>,
        rng: &mut R,
    ) -> Result<AttackResult<T>, AttackError>
    where
        C: Classifier<T>,
        R: Rng + ?Sized,
    {
        self.run_observed(model, label, budget, rng, &mut |_| {})
    }

    /// Like [`run`](Self::run), calling `observer` with every iterate.
    pub fn run_observed<C, R>(
        &self,
        model: &C,
        label: usize,
        budget: &PerturbationBudget<T>,
        rng: &mut R,
        observer: &mut dyn FnMut(&Iterate<'_, T>),
    ) -> Result<AttackResult<T>, AttackError>
    where
        C: Classifier<T>,
        R: Rng + ?Sized,
    {
        check_inputs(model, budget, label)?;
        if let Some(t) = self.target {
            check_target(model, label, t)?;
        }
        let shape = budget.anchor().shape().to_vec();
        let mut delta = if self.flags.random_init {
            sample_init(budget, rng)
        } else {
            Tensor::zeros(&shape)
        };
        let mut trace = Vec::with_capacity(self.steps);
        let mut first_success = None;
        let mut grad_evals = 0;
        let (mut logits, mut record) = model.forward_recorded(&budget.perturbed(&delta));
        let mut loss = cross_entropy(&logits, label);

        for step in 1..=self.steps {
            let objective = self.target.unwrap_or(label);
            let (_, dz) = softmax_cross_entropy(&logits, objective);
            let grad = model.input_gradient(record, &dz);
            grad_evals += 1;
            let mut direction = grad.sign();
            if self.target.is_some() {
                direction = direction.map(|v| -v);
            }
            let update = match self.step {
                StepRule::Fixed(tau) => direction.scale(tau),
                StepRule::RandomField { mean } => {
                    sample_step_field(mean, &shape, rng).hadamard(&direction)?
                }
                StepRule::ConstantField { mean } => Tensor::full(&shape, mean).hadamard(&direction)?,
            };
            delta = budget.project(&delta.add(&update)?)?;
            debug_assert!(budget.contains(&delta), "iterate left the budget at step {step}");

            (logits, record) = model.forward_recorded(&budget.perturbed(&delta));
            loss = cross_entropy(&logits, label);
            trace.push(loss);
            let misclassified = logits.argmax() != label;
            observer(&Iterate {
                step,
                delta: &delta,
                loss,
                misclassified,
            });
            if misclassified {
                first_success.get_or_insert(step);
                if self.flags.early_stop {
                    break;
                }
            }
        }

        Ok(AttackResult {
            delta,
            success: first_success.is_some(),
            first_success_step: first_success,
            loss_trace: trace,
            final_loss: loss,
            grad_evals,
            target: self.target,
        })
    }
}

pub(crate) fn check_inputs<T: Scalar, C: Classifier<T>>(
    model: &C,
    budget: &PerturbationBudget<T>,
    label: usize,
) -> Result<(), AttackError> {
    if budget.anchor().shape() != model.input_shape() {
        return Err(AttackError::InputShape {
            expected: model.input_shape().to_vec(),
            found: budget.anchor().shape().to_vec(),
        });
    }
    if label >= model.num_classes() {
        return Err(AttackError::Label {
            label,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

fn check_target<T: Scalar, C: Classifier<T>>(model: &C, label: usize, target: usize) -> Result<(), AttackError> {
    if target == label {
        return Err(AttackError::TargetIsTrueLabel(target));
    }
    if target >= model.num_classes() {
        return Err(AttackError::Label {
            label: target,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

/// Projected signed-gradient ascent with scalar step `tau`:
/// `delta <- P[delta + tau * sign(grad_x L(x + delta, y))]`.
#[allow(clippy::too_many_arguments)]
pub fn pgd<T, C, R>(
    model: &C,
    label: usize,
    budget: &PerturbationBudget<T>,
    tau: T,
    steps: usize,
    flags: AttackFlags,
    rng: &mut R,
) -> Result<AttackResult<T>, AttackError>
where
    T: Scalar,
    C: Classifier<T>,
    R: Rng + ?Sized,
{
    if !(tau > T::zero()) {
        return Err(AttackError::Config(format!("PGD step must be positive, got {tau}")));
    }
    SignedGradientAttack {
        step: StepRule::Fixed(tau),
        steps,
        flags,
        target: None,
    }
    .run(model, label, budget, rng)
}

/// WITCHcraft: uniform initialization in the budget, then on every step a
/// fresh step field `tau ~ U(0, 2a)` per coordinate and
/// `delta <- P[delta + tau (.) sign(grad_x L(x + delta, y))]`, stopping at
/// the first misclassified iterate unless `flags.early_stop` is off.
pub fn witchcraft<T, C, R>(
    model: &C,
    label: usize,
    budget: &PerturbationBudget<T>,
    expected_step: T,
    steps: usize,
    flags: AttackFlags,
    rng: &mut R,
) -> Result<AttackResult<T>, AttackError>
where
    T: Scalar,
    C: Classifier<T>,
    R: Rng + ?Sized,
{
    if !(expected_step > T::zero()) {
        return Err(AttackError::Config(format!(
            "expected step size must be positive, got {expected_step}"
        )));
    }
    if steps == 0 {
        return Err(AttackError::Config("WITCHcraft needs at least one step".into()));
    }
    SignedGradientAttack {
        step: StepRule::RandomField { mean: expected_step },
        steps,
        flags,
        target: None,
    }
    .run(model, label, budget, rng)
}

/// Single full-radius signed step from the clean input.
pub fn fgsm<T, C>(model: &C, label: usize, budget: &PerturbationBudget<T>) -> Result<AttackResult<T>, AttackError>
where
    T: Scalar,
    C: Classifier<T>,
{
    // Deterministic: no random init, no step field, the generator is unused.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    SignedGradientAttack {
        step: StepRule::Fixed(budget.epsilon()),
        steps: 1,
        flags: AttackFlags {
            random_init: false,
            early_stop: false,
        },
        target: None,
    }
    .run(model, label, budget, &mut unused)
}

/// One targeted update from `delta`, descending the loss of `target`:
/// `delta <- P[delta - step (.) sign(grad_x L(x + delta, target))]`.
pub fn targeted_step<T, C>(
    model: &C,
    budget: &PerturbationBudget<T>,
    delta: &Tensor<T>,
    label: usize,
    target: usize,
    step_field: &Tensor<T>,
) -> Result<Tensor<T>, AttackError>
where
    T: Scalar,
    C: Classifier<T>,
{
    check_inputs(model, budget, label)?;
    check_target(model, label, target)?;
    budget.anchor().check_same_shape(delta)?;
    let (logits, record) = model.forward_recorded(&budget.perturbed(delta));
    let (_, dz) = softmax_cross_entropy(&logits, target);
    let direction = model.input_gradient(record, &dz).sign();
    let moved = delta.sub(&step_field.hadamard(&direction)?)?;
    budget.project(&moved)
}
