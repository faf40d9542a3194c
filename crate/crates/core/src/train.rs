//! Minibatch SGD, plain or adversarial.
//!
//! Adversarial training swaps every example of a minibatch for its PGD
//! perturbation (7 steps by default, random start, no early stop) before
//! the gradient step. Shuffling draws from substream `(epoch, 0)` and the
//! attack on the `k`-th example seen from `(k, 1)`, so disabling the attack
//! leaves the data order untouched. An optional ramp grows the radius
//! linearly over the first epochs; from scratch at large radii, plain SGD
//! otherwise tends to stall at the constant predictor.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::attack::{AttackError, AttackFlags, RngStream, SignedGradientAttack, StepRule, ThreatModel};
use crate::data::LabeledDataset;
use crate::model::{Model, ModelError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset does not fit the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Attack used to craft training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerAttack {
    Pgd,
    Witchcraft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// Scalar step for PGD, expected step for WITCHcraft.
    pub step_size: f64,
    pub inner: InnerAttack,
    /// Epoch `e < ramp_epochs` attacks with radius and step scaled by
    /// `(e + 1) / ramp_epochs`; later epochs use the full values.
    pub ramp_epochs: usize,
}

impl AdversarialConfig {
    /// 7-step PGD at radius `epsilon`.
    pub fn pgd(epsilon: f64, step_size: f64) -> Self {
        Self {
            epsilon,
            steps: 7,
            step_size,
            inner: InnerAttack::Pgd,
            ramp_epochs: 0,
        }
    }

    pub fn with_ramp(mut self, epochs: usize) -> Self {
        self.ramp_epochs = epochs;
        self
    }

    /// Fraction of the full radius and step used in `epoch`.
    pub fn ramp_scale(&self, epoch: usize) -> f64 {
        if epoch >= self.ramp_epochs {
            1.0
        } else {
            (epoch + 1) as f64 / self.ramp_epochs as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adversarial: Option<AdversarialConfig>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            seed,
            adversarial: None,
        }
    }

    pub fn with_adversary(mut self, adversarial: AdversarialConfig) -> Self {
        self.adversarial = Some(adversarial);
        self
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if let Some(adv) = &self.adversarial {
            if !(adv.epsilon >= 0.0) || (adv.steps > 0 && !(adv.step_size > 0.0)) {
                return Err(TrainError::Config(format!("adversary {adv:?}")));
            }
        }
        Ok(())
    }
}

/// Per-epoch statistics of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean loss over the (possibly perturbed) examples of each epoch.
    pub epoch_losses: Vec<f64>,
    pub adversarial_examples: usize,
    /// Largest `|delta_i|` over all crafted examples.
    pub max_perturbation: f64,
    /// Crafted perturbations that were outside the budget (should be 0).
    pub infeasible_perturbations: usize,
}

/// Plain minibatch SGD on softmax cross-entropy.
pub fn train_sgd(model: Model<f32>, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model<f32>, TrainLog), TrainError> {
    let cfg = TrainConfig {
        adversarial: None,
        ..*cfg
    };
    run(model, data, &cfg)
}

/// SGD on adversarially perturbed minibatches; requires `cfg.adversarial`.
pub fn adversarial_train(
    model: Model<f32>,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog), TrainError> {
    if cfg.adversarial.is_none() {
        return Err(TrainError::Config("adversarial training without an adversary".into()));
    }
    run(model, data, cfg)
}

fn run(mut model: Model<f32>, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model<f32>, TrainLog), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Mismatch("empty dataset".into()));
    }
    if data.sample_shape() != model.input_shape() || data.classes() != model.classes() {
        return Err(TrainError::Mismatch(format!(
            "samples {:?} x {} classes vs model {:?} x {} classes",
            data.sample_shape(),
            data.classes(),
            model.input_shape(),
            model.classes()
        )));
    }
    let stream = RngStream::new(cfg.seed);
    let adversary = cfg.adversarial.filter(|a| a.steps > 0);

    let mut log = TrainLog::default();
    let mut seen = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream.substream(epoch as u64, 0));
        let attack = adversary.map(|a| epoch_attack(&a, epoch));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let label = data.label(i);
                let mut x: Tensor<f32> = data.image(i);
                if let Some((attack, threat)) = &attack {
                    let budget = threat.budget(&x)?;
                    let r = attack.run(&model, label, &budget, &mut stream.substream(seen, 1))?;
                    log.adversarial_examples += 1;
                    log.max_perturbation = log.max_perturbation.max(r.delta.max_abs() as f64);
                    if !budget.contains(&r.delta) {
                        log.infeasible_perturbations += 1;
                    }
                    x = budget.perturbed(&r.delta);
                }
                seen += 1;
                total += model.accumulate_param_grads(&x, label, &mut grads)? as f64;
            }
            let scale = (cfg.learning_rate / batch.len() as f64) as f32;
            for (layer, layer_grads) in model.layers_mut().iter_mut().zip(&grads) {
                for (p, g) in layer.params_mut().into_iter().zip(layer_grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= scale * d;
                    }
                }
            }
        }
        log.epoch_losses.push(total / data.len() as f64);
        if !model.params_finite() {
            return Err(TrainError::Config(format!(
                "parameters diverged in epoch {epoch}; lower the learning rate"
            )));
        }
    }
    Ok((model, log))
}

/// Inner attack and threat model for one epoch, after the radius ramp.
fn epoch_attack(a: &AdversarialConfig, epoch: usize) -> (SignedGradientAttack<f32>, ThreatModel) {
    let scale = a.ramp_scale(epoch);
    let step = (a.step_size * scale) as f32;
    let step = match a.inner {
        InnerAttack::Pgd => StepRule::Fixed(step),
        InnerAttack::Witchcraft => StepRule::RandomField { mean: step },
    };
    let attack = SignedGradientAttack {
        step,
        steps: a.steps,
        flags: AttackFlags {
            random_init: true,
            early_stop: false,
        },
        target: None,
    };
    (attack, ThreatModel::linf(a.epsilon * scale))
}
