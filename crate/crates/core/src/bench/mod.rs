//! Robust-accuracy evaluation, step-size and step-count sweeps, CSV reports.
//!
//! Every example is attacked independently with randomness drawn from the
//! `(seed, example index)` substreams, so reports do not depend on how many
//! rayon workers run them. Examples the model already gets wrong are counted
//! as non-robust and not attacked.

mod config;
mod report;

pub use config::{parse_key_values, ConfigError, KeyValues};
pub use report::{emit_report, emit_sweep, plot_rows, report_rows, CSV_HEADER};

use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{run_attack, AttackConfig, AttackError, AttackFamily, Counted, ThreatModel};
use crate::data::LabeledDataset;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset does not fit the model: {0}")]
    Mismatch(String),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("gradient accounting mismatch: attacks reported {reported}, counter saw {counted}")]
    Accounting { reported: u64, counted: u64 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What happened to one evaluated example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Misclassified before any perturbation; not attacked.
    CleanError,
    /// Every recorded iterate was classified correctly.
    Robust,
    /// First misclassified iterate (1-based step).
    Broken { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustAccuracyReport {
    pub attack: AttackConfig,
    pub epsilon: f64,
    /// Per-example outcomes for the first `outcomes.len()` dataset entries.
    pub outcomes: Vec<Outcome>,
    pub grad_evals: u64,
}

impl RobustAccuracyReport {
    pub fn examples(&self) -> usize {
        self.outcomes.len()
    }

    pub fn clean_correct(&self) -> usize {
        self.outcomes.iter().filter(|o| **o != Outcome::CleanError).count()
    }

    pub fn robust_correct(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == Outcome::Robust).count()
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.clean_correct() as f64 / self.examples() as f64
    }

    pub fn robust_accuracy(&self) -> f64 {
        self.robust_correct() as f64 / self.examples() as f64
    }
}

/// Attacks each example of `data` (all of it; use [`LabeledDataset::head`]
/// for the first-N subset) and tallies robust accuracy.
///
/// The gradient count is cross-checked against an instrumented wrapper
/// around the model.
pub fn eval_robust_accuracy(
    model: &Model<f32>,
    data: &LabeledDataset,
    attack: &AttackConfig,
    threat: &ThreatModel,
) -> Result<RobustAccuracyReport, BenchError> {
    check_fit(model, data)?;
    attack.validate()?;
    let counted = Counted::new(model);
    let per_example: Vec<(Outcome, u64)> = (0..data.len())
        .into_par_iter()
        .map(|i| -> Result<(Outcome, u64), BenchError> {
            let x = data.image::<f32>(i);
            let label = data.label(i);
            if model.predict(&x)? != label {
                return Ok((Outcome::CleanError, 0));
            }
            let budget = threat.budget(&x)?;
            let r = run_attack(&counted, label, &budget, attack, i as u64)?;
            let outcome = match r.first_success_step {
                Some(step) => Outcome::Broken { step },
                None => Outcome::Robust,
            };
            Ok((outcome, r.grad_evals))
        })
        .collect::<Result<_, _>>()?;

    let reported: u64 = per_example.iter().map(|(_, g)| g).sum();
    let counted = counted.grad_evals();
    if reported != counted {
        return Err(BenchError::Accounting { reported, counted });
    }
    Ok(RobustAccuracyReport {
        attack: *attack,
        epsilon: threat.epsilon,
        outcomes: per_example.into_iter().map(|(o, _)| o).collect(),
        grad_evals: reported,
    })
}

fn check_fit(model: &Model<f32>, data: &LabeledDataset) -> Result<(), BenchError> {
    if data.is_empty() {
        return Err(BenchError::Mismatch("empty dataset".into()));
    }
    if data.sample_shape() != model.input_shape() || data.classes() != model.classes() {
        return Err(BenchError::Mismatch(format!(
            "samples {:?} x {} classes vs model {:?} x {} classes",
            data.sample_shape(),
            data.classes(),
            model.input_shape(),
            model.classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweptParameter {
    /// Expected step `a` (scalar step for PGD).
    ExpectedStep,
    /// Number of attack steps `n`.
    Steps,
}

impl SweptParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweptParameter::ExpectedStep => "step_param",
            SweptParameter::Steps => "steps",
        }
    }
}

/// Families compared by the sweeps, in report column order.
pub const SWEEP_FAMILIES: [AttackFamily; 2] = [AttackFamily::Pgd, AttackFamily::Witchcraft];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweptParameter,
    pub grid: Vec<f64>,
    pub families: Vec<AttackFamily>,
    pub trials: usize,
    /// `reports[point][family][trial]`.
    pub reports: Vec<Vec<Vec<RobustAccuracyReport>>>,
}

impl SweepResult {
    pub fn robust_accuracies(&self, point: usize, family: usize) -> Vec<f64> {
        self.reports[point][family].iter().map(|r| r.robust_accuracy()).collect()
    }

    pub fn mean(&self, point: usize, family: usize) -> f64 {
        mean(&self.robust_accuracies(point, family))
    }

    /// Sample standard deviation across trials (0 for a single trial).
    pub fn std(&self, point: usize, family: usize) -> f64 {
        std_dev(&self.robust_accuracies(point, family))
    }

    pub fn family_index(&self, family: AttackFamily) -> Option<usize> {
        self.families.iter().position(|&f| f == family)
    }

    pub fn rows(&self) -> impl Iterator<Item = &RobustAccuracyReport> {
        self.reports.iter().flatten().flatten()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn check_sweep(grid: &[f64], trials: usize) -> Result<(), BenchError> {
    if grid.is_empty() || trials == 0 {
        return Err(BenchError::Sweep("grid must be nonempty and trials at least 1".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BenchError::Sweep(format!("grid {grid:?} is not strictly increasing")));
    }
    Ok(())
}

/// Trial `t` of a sweep runs with master seed `base.seed + t`.
fn trial_seed(base: &AttackConfig, trial: usize) -> u64 {
    base.seed.wrapping_add(trial as u64)
}

/// PGD with `tau = a` against WITCHcraft with expected step `a`, for each
/// `a` in `grid`, at `steps` steps. Flags and the base seed come from `base`.
pub fn sweep_expected_step(
    model: &Model<f32>,
    data: &LabeledDataset,
    threat: &ThreatModel,
    grid: &[f64],
    steps: usize,
    trials: usize,
    base: &AttackConfig,
) -> Result<SweepResult, BenchError> {
    check_sweep(grid, trials)?;
    let mut reports = Vec::with_capacity(grid.len());
    for &a in grid {
        let mut per_family = Vec::new();
        for family in SWEEP_FAMILIES {
            let mut per_trial = Vec::with_capacity(trials);
            for t in 0..trials {
                let cfg = AttackConfig {
                    family,
                    step: a,
                    steps,
                    restarts: 1,
                    seed: trial_seed(base, t),
                    ..*base
                };
                per_trial.push(eval_robust_accuracy(model, data, &cfg, threat)?);
            }
            per_family.push(per_trial);
        }
        reports.push(per_family);
    }
    Ok(SweepResult {
        parameter: SweptParameter::ExpectedStep,
        grid: grid.to_vec(),
        families: SWEEP_FAMILIES.to_vec(),
        trials,
        reports,
    })
}

/// Robust accuracy as a function of the step count `n` for PGD (`tau = a`)
/// and WITCHcraft (expected step `a`).
///
/// A run of `n` steps is a prefix of a run of `m > n` steps with the same
/// seed, so each trial runs once at the largest `n` and the smaller grid
/// points are read off the first misclassified step.
pub fn sweep_steps(
    model: &Model<f32>,
    data: &LabeledDataset,
    threat: &ThreatModel,
    grid: &[usize],
    a: f64,
    trials: usize,
    base: &AttackConfig,
) -> Result<SweepResult, BenchError> {
    let fgrid: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
    check_sweep(&fgrid, trials)?;
    if grid[0] == 0 {
        return Err(BenchError::Sweep("step counts must be at least 1".into()));
    }
    let longest = *grid.last().expect("nonempty");
    let mut reports = vec![Vec::new(); grid.len()];
    for family in SWEEP_FAMILIES {
        let mut per_point = vec![Vec::with_capacity(trials); grid.len()];
        for t in 0..trials {
            let cfg = AttackConfig {
                family,
                step: a,
                steps: longest,
                restarts: 1,
                seed: trial_seed(base, t),
                ..*base
            };
            let full = eval_robust_accuracy(model, data, &cfg, threat)?;
            for (slot, &n) in per_point.iter_mut().zip(grid) {
                slot.push(truncate_report(&full, n));
            }
        }
        for (slot, point) in reports.iter_mut().zip(per_point) {
            slot.push(point);
        }
    }
    Ok(SweepResult {
        parameter: SweptParameter::Steps,
        grid: fgrid,
        families: SWEEP_FAMILIES.to_vec(),
        trials,
        reports,
    })
}

/// The report a run of `n <= full.attack.steps` steps would have produced.
fn truncate_report(full: &RobustAccuracyReport, n: usize) -> RobustAccuracyReport {
    let mut grad_evals = 0u64;
    let outcomes = full
        .outcomes
        .iter()
        .map(|&o| match o {
            Outcome::CleanError => o,
            Outcome::Broken { step } if step <= n => {
                grad_evals += if full.attack.early_stop { step } else { n } as u64;
                o
            }
            _ => {
                grad_evals += n as u64;
                Outcome::Robust
            }
        })
        .collect();
    RobustAccuracyReport {
        attack: AttackConfig {
            steps: n,
            ..full.attack
        },
        epsilon: full.epsilon,
        outcomes,
        grad_evals,
    }
}
