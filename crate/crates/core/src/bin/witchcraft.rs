//! Command-line front end: training, attacks, sweeps and self-tests.
//!
//! Any subcommand accepts `--config FILE` with `key=value` lines naming the
//! same long flags; flags given on the command line win.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use witchcraft::attack::{AttackConfig, AttackFamily, ThreatModel};
use witchcraft::bench::{self, KeyValues, SweepResult};
use witchcraft::data::{LabeledDataset, MnistFiles};
use witchcraft::model::{build_model, Arch, ArchSpec, Model};
use witchcraft::selftest;
use witchcraft::train::{adversarial_train, train_sgd, AdversarialConfig, InnerAttack, TrainConfig};
use witchcraft::weights::{load_weights, save_weights};

#[derive(Parser, Debug)]
#[command(name = "witchcraft", version, about = "l-inf attacks, adversarial training and robustness sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier on MNIST, optionally with PGD adversarial training.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Attack the first N test examples and report robust accuracy.
    #[command(args_override_self = true)]
    Attack(AttackArgs),
    /// PGD (tau = a) vs WITCHcraft (expected step a) over a grid of a.
    #[command(name = "sweep-step-size", args_override_self = true)]
    SweepStepSize(SweepStepSizeArgs),
    /// PGD vs WITCHcraft over a grid of step counts.
    #[command(name = "sweep-steps", args_override_self = true)]
    SweepSteps(SweepStepsArgs),
    /// Gradient, linear-oracle, degenerate-randomness and feasibility suites.
    #[command(args_override_self = true)]
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// key=value file supplying defaults for any flag of this subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rayon worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory with the standard MNIST file names (default: $MNIST_DIR,
    /// else the bundled subset).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

impl DataArgs {
    fn files(&self) -> MnistFiles {
        let mut f = match &self.mnist_dir {
            Some(dir) => MnistFiles::in_dir(dir),
            None => MnistFiles::from_env(),
        };
        for (slot, given) in [
            (&mut f.train_images, &self.train_images),
            (&mut f.train_labels, &self.train_labels),
            (&mut f.test_images, &self.test_images),
            (&mut f.test_labels, &self.test_labels),
        ] {
            if let Some(p) = given {
                *slot = p.clone();
            }
        }
        f
    }

    fn test_set(&self, examples: usize) -> Result<LabeledDataset> {
        let f = self.files();
        let data = f
            .test(Some(examples))
            .with_context(|| format!("loading {}", f.test_images.display()))?;
        if data.len() < examples {
            bail!("requested {examples} test examples, {} available", data.len());
        }
        Ok(data)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// mlp-small or cnn-2conv.
    #[arg(long, default_value = "cnn-2conv")]
    arch: Arch,
    /// Use only the first N training examples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Seeds both initialization and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on PGD perturbations (true/false).
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    adversarial: bool,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 7)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    /// Grow eps and step size linearly over this many leading epochs.
    #[arg(long, default_value_t = 0)]
    ramp_epochs: usize,
    /// Inner attack: pgd or witchcraft.
    #[arg(long, default_value = "pgd")]
    inner: AttackFamily,
    #[arg(long)]
    weights_out: PathBuf,
}

#[derive(Args, Debug)]
struct AttackFlagsArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Evaluate the first N test examples.
    #[arg(long, default_value_t = 1000)]
    examples: usize,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop an attack at its first misclassified iterate (true/false).
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    early_stop: bool,
    /// Start from a uniform point of the budget (true/false).
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    random_init: bool,
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    attack: AttackFlagsArgs,
    /// fgsm, pgd, pgd-restarts, witchcraft or multi-targeted.
    #[arg(long, default_value = "pgd")]
    family: AttackFamily,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Step tau, or expected step a for witchcraft.
    #[arg(long, default_value_t = 0.01)]
    step_param: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Repeat with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Args, Debug)]
struct SweepStepSizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    attack: AttackFlagsArgs,
    /// Comma-separated, strictly increasing values of a.
    #[arg(long, default_value = "0.01,0.02,0.03")]
    grid: String,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long)]
    plot_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepStepsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    attack: AttackFlagsArgs,
    /// Comma-separated, strictly increasing step counts.
    #[arg(long, default_value = "10,40,100")]
    grid: String,
    #[arg(long, default_value_t = 0.01)]
    step_param: f64,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long)]
    plot_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smaller suites, for a fast smoke check.
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    quick: bool,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => argv.get(i + 1).map(PathBuf::from),
        Some(rest) => rest.strip_prefix('=').map(PathBuf::from),
        None => None,
    })
}

/// Inserts the config file's pairs right after the subcommand, so explicit
/// flags (which come later) override them.
fn parse() -> Result<Cli> {
    let argv: Vec<String> = std::env::args().collect();
    let Some(path) = config_path(&argv) else {
        return Ok(Cli::parse_from(&argv));
    };
    let kv = KeyValues::load(&path)?;
    if kv.get("config").is_some() {
        bail!("{}: config files cannot include other config files", path.display());
    }
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(at) = argv.iter().position(|a| names.contains(a)) else {
        return Ok(Cli::parse_from(&argv));
    };
    let mut merged = argv[..=at].to_vec();
    merged.extend(kv.to_args());
    merged.extend_from_slice(&argv[at + 1..]);
    Ok(Cli::parse_from(merged))
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(a) => &a.common,
            Command::Attack(a) => &a.common,
            Command::SweepStepSize(a) => &a.common,
            Command::SweepSteps(a) => &a.common,
            Command::Selftest(a) => &a.common,
        }
    }
}

fn run() -> Result<()> {
    let cli = parse()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.command.common().workers)
        .build()?;
    pool.install(|| match cli.command {
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::SweepStepSize(a) => sweep_step_size(a),
        Command::SweepSteps(a) => sweep_steps(a),
        Command::Selftest(a) => run_selftest(a),
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let files = a.data.files();
    let data = files
        .train(a.limit)
        .with_context(|| format!("loading {}", files.train_images.display()))?;
    let spec = ArchSpec::new(a.arch, data.sample_shape(), data.classes());
    let model: Model<f32> = build_model(&spec, a.seed)?;
    let cfg = TrainConfig::new(a.epochs, a.batch_size, a.lr, a.seed);
    let start = Instant::now();
    let (model, log) = if a.adversarial {
        let inner = match a.inner {
            AttackFamily::Pgd => InnerAttack::Pgd,
            AttackFamily::Witchcraft => InnerAttack::Witchcraft,
            other => bail!("inner attack must be pgd or witchcraft, got {other}"),
        };
        let adv = AdversarialConfig {
            epsilon: a.eps,
            steps: a.steps,
            step_size: a.step_size,
            inner,
            ramp_epochs: a.ramp_epochs,
        };
        adversarial_train(model, &data, &cfg.with_adversary(adv))?
    } else {
        train_sgd(model, &data, &cfg)?
    };
    for (e, loss) in log.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.5}", e + 1);
    }
    if log.infeasible_perturbations > 0 {
        bail!("{} crafted perturbations left the budget", log.infeasible_perturbations);
    }
    save_weights(&model, &a.weights_out)?;
    println!(
        "trained {} on {} examples in {:.1}s -> {}",
        model.name(),
        data.len(),
        start.elapsed().as_secs_f64(),
        a.weights_out.display()
    );
    Ok(())
}

fn load_model(a: &AttackFlagsArgs) -> Result<Model<f32>> {
    load_weights(&a.weights).with_context(|| format!("loading {}", a.weights.display()))
}

fn base_config(a: &AttackFlagsArgs, family: AttackFamily, step: f64, steps: usize) -> AttackConfig {
    AttackConfig::new(family, step, steps)
        .with_seed(a.seed)
        .with_early_stop(a.early_stop)
        .with_random_init(a.random_init)
}

fn parse_grid<T: std::str::FromStr>(grid: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    grid.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("grid value `{s}`: {e}")))
        .collect()
}

fn attack(a: AttackArgs) -> Result<()> {
    let model = load_model(&a.attack)?;
    let data = a.data.test_set(a.attack.examples)?;
    if a.trials == 0 {
        bail!("trials must be at least 1");
    }
    let mut cfg = base_config(&a.attack, a.family, a.step_param, a.steps);
    cfg.restarts = a.restarts;
    if a.family == AttackFamily::Fgsm {
        cfg.steps = 1;
        cfg.random_init = false;
    }
    let threat = ThreatModel::linf(a.attack.eps);
    let mut reports = Vec::with_capacity(a.trials);
    for t in 0..a.trials {
        let r = bench::eval_robust_accuracy(&model, &data, &cfg.with_seed(a.attack.seed + t as u64), &threat)?;
        println!(
            "{} seed {}: clean {:.4} robust {:.4} ({} gradient evaluations)",
            cfg.family,
            r.attack.seed,
            r.clean_accuracy(),
            r.robust_accuracy(),
            r.grad_evals
        );
        reports.push(r);
    }
    if let Some(path) = &a.attack.csv_out {
        bench::emit_report(&reports, path)?;
    }
    Ok(())
}

fn print_sweep(s: &SweepResult) {
    print!("{:>12}", s.parameter.name());
    for f in &s.families {
        print!("  {:>22}", f.name());
    }
    println!();
    for (p, x) in s.grid.iter().enumerate() {
        print!("{x:>12}");
        for f in 0..s.families.len() {
            print!("  {:>13.4} +- {:.4}", s.mean(p, f), s.std(p, f));
        }
        println!();
    }
}

fn finish_sweep(s: &SweepResult, a: &AttackFlagsArgs, plot_out: &Option<PathBuf>) -> Result<()> {
    print_sweep(s);
    match (&a.csv_out, plot_out) {
        (Some(csv), Some(plot)) => bench::emit_sweep(s, csv, plot)?,
        (Some(csv), None) => bench::emit_sweep(s, csv, csv.with_extension("plot.csv"))?,
        (None, Some(_)) => bail!("--plot-out needs --csv-out"),
        (None, None) => {}
    }
    Ok(())
}

fn sweep_step_size(a: SweepStepSizeArgs) -> Result<()> {
    let model = load_model(&a.attack)?;
    let data = a.data.test_set(a.attack.examples)?;
    let grid: Vec<f64> = parse_grid(&a.grid)?;
    let base = base_config(&a.attack, AttackFamily::Pgd, grid[0], a.steps);
    let s = bench::sweep_expected_step(&model, &data, &ThreatModel::linf(a.attack.eps), &grid, a.steps, a.trials, &base)?;
    finish_sweep(&s, &a.attack, &a.plot_out)
}

fn sweep_steps(a: SweepStepsArgs) -> Result<()> {
    let model = load_model(&a.attack)?;
    let data = a.data.test_set(a.attack.examples)?;
    let grid: Vec<usize> = parse_grid(&a.grid)?;
    let base = base_config(&a.attack, AttackFamily::Pgd, a.step_param, 1);
    let s = bench::sweep_steps(&model, &data, &ThreatModel::linf(a.attack.eps), &grid, a.step_param, a.trials, &base)?;
    finish_sweep(&s, &a.attack, &a.plot_out)
}

fn run_selftest(a: SelftestArgs) -> Result<()> {
    let (models, cases, cnns, steps) = if a.quick { (10, 5, 3, 2_000) } else { (50, 20, 10, 10_000) };
    let outcomes = [
        selftest::gradient_check_suite(models, a.seed, 1e-4),
        selftest::linear_oracle_suite(cases, a.seed, 0.1, 1e-6),
        selftest::degenerate_equivalence_suite(cnns, 20, a.seed),
        selftest::feasibility_suite(steps, a.seed),
    ];
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!("{failed} self-test suite(s) failed");
    }
    Ok(())
}
