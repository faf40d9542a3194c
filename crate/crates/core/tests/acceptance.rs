//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The MNIST criteria train `cnn-2conv` once and cache the weights under
//! the cargo target tmp dir, so later runs only pay for the attacks. Data
//! comes from `$MNIST_DIR` when set, otherwise from the bundled subset.
//! `ACCEPTANCE_ONLY=1,8` runs a subset of criteria. The process fails when
//! a correctness criterion fails; the empirical ones (5, 5a, 6) only report.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use witchcraft::attack::{AttackConfig, ThreatModel};
use witchcraft::bench::{self, SweepResult};
use witchcraft::data::{load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, DataError, LabeledDataset, MnistFiles};
use witchcraft::model::{build_model, ArchSpec, Model};
use witchcraft::selftest;
use witchcraft::train::{adversarial_train, train_sgd, AdversarialConfig, TrainConfig};
use witchcraft::weights::{load_weights, save_weights};

const SEED: u64 = 2024;
const EMPIRICAL: [&str; 3] = ["5", "5a", "6"];
const EPSILON: f64 = 0.3;
const TRIALS: usize = 5;
const TEST_EXAMPLES: usize = 1000;

/// Training recipe for the MNIST criteria.
const TRAIN_EXAMPLES: usize = 10_000;
const EPOCHS: usize = 10;
const RAMP_EPOCHS: usize = 5;
const BATCH: usize = 50;
const LR: f64 = 0.05;
const PGD_TRAIN_STEP: f64 = 0.1;

struct Verdict {
    id: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let tag = if v.passed { "PASS" } else { "FAIL" };
    println!("{tag} [{}] {}: {}", v.id, v.name, v.detail);
}

fn timed(limit_s: f64, outcome: selftest::SuiteOutcome, start: Instant) -> (bool, String) {
    let secs = start.elapsed().as_secs_f64();
    (
        outcome.passed && secs < limit_s,
        format!("{} ({secs:.1}s, limit {limit_s:.0}s)", outcome.detail),
    )
}

fn c1() -> Verdict {
    let start = Instant::now();
    let (passed, detail) = timed(60.0, selftest::gradient_check_suite(50, SEED, 1e-4), start);
    Verdict {
        id: "1",
        name: "gradient correctness",
        passed,
        detail,
    }
}

fn c2() -> Verdict {
    let start = Instant::now();
    let (passed, detail) = timed(60.0, selftest::linear_oracle_suite(20, SEED, 0.1, 1e-6), start);
    Verdict {
        id: "2",
        name: "linear-model oracle",
        passed,
        detail,
    }
}

fn c3() -> Verdict {
    let o = selftest::degenerate_equivalence_suite(10, 20, SEED);
    Verdict {
        id: "3",
        name: "degenerate-randomness equivalence",
        passed: o.passed,
        detail: o.detail,
    }
}

fn c4() -> Verdict {
    let o = selftest::feasibility_suite(10_000, SEED);
    Verdict {
        id: "4",
        name: "feasibility",
        passed: o.passed,
        detail: o.detail,
    }
}

fn out_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create acceptance output dir");
    dir
}

fn recipe() -> TrainConfig {
    TrainConfig::new(EPOCHS, BATCH, LR, SEED)
        .with_adversary(AdversarialConfig::pgd(EPSILON, PGD_TRAIN_STEP).with_ramp(RAMP_EPOCHS))
}

/// 7-step PGD adversarial training, radius ramped up to 0.3 over the first
/// epochs. Cached by recipe.
fn robust_model(files: &MnistFiles) -> Model<f32> {
    let key = format!("cnn2conv-n{TRAIN_EXAMPLES}-e{EPOCHS}-r{RAMP_EPOCHS}-b{BATCH}-lr{LR}-s{PGD_TRAIN_STEP}-seed{SEED}");
    let path = out_dir().join(format!("{key}.wts"));
    if let Ok(m) = load_weights(&path) {
        println!("     using cached weights {}", path.display());
        return m;
    }
    let start = Instant::now();
    let train = files.train(Some(TRAIN_EXAMPLES)).expect("MNIST training subset");
    let model = build_model(&ArchSpec::cnn_2conv(train.sample_shape(), 10), SEED).unwrap();
    let (model, log) = adversarial_train(model, &train, &recipe()).unwrap();
    assert_eq!(log.infeasible_perturbations, 0);
    println!(
        "     trained {key} in {:.0}s, epoch losses {:?}",
        start.elapsed().as_secs_f64(),
        log.epoch_losses.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>()
    );
    save_weights(&model, &path).unwrap();
    model
}

/// Same architecture, seed and schedule length, clean data throughout.
fn natural_twin(files: &MnistFiles) -> Model<f32> {
    let path = out_dir().join(format!("cnn2conv-natural-n{TRAIN_EXAMPLES}-e{EPOCHS}-seed{SEED}.wts"));
    if let Ok(m) = load_weights(&path) {
        return m;
    }
    let train = files.train(Some(TRAIN_EXAMPLES)).expect("MNIST training subset");
    let model = build_model(&ArchSpec::cnn_2conv(train.sample_shape(), 10), SEED).unwrap();
    let (model, _) = train_sgd(model, &train, &TrainConfig::new(EPOCHS, BATCH, LR, SEED)).unwrap();
    save_weights(&model, &path).unwrap();
    model
}

/// One-sided paired t-test of `mean(x - y) > 0`; returns `(t, p)`.
fn paired_t_greater(x: &[f64], y: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let (m, s) = (bench::mean(&d), bench::std_dev(&d));
    let n = d.len() as f64;
    if s == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return (f64::INFINITY.copysign(m), p);
    }
    let t = m / (s / n.sqrt());
    let p = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t);
    (t, p)
}

fn fmt_sweep(s: &SweepResult) -> String {
    s.grid
        .iter()
        .enumerate()
        .map(|(p, x)| {
            format!(
                "{}={x}: pgd {:.4}+-{:.4} wc {:.4}+-{:.4}",
                s.parameter.name(),
                s.mean(p, 0),
                s.std(p, 0),
                s.mean(p, 1),
                s.std(p, 1)
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn c5(model: &Model<f32>, test: &LabeledDataset) -> Verdict {
    let start = Instant::now();
    let grid = [0.01, 0.02, 0.03];
    let base = AttackConfig::pgd(grid[0], 40).with_seed(SEED);
    let s = bench::sweep_expected_step(model, test, &ThreatModel::linf(EPSILON), &grid, 40, TRIALS, &base).unwrap();
    let dir = out_dir();
    bench::emit_sweep(&s, dir.join("step_size_sweep.csv"), dir.join("step_size_sweep.plot.csv")).unwrap();
    let mut ordered = true;
    let mut significant = false;
    let mut tests = Vec::new();
    for p in 0..grid.len() {
        ordered &= s.mean(p, 1) <= s.mean(p, 0);
        let (t, pv) = paired_t_greater(&s.robust_accuracies(p, 0), &s.robust_accuracies(p, 1));
        significant |= pv < 0.05;
        tests.push(format!("a={}: t={t:.2} p={pv:.2e}", grid[p]));
    }
    Verdict {
        id: "5",
        name: "step-size ordering (WITCHcraft <= PGD)",
        passed: ordered && significant,
        detail: format!(
            "{}; paired one-sided tests {} ; {TRIALS} seeds, first {} test examples, {:.0}s; csv {}",
            fmt_sweep(&s),
            tests.join(", "),
            test.len(),
            start.elapsed().as_secs_f64(),
            dir.join("step_size_sweep.csv").display()
        ),
    }
}

fn c6(model: &Model<f32>, test: &LabeledDataset) -> Verdict {
    let start = Instant::now();
    let grid = [10, 40, 100];
    let a = 0.01;
    let base = AttackConfig::pgd(a, 1).with_seed(SEED);
    let s = bench::sweep_steps(model, test, &ThreatModel::linf(EPSILON), &grid, a, TRIALS, &base).unwrap();
    let dir = out_dir();
    bench::emit_sweep(&s, dir.join("steps_curve.csv"), dir.join("steps_curve.plot.csv")).unwrap();
    let monotone = (0..2).all(|f| {
        (0..TRIALS).all(|t| (1..grid.len()).all(|p| s.reports[p][f][t].robust_accuracy() <= s.reports[p - 1][f][t].robust_accuracy()))
    });
    // WITCHcraft's advantage (PGD minus WITCHcraft accuracy) per trial.
    let advantage = |p: usize| -> Vec<f64> {
        s.robust_accuracies(p, 0)
            .iter()
            .zip(s.robust_accuracies(p, 1))
            .map(|(pg, wc)| pg - wc)
            .collect()
    };
    let (first, last) = (advantage(0), advantage(grid.len() - 1));
    let growth: Vec<f64> = last.iter().zip(&first).map(|(l, f)| l - f).collect();
    let noise = 2.0 * bench::std_dev(&growth) / (TRIALS as f64).sqrt();
    let trend_ok = bench::mean(&growth) >= -noise;
    Verdict {
        id: "6",
        name: "steps curve",
        passed: monotone && trend_ok,
        detail: format!(
            "{}; advantage of WITCHcraft at n=10 {:.4}+-{:.4}, at n=100 {:.4}+-{:.4} (growth {:+.4}, noise band {noise:.4}); \
             non-increasing in every trial: {monotone}; {:.0}s; csv {}",
            fmt_sweep(&s),
            bench::mean(&first),
            bench::std_dev(&first),
            bench::mean(&last),
            bench::std_dev(&last),
            bench::mean(&growth),
            start.elapsed().as_secs_f64(),
            dir.join("steps_curve.csv").display()
        ),
    }
}

fn twin_check(model: &Model<f32>, twin: &Model<f32>, test: &LabeledDataset) -> Verdict {
    let cfg = AttackConfig::pgd(0.01, 40).with_seed(SEED);
    let threat = ThreatModel::linf(EPSILON);
    let adv = bench::eval_robust_accuracy(model, test, &cfg, &threat).unwrap();
    let nat = bench::eval_robust_accuracy(twin, test, &cfg, &threat).unwrap();
    Verdict {
        id: "5a",
        name: "adversarial training beats natural twin",
        passed: adv.robust_accuracy() > nat.robust_accuracy(),
        detail: format!(
            "40-step PGD robust accuracy {:.4} (clean {:.4}) vs natural {:.4} (clean {:.4})",
            adv.robust_accuracy(),
            adv.clean_accuracy(),
            nat.robust_accuracy(),
            nat.clean_accuracy()
        ),
    }
}

fn c7(weights: &Path, files: &MnistFiles) -> Verdict {
    let dir = out_dir();
    let run = |workers: usize, out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_witchcraft"))
            .arg("attack")
            .arg("--weights")
            .arg(weights)
            .arg("--test-images")
            .arg(&files.test_images)
            .arg("--test-labels")
            .arg(&files.test_labels)
            .args(["--family", "witchcraft", "--steps", "40", "--step-param", "0.02", "--eps", "0.3"])
            .args(["--examples", &TEST_EXAMPLES.to_string(), "--trials", "2", "--seed", "7"])
            .args(["--workers", &workers.to_string()])
            .arg("--csv-out")
            .arg(out)
            .output()
            .expect("run the witchcraft binary");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run(1, &dir.join("attack_w1.csv"));
    let b = run(4, &dir.join("attack_w4.csv"));
    Verdict {
        id: "7",
        name: "CLI determinism",
        passed: a == b && !a.is_empty(),
        detail: format!(
            "`attack` with 1 and 4 workers: {} vs {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    }
}

fn c8() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // 3 images of 2x3, labels 7, 0, 9.
    let mut images = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 3];
    let pixels: Vec<u8> = (0..18).map(|i| (i * 15) as u8).collect();
    images.extend(&pixels);
    let labels = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 7, 0, 9];

    let raw = parse_idx_images(&images).unwrap();
    check((raw.count, raw.rows, raw.cols) == (3, 2, 3), "image header");
    check(raw.pixels == pixels, "image bytes");
    check(parse_idx_labels(&labels).unwrap() == vec![7, 0, 9], "label bytes");
    let ds = LabeledDataset::from_idx(&raw, &parse_idx_labels(&labels).unwrap(), 10).unwrap();
    check(ds.sample_shape() == [2, 3, 1], "sample shape");
    check(
        ds.image::<f32>(1).data() == pixels[6..12].iter().map(|&b| b as f32 / 255.0).collect::<Vec<_>>().as_slice(),
        "normalized pixels",
    );

    let mut bad_magic = images.clone();
    bad_magic[3] = 0x01;
    check(matches!(parse_idx_images(&bad_magic), Err(DataError::BadMagic { found: 0x801, .. })), "image magic");
    check(matches!(parse_idx_labels(&images), Err(DataError::BadMagic { found: 0x803, .. })), "label magic");
    check(
        matches!(parse_idx_images(&images[..images.len() - 1]), Err(DataError::Truncated { expected: 34, actual: 33 })),
        "truncated images",
    );
    check(matches!(parse_idx_labels(&labels[..6]), Err(DataError::Truncated { .. })), "truncated header");
    let mut short_labels = labels.clone();
    short_labels[7] = 2;
    short_labels.pop();
    check(
        matches!(
            LabeledDataset::from_idx(&raw, &parse_idx_labels(&short_labels).unwrap(), 10),
            Err(DataError::CountMismatch { images: 3, labels: 2 })
        ),
        "count mismatch",
    );
    let mut big_label = labels.clone();
    big_label[10] = 10;
    check(
        matches!(
            LabeledDataset::from_idx(&raw, &parse_idx_labels(&big_label).unwrap(), 10),
            Err(DataError::LabelOutOfRange { index: 2, label: 10, .. })
        ),
        "label range",
    );

    // Same fixtures through files, plain and gzip-wrapped.
    let dir = tempfile::tempdir().unwrap();
    for gz in [false, true] {
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.path().join(name);
            if gz {
                use std::io::Write;
                let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
                e.write_all(bytes).unwrap();
                std::fs::write(&path, e.finish().unwrap()).unwrap();
            } else {
                std::fs::write(&path, bytes).unwrap();
            }
            path
        };
        let (ip, lp) = (write("i", &images), write("l", &labels));
        check(load_idx_images(&ip).unwrap() == raw, "file images");
        check(load_idx_labels(&lp).unwrap() == vec![7, 0, 9], "file labels");
    }
    check(matches!(load_idx_images(dir.path().join("missing")), Err(DataError::Io { .. })), "missing file");

    Verdict {
        id: "8",
        name: "IDX round-trip",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "fixtures parse exactly; magic, truncation, count and label-range corruptions each give their own error; gzip sniffed".into()
        } else {
            format!("failed checks: {failures:?}")
        },
    }
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().map_or(true, |o| o.iter().any(|w| w == id));
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };

    for (id, criterion) in [("1", c1 as fn() -> Verdict), ("2", c2), ("3", c3), ("4", c4), ("8", c8)] {
        if wanted(id) {
            record(criterion());
        }
    }

    if ["5", "6", "7"].iter().any(|id| wanted(id)) {
        let files = MnistFiles::from_env();
        let test = files.test(Some(TEST_EXAMPLES)).expect("MNIST test subset");
        assert_eq!(test.len(), TEST_EXAMPLES);
        let model = robust_model(&files);
        if wanted("5") {
            record(twin_check(&model, &natural_twin(&files), &test));
            record(c5(&model, &test));
        }
        if wanted("6") {
            record(c6(&model, &test));
        }
        if wanted("7") {
            let weights = out_dir().join("cli-model.wts");
            save_weights(&model, &weights).unwrap();
            record(c7(&weights, &files));
        }
    }

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    println!("acceptance: {} passed, {} failed {failed:?}", verdicts.len() - failed.len(), failed.len());
    // Criteria 5 and 6 are empirical statements about one trained model;
    // their verdicts are reported but only the correctness criteria gate.
    if failed.iter().any(|id| !EMPIRICAL.contains(id)) {
        std::process::exit(1);
    }
}
