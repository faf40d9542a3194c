//! CSV output: one row per (config, trial), plus per-sweep plot data.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{BenchError, RobustAccuracyReport, SweepResult};
use crate::attack::AttackFamily;

pub const CSV_HEADER: [&str; 10] = [
    "attack",
    "steps",
    "step_param",
    "restarts",
    "epsilon",
    "seed",
    "examples",
    "clean_acc",
    "robust_acc",
    "grad_evals",
];

/// Data rows, in CSV column order.
pub fn report_rows<'a>(reports: impl IntoIterator<Item = &'a RobustAccuracyReport>) -> Vec<[String; 10]> {
    reports
        .into_iter()
        .map(|r| {
            let a = &r.attack;
            let step = if a.family == AttackFamily::Fgsm { r.epsilon } else { a.step };
            [
                a.family.name().to_string(),
                a.steps.to_string(),
                step.to_string(),
                a.restarts.to_string(),
                r.epsilon.to_string(),
                a.seed.to_string(),
                r.examples().to_string(),
                r.clean_accuracy().to_string(),
                r.robust_accuracy().to_string(),
                r.grad_evals.to_string(),
            ]
        })
        .collect()
}

/// Plot data: the swept value, then the mean robust accuracy of each family.
pub fn plot_rows(sweep: &SweepResult) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![sweep.parameter.name().to_string()];
    header.extend(sweep.families.iter().map(|f| f.name().to_string()));
    let rows = sweep
        .grid
        .iter()
        .enumerate()
        .map(|(p, x)| {
            let mut row = vec![x.to_string()];
            row.extend((0..sweep.families.len()).map(|f| sweep.mean(p, f).to_string()));
            row
        })
        .collect();
    (header, rows)
}

fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), BenchError> {
    let io = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(File::create(path).map_err(io)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.as_ref())?;
    }
    w.into_inner().map_err(|e| io(e.into_error()))?.flush().map_err(io)
}

pub fn emit_report(reports: &[RobustAccuracyReport], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_csv(path.as_ref(), &CSV_HEADER, &report_rows(reports))
}

/// Writes every trial of `sweep` to `path` and the plot data to `plot_path`.
pub fn emit_sweep(sweep: &SweepResult, path: impl AsRef<Path>, plot_path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_csv(path.as_ref(), &CSV_HEADER, &report_rows(sweep.rows()))?;
    let (header, rows) = plot_rows(sweep);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(plot_path.as_ref(), &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackConfig, ThreatModel};
    use crate::bench::{eval_robust_accuracy, sweep_expected_step};
    use crate::data::synthetic_blobs;
    use crate::model::{build_model, ArchSpec};

    #[test]
    fn single_report_is_two_lines() {
        let data = synthetic_blobs(2, 3, 8, 0).unwrap();
        let model = build_model(&ArchSpec::mlp_small(&[3], 2), 0).unwrap();
        let r = eval_robust_accuracy(&model, &data, &AttackConfig::pgd(0.1, 3), &ThreatModel::linf(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_report(&[r.clone()], &path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first.lines().count(), 2);
        assert_eq!(first.lines().next().unwrap(), CSV_HEADER.join(","));

        let again = eval_robust_accuracy(&model, &data, &AttackConfig::pgd(0.1, 3), &ThreatModel::linf(0.1)).unwrap();
        emit_report(&[again], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
    }

    #[test]
    fn sweep_rows_are_points_times_families_times_trials() {
        let data = synthetic_blobs(2, 3, 6, 0).unwrap();
        let model = build_model(&ArchSpec::mlp_small(&[3], 2), 0).unwrap();
        let grid = [0.01, 0.02, 0.03, 0.04, 0.05];
        let s = sweep_expected_step(&model, &data, &ThreatModel::linf(0.1), &grid, 2, 3, &AttackConfig::pgd(1.0, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (rows, plot) = (dir.path().join("s.csv"), dir.path().join("p.csv"));
        emit_sweep(&s, &rows, &plot).unwrap();
        assert_eq!(std::fs::read_to_string(&rows).unwrap().lines().count(), 1 + 30);
        let plot = std::fs::read_to_string(&plot).unwrap();
        assert_eq!(plot.lines().next().unwrap(), "step_param,pgd,witchcraft");
        assert_eq!(plot.lines().count(), 1 + 5);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let data = synthetic_blobs(2, 3, 4, 0).unwrap();
        let model = build_model(&ArchSpec::mlp_small(&[3], 2), 0).unwrap();
        let r = eval_robust_accuracy(&model, &data, &AttackConfig::fgsm(), &ThreatModel::linf(0.1)).unwrap();
        let err = emit_report(&[r], "/nonexistent-dir/x.csv").unwrap_err();
        assert!(matches!(err, BenchError::Io { .. }));
    }
}
