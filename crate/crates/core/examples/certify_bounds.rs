//! Compares the snapshots after the first and last task of a sequence and
//! prints the certificate, the measured constants and both closed-form bounds.

use widthlab::continual::{run_sequence, ProtocolConfig};
use widthlab::dataset::{synthetic_tasks, SyntheticSpec};
use widthlab::optim::OptimizerKind;
use widthlab::theory::{bound_report, fit_power_law, measure_drift};

fn main() -> widthlab::Result<()> {
    let tasks = synthetic_tasks(SyntheticSpec { tasks: 3, n: 200, d: 16, classes: 4 }, 21)?;

    // A drift fit is needed for the closed-form bounds.
    let mut points = Vec::new();
    let mut records = Vec::new();
    for width in [32, 64, 128] {
        let mut cfg = ProtocolConfig::new(width, 2, 0.5, OptimizerKind::Sgd, 1);
        cfg.lr = 0.05;
        cfg.epochs = 5;
        let record = run_sequence(&tasks, &cfg)?;
        points.extend(measure_drift(&record, 0)?.iter().map(|o| (o.active_count as f64, o.drift)));
        records.push(record);
    }
    let fit = fit_power_law(&points)?;

    let record = &records[1];
    let first = record.snapshot(0)?;
    let last = record.snapshot(record.num_tasks() - 1)?;
    let report = bound_report(&first, &last, &record.masks[0], &tasks[0], Some(&fit))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
