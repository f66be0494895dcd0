//! Monte Carlo checks of the mask-overlap law and of the expected drift on
//! surviving rows under redrawn masks.

use widthlab::continual::{run_sequence, ProtocolConfig};
use widthlab::dataset::{synthetic_tasks, SyntheticSpec};
use widthlab::optim::{train_epochs, OptimizerKind};
use widthlab::theory::{
    fit_power_law, intersection_stats, lambda_ratios, lemma2_check, measure_drift, DEFAULT_RESEEDS,
};

fn main() -> widthlab::Result<()> {
    for (alpha, width) in [(0.3, 1000), (0.5, 400), (1.0, 64)] {
        let s = intersection_stats(alpha, width, 10_000, 7)?;
        println!(
            "alpha {alpha} W {width}: mean overlap {:.3}, expected {:.1}, stderr {:.4} (binomial {:.4})",
            s.empirical_mean, s.expected, s.stderr, s.binomial_stderr
        );
    }

    let tasks = synthetic_tasks(SyntheticSpec { tasks: 3, n: 200, d: 16, classes: 4 }, 3)?;
    let mut points = Vec::new();
    let mut records = Vec::new();
    for width in [32, 64, 128, 256] {
        let mut cfg = ProtocolConfig::new(width, 1, 0.5, OptimizerKind::Sgd, 2);
        cfg.lr = 0.05;
        let record = run_sequence(&tasks, &cfg)?;
        points.extend(measure_drift(&record, 0)?.iter().map(|o| (o.active_count as f64, o.drift)));
        records.push(record);
    }
    let fit = fit_power_law(&points)?;
    println!("drift fit: gamma {:.4} beta {:.4} r {:.3}", fit.gamma, fit.beta, fit.r);

    let record = &records[2];
    let table = lambda_ratios(record, 0, 2)?;
    println!("lambda_bar over tasks 0..=2: {:.4} ({} ratios)", table.lambda_bar, table.entries.len());

    let train_cfg = record.config.train_config(1);
    let report = lemma2_check(record, 0, &fit, DEFAULT_RESEEDS, |model, mask| {
        Ok(train_epochs(model, mask, &tasks[1], &train_cfg)?.model)
    })?;
    for layer in &report.layers {
        println!(
            "layer {}: mean drift {:.5} vs mean bound {:.5} -> {}",
            layer.layer, layer.mean_lhs, layer.mean_rhs, layer.holds
        );
    }
    Ok(())
}
