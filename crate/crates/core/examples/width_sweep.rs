//! Runs a small width sweep and writes the sweep artifacts.
//!
//!     cargo run --example width_sweep -- [out_dir]
//!
//! Uses the IDX data under `$WIDTHLAB_DATA` when set, synthetic clusters
//! otherwise.

use std::path::PathBuf;

use widthlab::dataset::SyntheticSpec;
use widthlab::runner::{run_sweep, write_outputs, SweepConfig, DATA_ENV};

fn main() -> widthlab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/width_sweep".into()));
    let mut cfg = SweepConfig {
        widths: vec![16, 64, 256],
        seeds: vec![0, 1],
        lr: Some(0.1),
        ..SweepConfig::default()
    };
    if std::env::var_os(DATA_ENV).is_none() {
        cfg.synthetic = Some(SyntheticSpec { tasks: 4, n: 300, d: 24, classes: 4 });
        cfg.epochs = 15;
    } else {
        cfg.train_subsample = Some(1000);
        cfg.test_subsample = Some(500);
    }

    let outcome = run_sweep(&cfg, None)?;
    write_outputs(&cfg, &outcome, &out)?;
    println!("{} cells on {}", outcome.rows.len(), outcome.source);
    for row in &outcome.rows {
        println!(
            "{:<20} AA {:.3}  AF {:.3}  LA {:.3}  JA {:.3}",
            row.cell.key(),
            row.aa,
            row.af,
            row.la,
            row.ja.unwrap_or(f64::NAN)
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
