//! Turns a results.csv into a summary table and SVG charts.
//!
//!     cargo run --example report_charts -- out/results.csv out/report
//!
//! Without arguments a tiny synthetic sweep is run first.

use std::path::PathBuf;

use widthlab::dataset::SyntheticSpec;
use widthlab::report::{cli_report, markdown_table};
use widthlab::runner::{cli_run, SweepConfig};

fn main() -> widthlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (results, out) = match args.as_slice() {
        [results, out] => (PathBuf::from(results), PathBuf::from(out)),
        _ => {
            let dir = PathBuf::from("out/report_demo");
            let cfg = SweepConfig {
                synthetic: Some(SyntheticSpec { tasks: 4, n: 200, d: 16, classes: 4 }),
                widths: vec![16, 64, 256],
                depths: vec![1, 2],
                seeds: vec![0, 1],
                lr: Some(0.1),
                epochs: 10,
                save_records: false,
                out_dir: Some(dir.clone()),
                ..SweepConfig::default()
            };
            cli_run(&cfg)?;
            (dir.join("results.csv"), dir.join("report"))
        }
    };
    let summary = cli_report(&results, &out)?;
    print!("{}", markdown_table(&summary));
    println!("charts in {}", out.display());
    Ok(())
}
