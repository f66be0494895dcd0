//! Builds the rotated task sequence from an IDX corpus, prints per-task
//! statistics and writes the tasks back out as IDX files.
//!
//!     WIDTHLAB_DATA=data/mnist cargo run --example datagen -- out/tasks

use std::path::PathBuf;

use widthlab::runner::{cli_datagen, load_tasks, SweepConfig};
use widthlab::theory::measure_chi;

fn main() -> widthlab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/tasks".into()));
    let cfg = SweepConfig {
        train_subsample: Some(2000),
        test_subsample: Some(500),
        ..SweepConfig::default()
    };
    let data = load_tasks(&cfg)?;
    println!("source: {}", data.source);
    for (train, test) in data.train.iter().zip(&data.test) {
        let mean: f64 = train.inputs.data().iter().sum::<f64>() / train.inputs.data().len() as f64;
        println!(
            "task {} at {:>5.1} deg: {} train / {} test, mean pixel {:.4}, max input norm {:.3}",
            train.task_id,
            train.rotation_deg,
            train.len(),
            test.len(),
            mean,
            measure_chi(train)
        );
    }
    let files = cli_datagen(&cfg, &out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}
