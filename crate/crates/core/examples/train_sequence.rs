//! Trains one network through a synthetic task sequence and prints the
//! accuracy matrix with the forgetting metrics.
//!
//!     cargo run --example train_sequence -- [width] [alpha]

use widthlab::continual::{run_sequence, ProtocolConfig};
use widthlab::dataset::{synthetic_tasks, SyntheticSpec};
use widthlab::metrics::{
    accuracy_matrix, average_accuracy, average_forgetting, forgetting_curve, learning_accuracy,
};
use widthlab::optim::OptimizerKind;

fn main() -> widthlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let width: usize = args.next().map_or(64, |s| s.parse().expect("width"));
    let alpha: f64 = args.next().map_or(1.0, |s| s.parse().expect("alpha"));

    let spec = SyntheticSpec { tasks: 4, n: 400, d: 20, classes: 5 };
    let (train, test): (Vec<_>, Vec<_>) = synthetic_tasks(spec, 11)?
        .into_iter()
        .map(|t| t.split_at(320))
        .collect::<widthlab::Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let mut cfg = ProtocolConfig::new(width, 1, alpha, OptimizerKind::Sgd, 3);
    cfg.lr = 0.1;
    cfg.epochs = 10;
    let record = run_sequence(&train, &cfg)?;
    let r = accuracy_matrix(&record, &test)?;

    println!("R[i][j] after task i, evaluated on task j:");
    for i in 0..r.tasks() {
        let row: Vec<String> = (0..=i).map(|j| format!("{:.3}", r.get(i, j).unwrap())).collect();
        println!("  {}", row.join("  "));
    }
    println!("AA {:.4}", average_accuracy(&r)?);
    println!("AF {:.4}", average_forgetting(&r)?);
    println!("LA {:.4}", learning_accuracy(&r)?);
    println!("forgetting curve {:?}", forgetting_curve(&r)?);
    for gap in &record.gaps {
        println!("output gap {}->{}: max {:.4} mean {:.4}", gap.t, gap.t_prime, gap.max_gap, gap.mean_gap);
    }
    Ok(())
}
