//! Measures weight drift between consecutive tasks at several widths and
//! fits `drift = γ · count^{−β}`.

use widthlab::continual::{run_sequence, ProtocolConfig};
use widthlab::dataset::{synthetic_tasks, SyntheticSpec};
use widthlab::optim::OptimizerKind;
use widthlab::theory::{fit_power_law, measure_drift};

fn main() -> widthlab::Result<()> {
    let tasks = synthetic_tasks(SyntheticSpec { tasks: 2, n: 300, d: 24, classes: 4 }, 5)?;
    let mut points = Vec::new();
    for width in [16, 32, 64, 128, 256, 512] {
        for seed in 0..3 {
            let mut cfg = ProtocolConfig::new(width, 1, 1.0, OptimizerKind::Sgd, seed);
            cfg.lr = 0.1;
            cfg.epochs = 10;
            let record = run_sequence(&tasks, &cfg)?;
            for obs in measure_drift(&record, 0)? {
                println!(
                    "W {:>4} seed {seed} layer {}: drift {:.5} (spectral {:.5})",
                    obs.width, obs.layer, obs.drift, obs.drift_spectral
                );
                points.push((obs.active_count as f64, obs.drift));
            }
        }
    }
    let fit = fit_power_law(&points)?;
    println!(
        "gamma {:.5}  beta {:.4}  r {:.4}  over {} points",
        fit.gamma, fit.beta, fit.r, fit.points
    );
    for w in [1024.0, 4096.0, 65536.0] {
        println!("predicted drift at {w}: {:.5}", fit.predict(w));
    }
    Ok(())
}
