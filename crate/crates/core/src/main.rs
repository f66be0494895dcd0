use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use widthlab::dataset::{build_task_sequence, load_split};
use widthlab::network::{load_snapshot, ActiveRowMask};
use widthlab::optim::OptimizerKind;
use widthlab::report::{cli_report, markdown_table};
use widthlab::runner::{cli_datagen, cli_drift, cli_run, SweepConfig, DATA_ENV};
use widthlab::theory::{bound_report, DriftFit};
use widthlab::{Error, Result};

#[derive(Parser)]
#[command(name = "widthlab", version, about = "Width and forgetting experiments on rotated-image task sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full sweep and write results.csv, manifest.json and records.
    Run(SweepArgs),
    /// Measure drift across widths and fit the power law.
    Drift(SweepArgs),
    /// Compare two snapshots and print the bound report as JSON.
    Certify(CertifyArgs),
    /// Summarize a results.csv and draw SVG charts.
    Report(ReportArgs),
    /// Write the rotated task sequence as IDX files.
    Datagen(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    optimizer: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    swap_heads: bool,
}

impl SweepArgs {
    fn config(&self) -> Result<SweepConfig> {
        let mut cfg = match &self.config {
            Some(p) => SweepConfig::load(p)?,
            None => SweepConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        if let Some(v) = self.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = &self.widths {
            cfg.widths = v.clone();
        }
        if let Some(v) = &self.alphas {
            cfg.alphas = v.clone();
        }
        if let Some(v) = &self.depths {
            cfg.depths = v.clone();
        }
        if let Some(v) = &self.optimizer {
            cfg.optimizers = vec![v.parse::<OptimizerKind>()?];
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if self.swap_heads {
            cfg.swap_heads = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CertifyArgs {
    /// Earlier snapshot; its stored mask is used for both models.
    #[arg(long)]
    snapshot_a: PathBuf,
    #[arg(long)]
    snapshot_b: PathBuf,
    /// Directory with IDX files for the probe set (defaults to $WIDTHLAB_DATA).
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long, default_value = "t10k")]
    split: String,
    /// Rotation applied to the probe images, in degrees.
    #[arg(long, default_value_t = 0.0)]
    angle: f64,
    #[arg(long, default_value_t = 1000)]
    probe_size: usize,
    /// drift_fit.json from a `drift` or `run`; enables the closed-form bounds.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out/results.csv")]
    results: PathBuf,
    #[arg(long, default_value = "out/report")]
    out: PathBuf,
}

fn read_fit(path: &PathBuf) -> Result<DriftFit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(serde_json::from_value(value.get("fit").cloned().unwrap_or(value))?)
}

fn certify(args: &CertifyArgs) -> Result<()> {
    let (a, mask) = load_snapshot(&args.snapshot_a)?;
    let (b, _) = load_snapshot(&args.snapshot_b)?;
    if !a.same_architecture(&b) {
        return Err(Error::Shape(format!(
            "{} and {} have different architectures",
            args.snapshot_a.display(),
            args.snapshot_b.display()
        )));
    }
    let mask = mask.unwrap_or_else(|| ActiveRowMask::full(a.width(), a.depth()));
    let dir = args
        .probe
        .clone()
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let corpus = load_split(&dir, &args.split)?;
    let n = args.probe_size.min(corpus.len());
    let probe = build_task_sequence(&corpus, &[args.angle], Some(n), 0)?.remove(0);
    let fit = args.fit.as_ref().map(read_fit).transpose()?;
    let report = bound_report(&a, &b, &mask, &probe, fit.as_ref())?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, &json).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    }
    eprintln!(
        "certificate holds: {}  (premise holds: {})",
        report.certificate.holds, report.certificate.premise_holds
    );
    if let Some(h) = report.theorem1_holds {
        eprintln!("closed-form bound holds: {h}");
    }
    if let Some(h) = report.noise_stability_holds {
        eprintln!("noise-stability bound holds: {h}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let outcome = cli_run(&cfg)?;
            eprintln!("{} cells finished", outcome.rows.len());
            if let Some(fit) = outcome.fit {
                eprintln!("drift fit: gamma {:.4}, beta {:.4}, r {:.3}", fit.gamma, fit.beta, fit.r);
            }
        }
        Command::Drift(args) => {
            let fit = cli_drift(&args.config()?)?;
            println!("gamma {:.6} beta {:.6} r {:.4} points {}", fit.gamma, fit.beta, fit.r, fit.points);
        }
        Command::Certify(args) => certify(&args)?,
        Command::Report(args) => {
            let summary = cli_report(&args.results, &args.out)?;
            print!("{}", markdown_table(&summary));
        }
        Command::Datagen(args) => {
            let cfg = args.config()?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out/tasks"));
            let files = cli_datagen(&cfg, &dir)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
