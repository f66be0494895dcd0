//! Config-driven sweeps over width, depth, sparsity, optimizer and seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continual::{run_sequence, save_record, ProtocolConfig, SpillPolicy, DEFAULT_GAP_PROBE};
use crate::dataset::{
    build_task_sequence, encode_idx, load_split, synthetic_tasks, RawCorpus, SyntheticSpec,
    TaskDataset, DEFAULT_ANGLES,
};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_matrix, average_accuracy, average_forgetting, forgetting_curve, joint_accuracy,
    learning_accuracy,
};
use crate::optim::{OptimizerKind, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::seed;
use crate::theory::{fit_power_law, measure_drift, DriftFit, DriftObservation};

/// Environment variable naming the default dataset directory.
pub const DATA_ENV: &str = "WIDTHLAB_DATA";
pub const SCHEMA_VERSION: u32 = 1;
pub const FIXED_COLUMNS: [&str; 9] = [
    "width", "depth", "alpha", "optimizer", "seed", "AA", "AF", "LA", "JA",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    /// Falls back to `$WIDTHLAB_DATA`, then `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    pub angles: Vec<f64>,
    pub train_subsample: Option<usize>,
    pub test_subsample: Option<usize>,
    pub data_seed: u64,
    /// Replaces the image corpus with synthetic clusters; a fifth of each
    /// task's examples is held out for testing.
    pub synthetic: Option<SyntheticSpec>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub alphas: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    /// `None` uses each optimizer's default rate.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub swap_heads: bool,
    pub gap_probe: usize,
    pub joint: bool,
    /// Task whose transition to the next one is used for drift.
    pub drift_task: usize,
    pub save_records: bool,
    pub spill_budget_bytes: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            train_split: "train".into(),
            test_split: "t10k".into(),
            angles: DEFAULT_ANGLES.to_vec(),
            train_subsample: Some(5000),
            test_subsample: Some(1000),
            data_seed: 0,
            synthetic: None,
            widths: vec![32, 128, 512, 2048],
            depths: vec![1],
            alphas: vec![1.0],
            optimizers: vec![OptimizerKind::Sgd],
            seeds: vec![0, 1, 2],
            master_seed: 0,
            lr: None,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            swap_heads: false,
            gap_probe: DEFAULT_GAP_PROBE,
            joint: true,
            drift_task: 0,
            save_records: true,
            spill_budget_bytes: None,
            out_dir: None,
            workers: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("widths", self.widths.is_empty()),
            ("depths", self.depths.is_empty()),
            ("alphas", self.alphas.is_empty()),
            ("optimizers", self.optimizers.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("`{name}` must not be empty")));
        }
        if self.synthetic.is_none() && self.angles.is_empty() {
            return Err(Error::Config("`angles` must not be empty".into()));
        }
        for &w in &self.widths {
            if w == 0 {
                return Err(Error::Config("widths must be positive".into()));
            }
            if !w.is_power_of_two() {
                log::warn!("width {w} is not a power of two");
            }
        }
        if self.depths.contains(&0) {
            return Err(Error::Config("depths must be positive".into()));
        }
        for &a in &self.alphas {
            crate::continual::validate_alpha(a)?;
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &width in &self.widths {
            for &depth in &self.depths {
                for &alpha in &self.alphas {
                    for &optimizer in &self.optimizers {
                        for &seed in &self.seeds {
                            cells.push(Cell {
                                width,
                                depth,
                                alpha,
                                optimizer,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    fn protocol(&self, cell: &Cell) -> ProtocolConfig {
        let mut p = ProtocolConfig::new(
            cell.width,
            cell.depth,
            cell.alpha,
            cell.optimizer,
            cell.derived_seed(self.master_seed),
        );
        if let Some(lr) = self.lr {
            p.lr = lr;
        }
        p.batch_size = self.batch_size;
        p.epochs = self.epochs;
        p.swap_heads = self.swap_heads;
        p.gap_probe = self.gap_probe;
        p.spill = self.spill_budget_bytes.map(|budget_bytes| SpillPolicy {
            dir: self
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("."))
                .join("spill"),
            budget_bytes,
        });
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub width: usize,
    pub depth: usize,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "w{}-d{}-a{}-{}-s{}",
            self.width,
            self.depth,
            self.alpha,
            self.optimizer.name(),
            self.seed
        )
    }

    /// Depends only on the master seed and this cell's own key, so adding
    /// cells to a sweep leaves existing cells untouched.
    pub fn derived_seed(&self, master: u64) -> u64 {
        seed::derive(master, &[seed::fnv1a(self.key().as_bytes())])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: Cell,
    pub aa: f64,
    pub af: f64,
    pub la: f64,
    pub ja: Option<f64>,
    pub curve: Vec<f64>,
    pub drift: Vec<DriftObservation>,
    pub final_losses: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Vec<TaskDataset>,
    pub test: Vec<TaskDataset>,
    pub source: String,
}

pub fn load_tasks(cfg: &SweepConfig) -> Result<TaskData> {
    if let Some(spec) = cfg.synthetic {
        let all = synthetic_tasks(spec, cfg.data_seed)?;
        let held_out = (spec.n / 5).max(1);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for t in &all {
            let (a, b) = t.split_at(spec.n - held_out)?;
            train.push(a);
            test.push(b);
        }
        return Ok(TaskData {
            train,
            test,
            source: format!("synthetic {spec:?}"),
        });
    }
    let dir = cfg.resolved_data_dir();
    let train_corpus = load_split(&dir, &cfg.train_split)?;
    let test_corpus = load_split(&dir, &cfg.test_split)?;
    let test_seed = seed::derive(cfg.data_seed, &[1]);
    Ok(TaskData {
        train: build_task_sequence(&train_corpus, &cfg.angles, cfg.train_subsample, cfg.data_seed)?,
        test: build_task_sequence(&test_corpus, &cfg.angles, cfg.test_subsample, test_seed)?,
        source: format!(
            "idx {}/{} ({} / {} images)",
            cfg.train_split,
            cfg.test_split,
            train_corpus.len(),
            test_corpus.len()
        ),
    })
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("worker pool: {e}"))),
    }
}

/// Runs `f` for every cell on the worker pool and returns results in cell
/// order; the first failing cell (in that order) is reported.
fn map_cells<T: Send>(
    cfg: &SweepConfig,
    cells: &[Cell],
    f: impl Fn(&Cell) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> =
        with_pool(cfg.workers, || cells.par_iter().map(|c| f(c)).collect())?;
    results
        .into_iter()
        .zip(cells)
        .map(|(r, c)| r.map_err(|e| in_cell(e, c)))
        .collect()
}

fn in_cell(e: Error, cell: &Cell) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("cell {}: {msg}", cell.key())),
        Error::Degenerate(msg) => Error::Degenerate(format!("cell {}: {msg}", cell.key())),
        other => other,
    }
}

fn run_cell(cfg: &SweepConfig, data: &TaskData, cell: &Cell, records_dir: Option<&Path>) -> Result<ResultRow> {
    let started = Instant::now();
    let protocol = cfg.protocol(cell);
    let record = run_sequence(&data.train, &protocol)?;
    let r = accuracy_matrix(&record, &data.test)?;
    let ja = if cfg.joint {
        Some(joint_accuracy(&data.train, &data.test, &protocol)?)
    } else {
        None
    };
    let drift = if cfg.drift_task + 1 < record.num_tasks() {
        measure_drift(&record, cfg.drift_task)?
    } else {
        Vec::new()
    };
    if let Some(dir) = records_dir {
        save_record(&record, &dir.join(cell.key()))?;
    }
    Ok(ResultRow {
        cell: *cell,
        aa: average_accuracy(&r)?,
        af: average_forgetting(&r)?,
        la: learning_accuracy(&r)?,
        ja,
        curve: forgetting_curve(&r)?,
        drift,
        final_losses: record.final_losses.clone(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub fit: Option<DriftFit>,
    pub tasks: usize,
    pub source: String,
}

/// Runs every cell of the sweep. Per-cell records are written under
/// `records_dir` when given.
pub fn run_sweep(cfg: &SweepConfig, records_dir: Option<&Path>) -> Result<SweepOutcome> {
    cfg.validate()?;
    let data = load_tasks(cfg)?;
    let cells = cfg.cells();
    let rows = map_cells(cfg, &cells, |c| run_cell(cfg, &data, c, records_dir))?;
    Ok(SweepOutcome {
        fit: fit_drift(&rows)?,
        tasks: data.train.len(),
        source: data.source,
        rows,
    })
}

/// Power-law fit over every drift point of the sweep, or `None` when the
/// points cover a single active count.
pub fn fit_drift(rows: &[ResultRow]) -> Result<Option<DriftFit>> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .flat_map(|r| &r.drift)
        .map(|d| (d.active_count as f64, d.drift))
        .collect();
    let distinct: BTreeSet<usize> = rows
        .iter()
        .flat_map(|r| &r.drift)
        .map(|d| d.active_count)
        .collect();
    if distinct.len() < 2 {
        return Ok(None);
    }
    fit_power_law(&points).map(Some)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"))
}

/// `results.csv` contents: the fixed columns, then `f1..fT`.
pub fn results_csv(rows: &[ResultRow], tasks: usize) -> String {
    let mut out = FIXED_COLUMNS.join(",");
    for t in 1..=tasks {
        let _ = write!(out, ",f{t}");
    }
    out.push('\n');
    for r in rows {
        let c = &r.cell;
        let _ = write!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            c.width,
            c.depth,
            c.alpha,
            c.optimizer.name(),
            c.seed,
            r.aa,
            r.af,
            r.la,
            fmt_opt(r.ja)
        );
        for f in &r.curve {
            let _ = write!(out, ",{f:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn drift_csv(rows: &[ResultRow]) -> String {
    let mut out =
        String::from("width,depth,alpha,optimizer,seed,layer,active_count,drift,drift_spectral\n");
    for r in rows {
        let c = &r.cell;
        for d in &r.drift {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.9e},{:.9e}",
                c.width,
                c.depth,
                c.alpha,
                c.optimizer.name(),
                c.seed,
                d.layer,
                d.active_count,
                d.drift,
                d.drift_spectral
            );
        }
    }
    out
}

#[derive(Serialize)]
struct FitSummary<'a> {
    fit: &'a DriftFit,
    /// `(active count, γ·count^(−β))` samples across the observed range.
    predicted: Vec<(f64, f64)>,
}

fn fit_summary(fit: &DriftFit, rows: &[ResultRow]) -> Result<String> {
    let counts = rows.iter().flat_map(|r| &r.drift).map(|d| d.active_count as f64);
    let lo = counts.clone().fold(f64::INFINITY, f64::min);
    let hi = counts.fold(0.0, f64::max);
    const SAMPLES: usize = 32;
    let predicted = (0..SAMPLES)
        .map(|k| {
            let n = lo * (hi / lo).powf(k as f64 / (SAMPLES - 1) as f64);
            (n, fit.predict(n))
        })
        .collect();
    Ok(serde_json::to_string_pretty(&FitSummary { fit, predicted })?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    columns: Vec<String>,
    tasks: usize,
    data: &'a str,
    config: SweepConfig,
    cells: Vec<ManifestCell>,
    drift_fit: Option<DriftFit>,
}

#[derive(Serialize)]
struct ManifestCell {
    key: String,
    seed: u64,
    derived_seed: u64,
}

fn manifest_json(cfg: &SweepConfig, outcome: &SweepOutcome) -> Result<String> {
    // Where outputs go and how many threads ran does not change any result.
    let mut config = cfg.clone();
    config.out_dir = None;
    config.workers = None;
    let mut columns: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    columns.extend((1..=outcome.tasks).map(|t| format!("f{t}")));
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        columns,
        tasks: outcome.tasks,
        data: &outcome.source,
        cells: outcome
            .rows
            .iter()
            .map(|r| ManifestCell {
                key: r.cell.key(),
                seed: r.cell.seed,
                derived_seed: r.cell.derived_seed(cfg.master_seed),
            })
            .collect(),
        drift_fit: outcome.fit,
        config,
    };
    Ok(serde_json::to_string_pretty(&manifest)?)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Writes `results.csv`, `manifest.json`, `timings.json`, `drift.csv` and,
/// when a fit exists, `drift_fit.json` into `dir`.
pub fn write_outputs(cfg: &SweepConfig, outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_file(dir, "results.csv", &results_csv(&outcome.rows, outcome.tasks))?;
    write_file(dir, "manifest.json", &manifest_json(cfg, outcome)?)?;
    write_file(dir, "drift.csv", &drift_csv(&outcome.rows))?;
    if let Some(fit) = &outcome.fit {
        write_file(dir, "drift_fit.json", &fit_summary(fit, &outcome.rows)?)?;
    }
    let timings: Vec<_> = outcome
        .rows
        .iter()
        .map(|r| serde_json::json!({ "cell": r.cell.key(), "seconds": r.seconds, "final_losses": r.final_losses }))
        .collect();
    write_file(dir, "timings.json", &serde_json::to_string_pretty(&timings)?)
}

fn out_dir(cfg: &SweepConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// The `run` command: full sweep plus every artifact.
pub fn cli_run(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;
    let records = cfg.save_records.then(|| dir.join("records"));
    let outcome = run_sweep(cfg, records.as_deref())?;
    write_outputs(cfg, &outcome, &dir)?;
    Ok(outcome)
}

/// The `drift` command: trains only up to the drift transition of every cell,
/// writes `drift.csv`, then fits the power law (which needs two widths).
pub fn cli_drift(cfg: &SweepConfig) -> Result<DriftFit> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;
    let mut data = load_tasks(cfg)?;
    let keep = cfg.drift_task + 2;
    if data.train.len() < keep {
        return Err(Error::Config(format!(
            "drift_task {} needs {keep} tasks, data has {}",
            cfg.drift_task,
            data.train.len()
        )));
    }
    data.train.truncate(keep);
    let cells = cfg.cells();
    let rows = map_cells(cfg, &cells, |c| {
        let started = Instant::now();
        let record = run_sequence(&data.train, &cfg.protocol(c))?;
        Ok(ResultRow {
            cell: *c,
            aa: f64::NAN,
            af: f64::NAN,
            la: f64::NAN,
            ja: None,
            curve: Vec::new(),
            drift: measure_drift(&record, cfg.drift_task)?,
            final_losses: record.final_losses.clone(),
            seconds: started.elapsed().as_secs_f64(),
        })
    })?;
    write_file(&dir, "drift.csv", &drift_csv(&rows))?;
    let fit = fit_drift(&rows)?.ok_or_else(|| {
        Error::Config("the power-law fit needs drift at two or more distinct widths".into())
    })?;
    write_file(&dir, "drift_fit.json", &fit_summary(&fit, &rows)?)?;
    Ok(fit)
}

/// The `datagen` command: writes one IDX pair per task and split into `dir`,
/// named `task{k}-{split}-*-ubyte.gz`, with pixels requantized to bytes.
pub fn cli_datagen(cfg: &SweepConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = load_tasks(cfg)?;
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (split, tasks) in [(&cfg.train_split, &data.train), (&cfg.test_split, &data.test)] {
        for (k, task) in tasks.iter().enumerate() {
            let side = (task.dim() as f64).sqrt() as usize;
            let (height, width) = if side * side == task.dim() {
                (side, side)
            } else {
                (1, task.dim())
            };
            let corpus = RawCorpus {
                height,
                width,
                images: task.inputs.data().iter().map(|v| (v * 255.0).round() as u8).collect(),
                labels: task.labels.iter().map(|&l| l as u8).collect(),
            };
            let (images, labels) = encode_idx(&corpus);
            for (kind, bytes) in [("images-idx3", images), ("labels-idx1", labels)] {
                let path = dir.join(format!("task{k}-{split}-{kind}-ubyte.gz"));
                write_gz(&path, &bytes)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn write_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    use flate2::{write::GzEncoder, Compression, GzBuilder};
    use std::io::Write;
    let file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut enc: GzEncoder<fs::File> = GzBuilder::new().mtime(0).write(file, Compression::default());
    enc.write_all(bytes)
        .and_then(|_| enc.finish().map(|_| ()))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
