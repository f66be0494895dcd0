//! Sequential task training with per-task row masks.
//!
//! `M_1` starts from a fresh initialization; every later `M_{t+1}` starts from
//! `M_t`'s weights and trains under a freshly sampled mask. All snapshots and
//! masks are kept so that forgetting and drift can be measured afterwards.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::network::{
    decode_snapshot, encode_snapshot, init_model, logits_batch, pack_bits, unpack_bits,
    ActiveRowMask, Architecture, ModelSnapshot,
};
use crate::optim::{train_epochs, OptimizerKind, TrainConfig};
use crate::seed;

/// Default number of examples per task used for the output-gap table.
pub const DEFAULT_GAP_PROBE: usize = 500;

/// Each row of each maskable layer is active independently with probability
/// `alpha`. The stream is keyed by `(seed, task_id)`.
pub fn sample_mask(
    alpha: f64,
    width: usize,
    depth: usize,
    seed: u64,
    task_id: usize,
) -> Result<ActiveRowMask> {
    validate_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(ActiveRowMask::full(width, depth));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[task_id as u64]));
    let layers = (0..depth)
        .map(|_| (0..width).map(|_| rng.gen::<f64>() < alpha).collect())
        .collect();
    Ok(ActiveRowMask { alpha, layers })
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} must lie in (0, 1]")))
    }
}

/// Where snapshots go once the in-memory budget is used up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpillPolicy {
    pub dir: PathBuf,
    pub budget_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub alpha: f64,
    pub swap_heads: bool,
    pub width: usize,
    pub depth: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Base seed; initialization, masks and shuffling streams derive from it.
    pub seed: u64,
    pub gap_probe: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill: Option<SpillPolicy>,
}

impl ProtocolConfig {
    pub fn new(width: usize, depth: usize, alpha: f64, optimizer: OptimizerKind, seed: u64) -> Self {
        let t = TrainConfig::new(optimizer, 0);
        Self {
            alpha,
            swap_heads: false,
            width,
            depth,
            optimizer,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed,
            gap_probe: DEFAULT_GAP_PROBE,
            spill: None,
        }
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, &[seed::TAG_INIT])
    }

    pub fn mask_seed(&self) -> u64 {
        seed::derive(self.seed, &[seed::TAG_MASK])
    }

    pub fn train_config(&self, task: usize) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: seed::derive(self.seed, &[seed::TAG_TRAIN, task as u64]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config(format!(
                "width {} and depth {} must be positive",
                self.width, self.depth
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// A snapshot either held in memory or spilled to a snapshot file.
#[derive(Clone, Debug)]
pub enum SnapshotSlot {
    InMemory(ModelSnapshot),
    OnDisk(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub max_gap: f64,
    pub mean_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    /// Task whose data and mask are used (0-based).
    pub t: usize,
    pub t_prime: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
}

/// Input and output layers trained for one task (head-swapping mode only).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHeads {
    pub input: Matrix,
    pub output: Matrix,
    pub arch: Architecture,
}

#[derive(Clone, Debug)]
pub struct ExperimentRecord {
    pub config: ProtocolConfig,
    pub snapshots: Vec<SnapshotSlot>,
    pub masks: Vec<ActiveRowMask>,
    pub heads: Vec<TaskHeads>,
    pub gaps: Vec<GapEntry>,
    pub final_losses: Vec<f64>,
    /// Wall-clock seconds per task; not part of the persisted record.
    pub stage_seconds: Vec<f64>,
}

impl ExperimentRecord {
    pub fn num_tasks(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshot(&self, t: usize) -> Result<Cow<'_, ModelSnapshot>> {
        match self.snapshots.get(t) {
            Some(SnapshotSlot::InMemory(m)) => Ok(Cow::Borrowed(m)),
            Some(SnapshotSlot::OnDisk(p)) => {
                let bytes =
                    fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                Ok(Cow::Owned(decode_snapshot(&bytes)?.0))
            }
            None => Err(Error::InvalidInput(format!(
                "record has {} snapshots, asked for {t}",
                self.snapshots.len()
            ))),
        }
    }

    /// The model that snapshot `i` uses for inference on task `j`: snapshot
    /// `i` itself, or with head swapping its interior layers plus task `j`'s
    /// archived heads.
    pub fn model_for_task(&self, i: usize, j: usize) -> Result<Cow<'_, ModelSnapshot>> {
        let snap = self.snapshot(i)?;
        if !self.config.swap_heads || i == j {
            return Ok(snap);
        }
        let heads = &self.heads[j];
        let mut model = snap.into_owned();
        let last = model.output_layer();
        model.layers[0] = heads.input.clone();
        model.layers[last] = heads.output.clone();
        model.arch = heads.arch;
        model.specs = heads.arch.layer_specs();
        Ok(Cow::Owned(model))
    }

    pub fn gap(&self, t: usize, t_prime: usize) -> Option<&GapEntry> {
        self.gaps.iter().find(|g| g.t == t && g.t_prime == t_prime)
    }
}

/// Max and mean ℓ₂ distance between the two models' logits over `probe`,
/// both evaluated under `mask`.
pub fn output_gap(
    m_a: &ModelSnapshot,
    m_b: &ModelSnapshot,
    probe: &TaskDataset,
    mask: &ActiveRowMask,
) -> Result<GapStats> {
    if !m_a.same_architecture(m_b) {
        return Err(Error::Shape("models have different architectures".into()));
    }
    let a = logits_batch(m_a, mask, &probe.inputs)?;
    let b = logits_batch(m_b, mask, &probe.inputs)?;
    let diff = a.sub(&b)?;
    let gaps: Vec<f64> = (0..diff.rows()).map(|i| l2_norm(diff.row(i))).collect();
    Ok(GapStats {
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
    })
}

fn architecture_for(task: &TaskDataset, cfg: &ProtocolConfig) -> Architecture {
    Architecture {
        input_dim: task.dim(),
        width: cfg.width,
        depth: cfg.depth,
        classes: task.classes,
    }
}

/// Trains `tasks` in order and records every intermediate model.
pub fn run_sequence(tasks: &[TaskDataset], cfg: &ProtocolConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let first = tasks
        .first()
        .ok_or_else(|| Error::Config("no tasks to train on".into()))?;
    if !cfg.swap_heads {
        if let Some(t) = tasks
            .iter()
            .find(|t| t.dim() != first.dim() || t.classes != first.classes)
        {
            return Err(Error::Config(format!(
                "task {} is (d={}, K={}) but task {} is (d={}, K={}); enable head swapping",
                t.task_id,
                t.dim(),
                t.classes,
                first.task_id,
                first.dim(),
                first.classes
            )));
        }
    }

    let mut model = init_model(architecture_for(first, cfg), cfg.init_seed())?;
    let mut snapshots = Vec::with_capacity(tasks.len());
    let mut masks = Vec::with_capacity(tasks.len());
    let mut heads = Vec::new();
    let mut final_losses = Vec::with_capacity(tasks.len());
    let mut stage_seconds = Vec::with_capacity(tasks.len());
    let mut resident_bytes = 0u64;

    for (t, task) in tasks.iter().enumerate() {
        let started = Instant::now();
        let mask = sample_mask(cfg.alpha, cfg.width, cfg.depth, cfg.mask_seed(), t)?;
        if cfg.swap_heads && t > 0 {
            let arch = architecture_for(task, cfg);
            let fresh = init_model(arch, seed::derive(cfg.seed, &[seed::TAG_HEADS, t as u64]))?;
            let last = model.output_layer();
            model.layers[0] = fresh.layers[0].clone();
            model.layers[last] = fresh.layers[last].clone();
            model.arch = arch;
            model.specs = arch.layer_specs();
        }
        let outcome = train_epochs(&model, &mask, task, &cfg.train_config(t))?;
        model = outcome.model;
        model.task_id = t;
        final_losses.push(outcome.epoch_losses.last().copied().unwrap_or(f64::NAN));
        if cfg.swap_heads {
            heads.push(TaskHeads {
                input: model.layers[0].clone(),
                output: model.layers[model.output_layer()].clone(),
                arch: model.arch,
            });
        }

        let bytes = (model.layers.iter().map(|m| m.data().len()).sum::<usize>() * 8) as u64;
        let slot = match &cfg.spill {
            Some(spill) if resident_bytes + bytes > spill.budget_bytes => {
                fs::create_dir_all(&spill.dir)
                    .map_err(|e| Error::io(format!("creating {}", spill.dir.display()), e))?;
                let path = spill.dir.join(format!("spill_{:016x}_{t}.wlsn", cfg.seed));
                fs::write(&path, encode_snapshot(&model, Some(&mask)))
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
                SnapshotSlot::OnDisk(path)
            }
            _ => {
                resident_bytes += bytes;
                SnapshotSlot::InMemory(model.clone())
            }
        };
        snapshots.push(slot);
        masks.push(mask);
        stage_seconds.push(started.elapsed().as_secs_f64());
        log::debug!(
            "task {t}: loss {:.4} in {:.1}s",
            final_losses[t],
            stage_seconds[t]
        );
    }

    let mut record = ExperimentRecord {
        config: cfg.clone(),
        snapshots,
        masks,
        heads,
        gaps: Vec::new(),
        final_losses,
        stage_seconds,
    };
    record.gaps = gap_table(&record, tasks)?;
    Ok(record)
}

/// `ε_{t,t'}` statistics for every `t ≤ t'` over the first `gap_probe`
/// examples of task `t`, evaluated under task `t`'s mask.
fn gap_table(record: &ExperimentRecord, tasks: &[TaskDataset]) -> Result<Vec<GapEntry>> {
    let mut gaps = Vec::new();
    for t in 0..record.num_tasks() {
        let probe = tasks[t].head(record.config.gap_probe.max(1));
        let base = record.snapshot(t)?;
        for t_prime in t..record.num_tasks() {
            let later = record.model_for_task(t_prime, t)?;
            let stats = output_gap(&base, &later, &probe, &record.masks[t])?;
            gaps.push(GapEntry {
                t,
                t_prime,
                max_gap: stats.max_gap,
                mean_gap: stats.mean_gap,
            });
        }
    }
    Ok(gaps)
}

#[derive(Serialize, Deserialize)]
struct RecordManifest {
    config: ProtocolConfig,
    init_seed: u64,
    mask_seed: u64,
    tasks: usize,
    snapshots: Vec<String>,
    masks: Vec<MaskEntry>,
    gaps: Vec<GapEntry>,
    final_losses: Vec<f64>,
    #[serde(default)]
    heads: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MaskEntry {
    alpha: f64,
    width: usize,
    /// One base64 bitmap (LSB first) per maskable layer.
    layers: Vec<String>,
}

/// Writes one snapshot file per task plus `manifest.json` into `dir`.
pub fn save_record(record: &ExperimentRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    let mut names = Vec::new();
    for t in 0..record.num_tasks() {
        let name = format!("snapshot_{t}.wlsn");
        write(&name, &encode_snapshot(&*record.snapshot(t)?, Some(&record.masks[t])))?;
        names.push(name);
    }
    let mut head_names = Vec::new();
    for (t, h) in record.heads.iter().enumerate() {
        // Heads are stored as a snapshot whose interior layers are zero.
        let mut m = record.snapshot(record.num_tasks() - 1)?.into_owned();
        let last = m.output_layer();
        for l in 1..last {
            m.layers[l] = Matrix::zeros(m.layers[l].rows(), m.layers[l].cols());
        }
        m.layers[0] = h.input.clone();
        m.layers[last] = h.output.clone();
        m.arch = h.arch;
        m.specs = h.arch.layer_specs();
        m.task_id = t;
        let name = format!("heads_{t}.wlsn");
        write(&name, &encode_snapshot(&m, None))?;
        head_names.push(name);
    }
    let manifest = RecordManifest {
        config: record.config.clone(),
        init_seed: record.config.init_seed(),
        mask_seed: record.config.mask_seed(),
        tasks: record.num_tasks(),
        snapshots: names,
        masks: record
            .masks
            .iter()
            .map(|m| MaskEntry {
                alpha: m.alpha,
                width: m.layers.first().map_or(0, Vec::len),
                layers: m.layers.iter().map(|l| BASE64.encode(pack_bits(l))).collect(),
            })
            .collect(),
        gaps: record.gaps.clone(),
        final_losses: record.final_losses.clone(),
        heads: head_names,
    };
    write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_record(dir: &Path) -> Result<ExperimentRecord> {
    let path = dir.join("manifest.json");
    let text =
        fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: RecordManifest = serde_json::from_str(&text)?;
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
    };
    let mut snapshots = Vec::new();
    for name in &manifest.snapshots {
        snapshots.push(SnapshotSlot::InMemory(decode_snapshot(&read(name)?)?.0));
    }
    let masks = manifest
        .masks
        .iter()
        .map(|m| {
            let layers = m
                .layers
                .iter()
                .map(|b| {
                    let bytes = BASE64
                        .decode(b)
                        .map_err(|e| Error::Format(format!("mask bitmap: {e}")))?;
                    if bytes.len() != m.width.div_ceil(8) {
                        return Err(Error::Format("mask bitmap has the wrong length".into()));
                    }
                    Ok(unpack_bits(&bytes, m.width))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ActiveRowMask {
                alpha: m.alpha,
                layers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut heads = Vec::new();
    for name in &manifest.heads {
        let (m, _) = decode_snapshot(&read(name)?)?;
        heads.push(TaskHeads {
            input: m.layers[0].clone(),
            output: m.layers[m.output_layer()].clone(),
            arch: m.arch,
        });
    }
    Ok(ExperimentRecord {
        config: manifest.config,
        snapshots,
        masks,
        heads,
        gaps: manifest.gaps,
        final_losses: manifest.final_losses,
        stage_seconds: Vec::new(),
    })
}
