//! Bias-free feed-forward networks with per-task row masks.
//!
//! A model of depth `D` has `L = D + 1` weight matrices: an input layer
//! `W × d`, `D - 1` interior layers `W × W` and an output layer `K × W`.
//! ReLU sits between consecutive layers and nothing follows the last one.
//! Every layer except the output layer has `W` hidden rows that a task's
//! [`ActiveRowMask`] can switch off; an inactive row outputs exactly zero and
//! receives a zero gradient.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RowIndexSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn lipschitz(self) -> f64 {
        1.0
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// One weight layer. `activation` is applied to this layer's output before it
/// feeds the next layer; the output layer uses `Identity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub lipschitz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    /// Number of hidden (width-`W`) layers.
    pub depth: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn num_layers(&self) -> usize {
        self.depth + 1
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        (0..self.num_layers())
            .map(|l| {
                let in_dim = if l == 0 { self.input_dim } else { self.width };
                let last = l == self.depth;
                let out_dim = if last { self.classes } else { self.width };
                let activation = if last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerSpec {
                    in_dim,
                    out_dim,
                    activation,
                    lipschitz: activation.lipschitz(),
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.depth == 0 || self.classes == 0 {
            return Err(Error::Config(format!(
                "architecture dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Full weight state of the model after training on task `task_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub arch: Architecture,
    pub specs: Vec<LayerSpec>,
    pub layers: Vec<Matrix>,
    pub task_id: usize,
}

impl ModelSnapshot {
    pub fn from_layers(arch: Architecture, layers: Vec<Matrix>, task_id: usize) -> Result<Self> {
        arch.validate()?;
        let specs = arch.layer_specs();
        if layers.len() != specs.len() {
            return Err(Error::Shape(format!(
                "{} layers for an architecture with {}",
                layers.len(),
                specs.len()
            )));
        }
        for (l, (m, s)) in layers.iter().zip(&specs).enumerate() {
            if m.shape() != (s.out_dim, s.in_dim) {
                return Err(Error::Shape(format!(
                    "layer {l} is {:?}, expected {:?}",
                    m.shape(),
                    (s.out_dim, s.in_dim)
                )));
            }
        }
        Ok(Self {
            arch,
            specs,
            layers,
            task_id,
        })
    }

    pub fn width(&self) -> usize {
        self.arch.width
    }

    pub fn depth(&self) -> usize {
        self.arch.depth
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn same_architecture(&self, other: &ModelSnapshot) -> bool {
        self.arch == other.arch
    }

    /// Rows of layer `l` that participate under `mask`.
    pub fn active_rows(&self, mask: &ActiveRowMask, l: usize) -> RowIndexSet {
        if l == self.output_layer() {
            RowIndexSet::all(self.arch.classes)
        } else {
            RowIndexSet::from_mask(&mask.layers[l])
        }
    }
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialization of every layer.
pub fn init_model(arch: Architecture, seed: u64) -> Result<ModelSnapshot> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_specs()
        .iter()
        .map(|s| {
            let bound = 1.0 / (s.in_dim as f64).sqrt();
            Matrix::from_fn(s.out_dim, s.in_dim, |_, _| rng.gen_range(-bound..=bound))
        })
        .collect();
    ModelSnapshot::from_layers(arch, layers, 0)
}

/// Which hidden rows a task may use, one vector per maskable layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveRowMask {
    pub alpha: f64,
    pub layers: Vec<Vec<bool>>,
}

impl ActiveRowMask {
    pub fn full(width: usize, depth: usize) -> Self {
        Self {
            alpha: 1.0,
            layers: vec![vec![true; width]; depth],
        }
    }

    pub fn empty(width: usize, depth: usize) -> Self {
        Self {
            alpha: 1.0,
            layers: vec![vec![false; width]; depth],
        }
    }

    pub fn active_count(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|&&on| on).count()
    }

    pub fn is_full(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|&on| on))
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.depth || self.layers.iter().any(|l| l.len() != arch.width) {
            return Err(Error::Shape(format!(
                "mask has {} layers of lengths {:?}, model needs {} of length {}",
                self.layers.len(),
                self.layers.iter().map(Vec::len).collect::<Vec<_>>(),
                arch.depth,
                arch.width
            )));
        }
        Ok(())
    }
}

/// Single-input forward pass with every intermediate vector retained.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `layer_inputs[l]` is the vector multiplied by layer `l`: the raw input
    /// for `l = 0`, otherwise the activated output of layer `l - 1`.
    pub layer_inputs: Vec<Vec<f64>>,
    /// `pre_activations[l]` is layer `l`'s output before its activation.
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn forward(model: &ModelSnapshot, mask: &ActiveRowMask, x: &[f64]) -> Result<ForwardTrace> {
    mask.check(&model.arch)?;
    if x.len() != model.arch.input_dim {
        return Err(Error::Shape(format!(
            "input of length {}, model expects {}",
            x.len(),
            model.arch.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    let mut layer_inputs = Vec::with_capacity(model.num_layers());
    let mut pre_activations = Vec::with_capacity(model.num_layers());
    let mut h = x.to_vec();
    for (l, (a, spec)) in model.layers.iter().zip(&model.specs).enumerate() {
        let mut z = a.matvec(&h)?;
        if let Some(active) = mask.layers.get(l) {
            for (zi, &on) in z.iter_mut().zip(active) {
                if !on {
                    *zi = 0.0;
                }
            }
        }
        let next: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
        layer_inputs.push(std::mem::replace(&mut h, next));
        pre_activations.push(z);
    }
    Ok(ForwardTrace {
        layer_inputs,
        logits: h,
        pre_activations,
    })
}

/// Batched forward state: one row per example.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub layer_inputs: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
}

impl BatchTrace {
    pub fn logits(&self) -> &Matrix {
        self.pre_activations.last().expect("at least one layer")
    }
}

pub fn forward_batch(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    inputs: &Matrix,
) -> Result<BatchTrace> {
    mask.check(&model.arch)?;
    if inputs.cols() != model.arch.input_dim {
        return Err(Error::Shape(format!(
            "inputs have {} columns, model expects {}",
            inputs.cols(),
            model.arch.input_dim
        )));
    }
    let mut layer_inputs = Vec::with_capacity(model.num_layers());
    let mut pre_activations = Vec::with_capacity(model.num_layers());
    let mut h = inputs.clone();
    for (l, (a, spec)) in model.layers.iter().zip(&model.specs).enumerate() {
        let mut z = h.matmul_t(a)?;
        if let Some(active) = mask.layers.get(l) {
            if !active.iter().all(|&on| on) {
                let cols = z.cols();
                for row in z.data_mut().chunks_exact_mut(cols) {
                    for (zi, &on) in row.iter_mut().zip(active) {
                        if !on {
                            *zi = 0.0;
                        }
                    }
                }
            }
        }
        let next = if spec.activation == Activation::Identity {
            z.clone()
        } else {
            let mut n = z.clone();
            n.data_mut()
                .iter_mut()
                .for_each(|v| *v = spec.activation.apply(*v));
            n
        };
        layer_inputs.push(std::mem::replace(&mut h, next));
        pre_activations.push(z);
    }
    Ok(BatchTrace {
        layer_inputs,
        pre_activations,
    })
}

/// Logits for every row of `inputs`, evaluated in chunks.
pub fn logits_batch(model: &ModelSnapshot, mask: &ActiveRowMask, inputs: &Matrix) -> Result<Matrix> {
    const CHUNK: usize = 512;
    let d = inputs.cols();
    let mut out = Vec::with_capacity(inputs.rows() * model.arch.classes);
    for start in (0..inputs.rows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(inputs.rows());
        let chunk = Matrix::new(end - start, d, inputs.data()[start * d..end * d].to_vec())?;
        let trace = forward_batch(model, mask, &chunk)?;
        out.extend_from_slice(trace.logits().data());
    }
    Matrix::new(inputs.rows(), model.arch.classes, out)
}

/// Mean cross-entropy and its gradient with respect to every layer.
///
/// Rows of a gradient that belong to inactive rows are exactly zero.
pub fn loss_and_grads(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let k = model.arch.classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside {k} classes")));
    }
    let trace = forward_batch(model, mask, inputs)?;
    let logits = trace.logits();
    let batch = labels.len() as f64;

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(labels.len(), k);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - row[label];
        let d = delta.row_mut(i);
        for (c, &z) in row.iter().enumerate() {
            d[c] = (z - log_sum).exp() / batch;
        }
        d[label] -= 1.0 / batch;
    }
    loss /= batch;
    if !loss.is_finite() {
        let max_abs = logits.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(Error::Numeric(format!(
            "loss {loss} on batch of {} (max |logit| = {max_abs:e})",
            labels.len()
        )));
    }

    let mut grads = vec![Matrix::zeros(0, 0); model.num_layers()];
    for l in (0..model.num_layers()).rev() {
        let mut g = delta.t_matmul(&trace.layer_inputs[l])?;
        if let Some(active) = mask.layers.get(l) {
            for (r, &on) in active.iter().enumerate() {
                if !on {
                    g.row_mut(r).fill(0.0);
                }
            }
        }
        if l > 0 {
            let mut upstream = delta.matmul(&model.layers[l])?;
            let pre = &trace.pre_activations[l - 1];
            let act = model.specs[l - 1].activation;
            let active = &mask.layers[l - 1];
            let cols = upstream.cols();
            for (urow, zrow) in upstream
                .data_mut()
                .chunks_exact_mut(cols)
                .zip(pre.data().chunks_exact(cols))
            {
                for ((u, &z), &on) in urow.iter_mut().zip(zrow).zip(active) {
                    *u = if on { *u * act.derivative(z) } else { 0.0 };
                }
            }
            delta = upstream;
        }
        grads[l] = g;
    }
    Ok((loss, grads))
}

/// Index of the largest logit, ties going to the lowest class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    data: &crate::dataset::TaskDataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("accuracy on empty data".into()));
    }
    let logits = logits_batch(model, mask, &data.inputs)?;
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(logits.row(i)) == label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

// Snapshot file layout, all integers little-endian u32 unless noted:
//   b"WLSN", version, L, W, depth, input_dim, classes, task_id
//   per layer: rows, cols, activation (u8), rows*cols f64 LE
//   mask flag (u8); if set: alpha (f64), per maskable layer: len, ceil(len/8) bitmap bytes, LSB first
const SNAPSHOT_MAGIC: &[u8; 4] = b"WLSN";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn encode_snapshot(model: &ModelSnapshot, mask: Option<&ActiveRowMask>) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    put(&mut out, SNAPSHOT_VERSION as usize);
    put(&mut out, model.num_layers());
    put(&mut out, model.arch.width);
    put(&mut out, model.arch.depth);
    put(&mut out, model.arch.input_dim);
    put(&mut out, model.arch.classes);
    put(&mut out, model.task_id);
    for (m, s) in model.layers.iter().zip(&model.specs) {
        put(&mut out, m.rows());
        put(&mut out, m.cols());
        out.push(s.activation.code());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match mask {
        None => out.push(0),
        Some(mask) => {
            out.push(1);
            out.extend_from_slice(&mask.alpha.to_le_bytes());
            for layer in &mask.layers {
                put(&mut out, layer.len());
                out.extend(pack_bits(layer));
            }
        }
    }
    out
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Length(format!("snapshot ends at byte {}, needed {end}", self.bytes.len()))
        })?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(ModelSnapshot, Option<ActiveRowMask>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file".into()));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION as usize {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let num_layers = r.u32()?;
    let arch = Architecture {
        width: r.u32()?,
        depth: r.u32()?,
        input_dim: r.u32()?,
        classes: r.u32()?,
    };
    let task_id = r.u32()?;
    if num_layers != arch.num_layers() {
        return Err(Error::Format(format!(
            "header claims {num_layers} layers for depth {}",
            arch.depth
        )));
    }
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let rows = r.u32()?;
        let cols = r.u32()?;
        Activation::from_code(r.u8()?)?;
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Matrix::new(rows, cols, data)?);
    }
    let model = ModelSnapshot::from_layers(arch, layers, task_id)?;
    let mask = match r.u8()? {
        0 => None,
        1 => {
            let alpha = r.f64()?;
            let layers = (0..arch.depth)
                .map(|_| {
                    let len = r.u32()?;
                    Ok(unpack_bits(r.take(len.div_ceil(8))?, len))
                })
                .collect::<Result<Vec<_>>>()?;
            let mask = ActiveRowMask { alpha, layers };
            mask.check(&arch)?;
            Some(mask)
        }
        other => return Err(Error::Format(format!("bad mask flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after snapshot",
            bytes.len() - r.pos
        )));
    }
    Ok((model, mask))
}

pub fn save_snapshot(path: &Path, model: &ModelSnapshot, mask: Option<&ActiveRowMask>) -> Result<()> {
    std::fs::write(path, encode_snapshot(model, mask))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_snapshot(path: &Path) -> Result<(ModelSnapshot, Option<ActiveRowMask>)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_snapshot(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TaskDataset;

    fn arch(width: usize, depth: usize) -> Architecture {
        Architecture {
            input_dim: 2,
            width,
            depth,
            classes: 2,
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = init_model(Architecture { input_dim: 2, width: 4, depth: 1, classes: 2 }, 3).unwrap();
        assert_eq!(m.layers[0].shape(), (4, 2));
        assert_eq!(m.layers[1].shape(), (2, 4));
        let bound = 1.0 / 2f64.sqrt();
        assert!(m.layers.iter().all(|l| l.data().iter().all(|w| w.abs() <= bound)));
        assert_eq!(m, init_model(m.arch, 3).unwrap());
        assert_ne!(m, init_model(m.arch, 4).unwrap());
    }

    #[test]
    fn hand_computed_forward() {
        let model = ModelSnapshot::from_layers(
            Architecture { input_dim: 2, width: 2, depth: 1, classes: 1 },
            vec![
                Matrix::identity(2),
                Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
            ],
            0,
        )
        .unwrap();
        let trace = forward(&model, &ActiveRowMask::full(2, 1), &[2.0, -3.0]).unwrap();
        assert_eq!(trace.layer_inputs[1], vec![2.0, 0.0]);
        assert_eq!(trace.logits, vec![2.0]);
    }

    #[test]
    fn empty_mask_zeroes_logits() {
        let model = init_model(arch(5, 2), 1).unwrap();
        let trace = forward(&model, &ActiveRowMask::empty(5, 2), &[0.3, 0.9]).unwrap();
        assert!(trace.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_rows_are_zero_in_trace() {
        let model = init_model(arch(6, 2), 2).unwrap();
        let mut mask = ActiveRowMask::full(6, 2);
        mask.layers[0][1] = false;
        mask.layers[1][4] = false;
        let trace = forward(&model, &mask, &[0.5, 0.25]).unwrap();
        assert_eq!(trace.pre_activations[0][1].to_bits(), 0.0f64.to_bits());
        assert_eq!(trace.layer_inputs[1][1].to_bits(), 0.0f64.to_bits());
        assert_eq!(trace.pre_activations[1][4].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn shape_errors() {
        let model = init_model(arch(3, 1), 1).unwrap();
        assert!(matches!(
            forward(&model, &ActiveRowMask::full(3, 1), &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&model, &ActiveRowMask::full(4, 1), &[1.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_weights_give_log_k_loss() {
        let a = arch(3, 1);
        let model = ModelSnapshot::from_layers(
            a,
            vec![Matrix::zeros(3, 2), Matrix::zeros(2, 3)],
            0,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2], [0.7, 0.3]]).unwrap();
        let (loss, _) = loss_and_grads(&model, &ActiveRowMask::full(3, 1), &x, &[0, 1]).unwrap();
        assert_eq!(loss, 2f64.ln());
    }

    #[test]
    fn inactive_gradient_rows_are_zero() {
        let model = init_model(arch(4, 2), 5).unwrap();
        let mut mask = ActiveRowMask::full(4, 2);
        mask.layers[0][2] = false;
        mask.layers[1][0] = false;
        let x = Matrix::from_rows(&[[0.1, 0.9], [0.6, 0.4], [0.3, 0.3]]).unwrap();
        let (_, grads) = loss_and_grads(&model, &mask, &x, &[0, 1, 1]).unwrap();
        assert!(grads[0].row(2).iter().all(|v| v.to_bits() == 0));
        assert!(grads[1].row(0).iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn accuracy_tie_rule_and_counting() {
        let a = arch(2, 1);
        let zero = ModelSnapshot::from_layers(a, vec![Matrix::zeros(2, 2), Matrix::zeros(2, 2)], 0)
            .unwrap();
        let data = TaskDataset::new(
            0,
            0.0,
            Matrix::from_rows(&[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.4]]).unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(accuracy(&zero, &ActiveRowMask::full(2, 1), &data).unwrap(), 0.5);

        // Hidden unit 0 copies x0; class 1 fires when x0 is large.
        let model = ModelSnapshot::from_layers(
            a,
            vec![
                Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap(),
                Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap(),
            ],
            0,
        )
        .unwrap();
        // Logits are (0, x0): all four predict class 1, two are right.
        assert_eq!(accuracy(&model, &ActiveRowMask::full(2, 1), &data).unwrap(), 0.5);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let model = init_model(arch(9, 2), 11).unwrap();
        let mut mask = ActiveRowMask::full(9, 2);
        mask.alpha = 0.5;
        mask.layers[1][8] = false;
        let bytes = encode_snapshot(&model, Some(&mask));
        let (m2, k2) = decode_snapshot(&bytes).unwrap();
        assert_eq!(m2, model);
        assert_eq!(k2, Some(mask));
        assert_eq!(encode_snapshot(&m2, k2.as_ref()), bytes);
        assert!(decode_snapshot(&bytes[..bytes.len() - 1]).is_err());
        let (m3, k3) = decode_snapshot(&encode_snapshot(&model, None)).unwrap();
        assert_eq!((m3, k3), (model, None));
    }
}
