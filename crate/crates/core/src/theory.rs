//! Measured constants and numerical checks of the forgetting bounds.
//!
//! Everything here is read-only over trained snapshots: drift between
//! consecutive models and its power-law fit, mask-overlap statistics,
//! spectral-norm ratios, layer cushions and activation contractions, the
//! closed-form bound evaluators and a deterministic perturbation certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continual::{sample_mask, validate_alpha, ExperimentRecord};
use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, l2_norm, row_submatrix, spectral_norm, Matrix, RowIndexSet};
use crate::metrics::pearson;
use crate::network::{forward_batch, ActiveRowMask, ModelSnapshot};
use crate::seed;

/// Norms below this are treated as zero everywhere in this module.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Default number of reseeded masks for expectation checks.
pub const DEFAULT_RESEEDS: usize = 30;

const PROBE_CHUNK: usize = 512;

fn checked_norm(m: &Matrix, what: impl FnOnce() -> String) -> Result<f64> {
    let n = spectral_norm(m)?;
    if n < DEGENERATE_NORM {
        return Err(Error::Degenerate(format!("{} has spectral norm {n:e}", what())));
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftObservation {
    pub width: usize,
    pub alpha: f64,
    pub layer: usize,
    /// Active rows of the later model's mask at this layer.
    pub active_count: usize,
    /// Frobenius norm of the row-restricted weight change over the earlier
    /// model's spectral norm on the same rows.
    pub drift: f64,
    /// Same ratio with a spectral-norm numerator.
    pub drift_spectral: f64,
}

/// Relative drift of every maskable layer from snapshot `t` to `t + 1`,
/// restricted to the rows active for task `t + 1`.
pub fn measure_drift(record: &ExperimentRecord, t: usize) -> Result<Vec<DriftObservation>> {
    if t + 1 >= record.num_tasks() {
        return Err(Error::InvalidInput(format!(
            "drift from task {t} needs snapshot {}, record has {}",
            t + 1,
            record.num_tasks()
        )));
    }
    let before = record.snapshot(t)?;
    let after = record.snapshot(t + 1)?;
    let mask = &record.masks[t + 1];
    (0..mask.layers.len())
        .map(|l| {
            let rows = RowIndexSet::from_mask(&mask.layers[l]);
            let old = row_submatrix(&before.layers[l], &rows)?;
            let new = row_submatrix(&after.layers[l], &rows)?;
            let diff = new.sub(&old)?;
            let denom = checked_norm(&old, || format!("layer {l} of snapshot {t} on active rows"))?;
            Ok(DriftObservation {
                width: before.width(),
                alpha: mask.alpha,
                layer: l,
                active_count: rows.len(),
                drift: frobenius_norm(&diff)? / denom,
                drift_spectral: spectral_norm(&diff)? / denom,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub gamma: f64,
    pub beta: f64,
    /// Residual sum of squares in log space.
    pub residual: f64,
    pub points: usize,
    /// Pearson correlation of log(active count) and log(drift).
    pub r: f64,
}

impl DriftFit {
    pub fn predict(&self, active_count: f64) -> f64 {
        self.gamma * active_count.powf(-self.beta)
    }
}

/// Least squares fit of `log drift = log γ − β log count`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<DriftFit> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "power-law fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, d)) = points
        .iter()
        .find(|&&(n, d)| !(n > 0.0 && d > 0.0 && n.is_finite() && d.is_finite()))
    {
        return Err(Error::InvalidInput(format!(
            "point ({n}, {d}) is not positive; its logarithm is undefined"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate(
            "all points share one active count; need at least 2 distinct counts".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(DriftFit {
        gamma: intercept.exp(),
        beta: -slope,
        residual,
        points: points.len(),
        // A flat cloud has no defined correlation; report it as zero.
        r: pearson(&xs, &ys).unwrap_or(0.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionStats {
    pub alpha: f64,
    pub width: usize,
    pub trials: usize,
    pub empirical_mean: f64,
    /// `α²W`.
    pub expected: f64,
    /// Sample standard error of the empirical mean.
    pub stderr: f64,
    /// Standard error implied by the binomial law `α²(1−α²)W / trials`.
    pub binomial_stderr: f64,
}

/// Mean overlap of two independently sampled masks over `trials` pairs.
pub fn intersection_stats(alpha: f64, width: usize, trials: usize, seed: u64) -> Result<IntersectionStats> {
    validate_alpha(alpha)?;
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..trials as u64 {
        let a = sample_mask(alpha, width, 1, seed, 2 * k as usize)?;
        let b = sample_mask(alpha, width, 1, seed, 2 * k as usize + 1)?;
        let both = a.layers[0]
            .iter()
            .zip(&b.layers[0])
            .filter(|(x, y)| **x && **y)
            .count() as f64;
        sum += both;
        sum_sq += both * both;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let p = alpha * alpha;
    Ok(IntersectionStats {
        alpha,
        width,
        trials,
        empirical_mean: mean,
        expected: p * width as f64,
        stderr: (var / n).sqrt(),
        binomial_stderr: (p * (1.0 - p) * width as f64 / n).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub layer: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    pub entries: Vec<LambdaEntry>,
    pub lambda_bar: f64,
}

/// `‖A_j[S_i]‖₂ / ‖A_i[S_i]‖₂` for every layer, with `S_i` the rows active
/// for model `i` (all rows for the output layer).
fn lambda_between(models: &[(usize, &ModelSnapshot, &ActiveRowMask)]) -> Result<LambdaTable> {
    let mut entries = Vec::new();
    let layers = models[0].1.num_layers();
    for l in 0..layers {
        for &(i, mi, mask) in models {
            let rows = mi.active_rows(mask, l);
            let base = row_submatrix(&mi.layers[l], &rows)?;
            let denom = checked_norm(&base, || format!("layer {l} of model {i} on its rows"))?;
            for &(j, mj, _) in models {
                if i == j {
                    continue;
                }
                if mj.layers[l].shape() != mi.layers[l].shape() {
                    return Err(Error::Shape(format!(
                        "layer {l} differs in shape between models {i} and {j}"
                    )));
                }
                let num = spectral_norm(&row_submatrix(&mj.layers[l], &rows)?)?;
                entries.push(LambdaEntry {
                    layer: l,
                    i,
                    j,
                    value: num / denom,
                });
            }
        }
    }
    let lambda_bar = entries
        .iter()
        .map(|e| e.value)
        .reduce(f64::max)
        .unwrap_or(1.0);
    Ok(LambdaTable { entries, lambda_bar })
}

/// λ ratios over every ordered pair `i ≠ j` of snapshots in `[t, t_prime]`.
/// λ̄ is the largest measured ratio, or 1 when the range is a single task.
pub fn lambda_ratios(record: &ExperimentRecord, t: usize, t_prime: usize) -> Result<LambdaTable> {
    if t_prime < t || t_prime >= record.num_tasks() {
        return Err(Error::InvalidInput(format!(
            "task range [{t}, {t_prime}] is invalid for {} snapshots",
            record.num_tasks()
        )));
    }
    let snaps = (t..=t_prime)
        .map(|k| record.snapshot(k))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<_> = snaps
        .iter()
        .enumerate()
        .map(|(k, s)| (t + k, &**s, &record.masks[t + k]))
        .collect();
    lambda_between(&models)
}

/// Largest input ℓ₂ norm in the dataset.
pub fn measure_chi(task: &TaskDataset) -> f64 {
    (0..task.len())
        .map(|i| l2_norm(task.input(i)))
        .fold(0.0, f64::max)
}

/// Smallest `μ` with `‖A‖₂‖h‖ ≤ μ‖Ah‖` over the given layer inputs, skipping
/// inputs where `‖Ah‖` is degenerate.
pub fn cushion_for_inputs(a: &Matrix, inputs: &[Vec<f64>]) -> Result<f64> {
    let norm = spectral_norm(a)?;
    let mut mu: Option<f64> = None;
    for h in inputs {
        let out = l2_norm(&a.matvec(h)?);
        if out < DEGENERATE_NORM {
            continue;
        }
        let v = norm * l2_norm(h) / out;
        mu = Some(mu.map_or(v, |m| m.max(v)));
    }
    mu.ok_or_else(|| Error::Degenerate("every probe maps to a zero output".into()))
}

/// Smallest `c` with `‖x‖ ≤ c‖ReLU(x)‖` over the given pre-activations,
/// skipping those whose rectified norm is degenerate.
pub fn contraction_for_preactivations(pre: &[Vec<f64>]) -> Result<f64> {
    let mut c: Option<f64> = None;
    for z in pre {
        let rect = l2_norm(&z.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
        if rect < DEGENERATE_NORM {
            continue;
        }
        let v = l2_norm(z) / rect;
        c = Some(c.map_or(v, |m| m.max(v)));
    }
    c.ok_or_else(|| Error::Degenerate("every probe rectifies to zero".into()))
}

/// Per-example layer norms gathered in one pass over the task.
struct ProbeNorms {
    /// `inputs[l][n]`: ‖h_l‖ for example `n`.
    inputs: Vec<Vec<f64>>,
    /// `pre[l][n]`: ‖z_l‖, which equals ‖A_l[S_l] h_l‖ under the mask.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn probe_norms(model: &ModelSnapshot, mask: &ActiveRowMask, task: &TaskDataset) -> Result<ProbeNorms> {
    if task.is_empty() {
        return Err(Error::InvalidInput("probe task is empty".into()));
    }
    let layers = model.num_layers();
    let mut norms = ProbeNorms {
        inputs: vec![Vec::with_capacity(task.len()); layers],
        pre: vec![Vec::with_capacity(task.len()); layers],
        logits: Vec::with_capacity(task.len()),
    };
    let d = task.dim();
    for start in (0..task.len()).step_by(PROBE_CHUNK) {
        let end = (start + PROBE_CHUNK).min(task.len());
        let chunk = Matrix::new(end - start, d, task.inputs.data()[start * d..end * d].to_vec())?;
        let trace = forward_batch(model, mask, &chunk)?;
        for l in 0..layers {
            let h = &trace.layer_inputs[l];
            let z = &trace.pre_activations[l];
            for n in 0..h.rows() {
                norms.inputs[l].push(l2_norm(h.row(n)));
                norms.pre[l].push(l2_norm(z.row(n)));
            }
        }
        let out = trace.logits();
        norms.logits.extend((0..out.rows()).map(|n| l2_norm(out.row(n))));
    }
    Ok(norms)
}

fn max_ratio(num: &[f64], den: &[f64], layer: usize, what: &str) -> Result<f64> {
    num.iter()
        .zip(den)
        .filter(|(_, &d)| d >= DEGENERATE_NORM)
        .map(|(n, d)| n / d)
        .reduce(f64::max)
        .ok_or_else(|| Error::Degenerate(format!("{what} of layer {layer}: every probe is degenerate")))
}

/// Layer cushion of every layer of `model` under `mask`, over the task's inputs.
pub fn layer_cushion(model: &ModelSnapshot, mask: &ActiveRowMask, task: &TaskDataset) -> Result<Vec<f64>> {
    let norms = probe_norms(model, mask, task)?;
    cushion_from_norms(model, mask, &norms)
}

fn cushion_from_norms(model: &ModelSnapshot, mask: &ActiveRowMask, norms: &ProbeNorms) -> Result<Vec<f64>> {
    (0..model.num_layers())
        .map(|l| {
            let sub = row_submatrix(&model.layers[l], &model.active_rows(mask, l))?;
            let a = spectral_norm(&sub)?;
            Ok(a * max_ratio(&norms.inputs[l], &norms.pre[l], l, "layer cushion")?)
        })
        .collect()
}

/// Activation contraction per layer. Layer 0 sees the raw input, which is not
/// activated, so its contraction is 1 whenever some input is nonzero.
pub fn activation_contraction(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    task: &TaskDataset,
) -> Result<Vec<f64>> {
    let norms = probe_norms(model, mask, task)?;
    contraction_from_norms(model, &norms)
}

fn contraction_from_norms(model: &ModelSnapshot, norms: &ProbeNorms) -> Result<Vec<f64>> {
    (0..model.num_layers())
        .map(|l| {
            if l == 0 {
                max_ratio(&norms.inputs[0], &norms.inputs[0], 0, "activation contraction")
            } else {
                max_ratio(&norms.pre[l - 1], &norms.inputs[l], l, "activation contraction")
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStabilityConstants {
    pub mu: Vec<f64>,
    pub c: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub kappa: Vec<f64>,
    #[serde(rename = "Gamma_t")]
    pub gamma_t: f64,
}

impl NoiseStabilityConstants {
    pub fn from_parts(mu: Vec<f64>, c: Vec<f64>, lipschitz: Vec<f64>, gamma_t: f64) -> Result<Self> {
        if mu.is_empty() || mu.len() != c.len() || mu.len() != lipschitz.len() {
            return Err(Error::InvalidInput(format!(
                "constants cover {} / {} / {} layers",
                mu.len(),
                c.len(),
                lipschitz.len()
            )));
        }
        let kappa = mu
            .iter()
            .zip(&c)
            .zip(&lipschitz)
            .map(|((m, c), l)| l * c * m)
            .collect();
        Ok(Self {
            mu,
            c,
            lipschitz,
            kappa,
            gamma_t,
        })
    }

    /// `η = ∏ᵢ (κᵢ + κᵢ·s·μᵢ) · Σᵢ κᵢ` with `s = (t′−t)γλ̄`.
    pub fn eta(&self, s: f64) -> f64 {
        let prod: f64 = self
            .kappa
            .iter()
            .zip(&self.mu)
            .map(|(k, m)| k + k * s * m)
            .product();
        prod * self.kappa.iter().sum::<f64>()
    }
}

/// Measures μ, c and Γ_t for `model` on `task`.
pub fn noise_stability_constants(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    task: &TaskDataset,
) -> Result<NoiseStabilityConstants> {
    let norms = probe_norms(model, mask, task)?;
    NoiseStabilityConstants::from_parts(
        cushion_from_norms(model, mask, &norms)?,
        contraction_from_norms(model, &norms)?,
        model.specs.iter().map(|s| s.lipschitz).collect(),
        norms.logits.iter().copied().fold(0.0, f64::max),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub t: usize,
    pub t_prime: usize,
    pub lambda_bar: f64,
    pub chi: f64,
    /// Full-matrix spectral norm of each layer of the earlier model.
    pub spectral_norms: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub width: usize,
}

impl BoundInputs {
    pub fn layers(&self) -> usize {
        self.spectral_norms.len()
    }

    fn validate(&self) -> Result<()> {
        if self.t_prime < self.t {
            return Err(Error::InvalidInput(format!(
                "t' = {} precedes t = {}",
                self.t_prime, self.t
            )));
        }
        if self.width == 0 {
            return Err(Error::InvalidInput("width must be at least 1".into()));
        }
        validate_alpha(self.alpha).map_err(|_| {
            Error::InvalidInput(format!("alpha {} must lie in (0, 1]", self.alpha))
        })?;
        if self.spectral_norms.is_empty() || self.spectral_norms.len() != self.lipschitz.len() {
            return Err(Error::InvalidInput(format!(
                "{} spectral norms for {} Lipschitz constants",
                self.spectral_norms.len(),
                self.lipschitz.len()
            )));
        }
        let scalars = [self.lambda_bar, self.chi, self.gamma, self.beta];
        if scalars
            .iter()
            .chain(&self.spectral_norms)
            .chain(&self.lipschitz)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("bound inputs must be finite".into()));
        }
        Ok(())
    }

    /// `γ W^{−β} α^{(1−2β)/2}`, the per-task drift scale.
    fn drift_scale(&self) -> f64 {
        self.gamma
            * (self.width as f64).powf(-self.beta)
            * self.alpha.powf((1.0 - 2.0 * self.beta) / 2.0)
    }

    /// True when the α exponent is no longer positive, so sparsity stops
    /// shrinking the bound.
    pub fn alpha_exponent_nonpositive(&self) -> bool {
        self.beta >= 0.5
    }
}

/// `(t′−t) L 2^L λ̄ χ ∏ₗ Lₗ‖Aₗ‖₂ · γ W^{−β} α^{(1−2β)/2}`.
pub fn bound_theorem1(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let layers = inputs.layers();
    let gap = (inputs.t_prime - inputs.t) as f64;
    let norm_product: f64 = inputs
        .lipschitz
        .iter()
        .zip(&inputs.spectral_norms)
        .map(|(l, a)| l * a)
        .product();
    Ok(gap
        * layers as f64
        * 2f64.powi(layers as i32)
        * inputs.lambda_bar
        * inputs.chi
        * norm_product
        * inputs.drift_scale())
}

/// `Γ_t (t′−t) γ λ̄ W^{−β} α^{(1−2β)/2} η`.
pub fn bound_noise_stability(inputs: &BoundInputs, constants: &NoiseStabilityConstants) -> Result<f64> {
    inputs.validate()?;
    if constants.kappa.len() != inputs.layers() || constants.mu.len() != inputs.layers() {
        return Err(Error::InvalidInput(format!(
            "noise-stability constants cover {} layers, bound needs {}",
            constants.kappa.len(),
            inputs.layers()
        )));
    }
    let gap = (inputs.t_prime - inputs.t) as f64;
    let eta = constants.eta(gap * inputs.gamma * inputs.lambda_bar);
    Ok(constants.gamma_t * gap * inputs.lambda_bar * inputs.drift_scale() * eta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    pub max_gap: f64,
    pub mean_gap: f64,
    /// Right-hand side at the probe with the largest input norm.
    pub bound: f64,
    /// Smallest per-probe `bound − gap`.
    pub min_slack: f64,
    /// Bound dominates the gap at every probe point.
    pub holds: bool,
    /// `‖U_l‖₂ ≤ ‖A_l[S_l]‖₂` for every layer, which the induction relies on.
    pub premise_holds: bool,
    pub u_norms: Vec<f64>,
    pub a_norms: Vec<f64>,
}

/// Deterministic output-gap bound between `m_a` and `m_b` under `mask`:
/// `2^L ‖x‖ ∏ₗ Lₗ‖A_{a,l}[S_l]‖ · Σₗ ‖U_l‖/‖A_{a,l}[S_l]‖`, with `U_l` the
/// measured row-restricted weight difference, checked at every probe point.
pub fn perturbation_certificate(
    m_a: &ModelSnapshot,
    m_b: &ModelSnapshot,
    mask: &ActiveRowMask,
    probe: &TaskDataset,
) -> Result<CertificateEntry> {
    if !m_a.same_architecture(m_b) {
        return Err(Error::Shape("models have different architectures".into()));
    }
    if probe.is_empty() {
        return Err(Error::InvalidInput("probe set is empty".into()));
    }
    let layers = m_a.num_layers();
    let mut a_norms = Vec::with_capacity(layers);
    let mut u_norms = Vec::with_capacity(layers);
    for l in 0..layers {
        let rows = m_a.active_rows(mask, l);
        let a = row_submatrix(&m_a.layers[l], &rows)?;
        let b = row_submatrix(&m_b.layers[l], &rows)?;
        a_norms.push(checked_norm(&a, || format!("layer {l} on active rows"))?);
        u_norms.push(spectral_norm(&b.sub(&a)?)?);
    }
    let lip_product: f64 = m_a
        .specs
        .iter()
        .zip(&a_norms)
        .map(|(s, a)| s.lipschitz * a)
        .product();
    let relative: f64 = u_norms.iter().zip(&a_norms).map(|(u, a)| u / a).sum();
    let per_unit_norm = 2f64.powi(layers as i32) * lip_product * relative;

    let out_a = crate::network::logits_batch(m_a, mask, &probe.inputs)?;
    let out_b = crate::network::logits_batch(m_b, mask, &probe.inputs)?;
    let mut max_gap = 0.0f64;
    let mut sum_gap = 0.0;
    let mut min_slack = f64::INFINITY;
    let mut chi = 0.0f64;
    for n in 0..probe.len() {
        let gap = l2_norm(
            &out_a
                .row(n)
                .iter()
                .zip(out_b.row(n))
                .map(|(x, y)| x - y)
                .collect::<Vec<_>>(),
        );
        let x_norm = l2_norm(probe.input(n));
        chi = chi.max(x_norm);
        max_gap = max_gap.max(gap);
        sum_gap += gap;
        min_slack = min_slack.min(per_unit_norm * x_norm - gap);
    }
    Ok(CertificateEntry {
        max_gap,
        mean_gap: sum_gap / probe.len() as f64,
        bound: per_unit_norm * chi,
        min_slack,
        holds: min_slack >= 0.0,
        premise_holds: u_norms.iter().zip(&a_norms).all(|(u, a)| u <= a),
        u_norms,
        a_norms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Layer {
    pub layer: usize,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub t: usize,
    pub reseeds: usize,
    pub gamma: f64,
    pub beta: f64,
    pub layers: Vec<Lemma2Layer>,
    pub holds: bool,
}

/// Retrains from snapshot `t` under `reseeds` freshly drawn masks for task
/// `t + 1` and compares the mean spectral drift on task `t`'s rows with
/// `λ γ W^{−β} α^{(1−2β)/2}`, both averaged over the reseeds.
///
/// `trainer` maps (starting model, mask) to the trained model; reseeded runs
/// execute in parallel and are combined in seed order.
pub fn lemma2_check<F>(
    record: &ExperimentRecord,
    t: usize,
    fit: &DriftFit,
    reseeds: usize,
    trainer: F,
) -> Result<Lemma2Report>
where
    F: Fn(&ModelSnapshot, &ActiveRowMask) -> Result<ModelSnapshot> + Sync,
{
    if reseeds == 0 {
        return Err(Error::InvalidInput("need at least one reseeded mask".into()));
    }
    let base = record.snapshot(t)?.into_owned();
    let mask_t = &record.masks[t];
    let cfg = &record.config;
    let maskable = mask_t.layers.len();
    let scale = fit.gamma
        * (cfg.width as f64).powf(-fit.beta)
        * cfg.alpha.powf((1.0 - 2.0 * fit.beta) / 2.0);

    let mut denoms = Vec::with_capacity(maskable);
    let mut old_rows = Vec::with_capacity(maskable);
    for l in 0..maskable {
        let rows = RowIndexSet::from_mask(&mask_t.layers[l]);
        let a = row_submatrix(&base.layers[l], &rows)?;
        denoms.push(checked_norm(&a, || format!("layer {l} of snapshot {t} on active rows"))?);
        old_rows.push((rows, a));
    }

    let per_seed: Vec<Vec<(f64, f64)>> = (0..reseeds)
        .into_par_iter()
        .map(|s| {
            let seed = seed::derive(cfg.mask_seed(), &[0x1e33a2, s as u64]);
            let mask = sample_mask(cfg.alpha, cfg.width, cfg.depth, seed, t + 1)?;
            let next = trainer(&base, &mask)?;
            (0..maskable)
                .map(|l| {
                    let (rows, a) = &old_rows[l];
                    let b = row_submatrix(&next.layers[l], rows)?;
                    let lhs = spectral_norm(&b.sub(a)?)? / denoms[l];
                    let lambda = spectral_norm(&b)? / denoms[l];
                    Ok((lhs, lambda * scale))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = reseeds as f64;
    let layers: Vec<Lemma2Layer> = (0..maskable)
        .map(|l| {
            let mean_lhs = per_seed.iter().map(|v| v[l].0).sum::<f64>() / n;
            let mean_rhs = per_seed.iter().map(|v| v[l].1).sum::<f64>() / n;
            Lemma2Layer {
                layer: l,
                mean_lhs,
                mean_rhs,
                holds: mean_lhs <= mean_rhs,
            }
        })
        .collect();
    Ok(Lemma2Report {
        t,
        reseeds,
        gamma: fit.gamma,
        beta: fit.beta,
        holds: layers.iter().all(|l| l.holds),
        layers,
    })
}

/// Everything measured when comparing an earlier model with a later one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t: usize,
    pub t_prime: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub certificate: CertificateEntry,
    pub lambda_bar: f64,
    pub chi: f64,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: f64,
    pub width: usize,
    pub spectral_norms: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub mu: Vec<f64>,
    pub c: Vec<f64>,
    pub kappa: Vec<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "Gamma_t")]
    pub gamma_t: f64,
    pub theorem1_bound: Option<f64>,
    pub theorem1_holds: Option<bool>,
    pub noise_stability_bound: Option<f64>,
    pub noise_stability_holds: Option<bool>,
    /// Set when β ≥ 0.5, where the α exponent stops being positive.
    pub alpha_exponent_nonpositive: Option<bool>,
}

/// Full comparison of `m_a` (task `t`) against `m_b` (task `t′`) on `probe`
/// under `mask`. The closed-form bounds need a drift fit; without one only
/// the certificate and the measured constants are reported.
pub fn bound_report(
    m_a: &ModelSnapshot,
    m_b: &ModelSnapshot,
    mask: &ActiveRowMask,
    probe: &TaskDataset,
    fit: Option<&DriftFit>,
) -> Result<BoundReport> {
    let (t, t_prime) = (m_a.task_id, m_b.task_id);
    if t_prime < t {
        return Err(Error::InvalidInput(format!(
            "second snapshot (task {t_prime}) precedes the first (task {t})"
        )));
    }
    let certificate = perturbation_certificate(m_a, m_b, mask, probe)?;
    let lambda_bar = lambda_between(&[(t, m_a, mask), (t_prime, m_b, mask)])?.lambda_bar;
    let constants = noise_stability_constants(m_a, mask, probe)?;
    let spectral_norms = m_a
        .layers
        .iter()
        .map(spectral_norm)
        .collect::<Result<Vec<_>>>()?;
    let mut report = BoundReport {
        t,
        t_prime,
        max_gap: certificate.max_gap,
        mean_gap: certificate.mean_gap,
        lambda_bar,
        chi: measure_chi(probe),
        gamma: None,
        beta: None,
        alpha: mask.alpha,
        width: m_a.width(),
        spectral_norms,
        lipschitz: constants.lipschitz.clone(),
        mu: constants.mu.clone(),
        c: constants.c.clone(),
        kappa: constants.kappa.clone(),
        eta: None,
        gamma_t: constants.gamma_t,
        theorem1_bound: None,
        theorem1_holds: None,
        noise_stability_bound: None,
        noise_stability_holds: None,
        alpha_exponent_nonpositive: None,
        certificate,
    };
    if let Some(fit) = fit {
        let inputs = BoundInputs {
            t,
            t_prime,
            lambda_bar,
            chi: report.chi,
            spectral_norms: report.spectral_norms.clone(),
            lipschitz: report.lipschitz.clone(),
            gamma: fit.gamma,
            beta: fit.beta,
            alpha: mask.alpha,
            width: m_a.width(),
        };
        let b1 = bound_theorem1(&inputs)?;
        let b2 = bound_noise_stability(&inputs, &constants)?;
        report.gamma = Some(fit.gamma);
        report.beta = Some(fit.beta);
        report.eta = Some(constants.eta((t_prime - t) as f64 * fit.gamma * lambda_bar));
        report.theorem1_bound = Some(b1);
        report.theorem1_holds = Some(b1 >= report.max_gap);
        report.noise_stability_bound = Some(b2);
        report.noise_stability_holds = Some(b2 >= report.max_gap);
        report.alpha_exponent_nonpositive = Some(inputs.alpha_exponent_nonpositive());
    }
    Ok(report)
}

/// Random perturbation of every layer of `model`, scaled so each row-restricted
/// change has spectral norm `fraction` times that of the layer it perturbs.
pub fn perturb_within_premise(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    fraction: f64,
    seed: u64,
) -> Result<ModelSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = model.clone();
    for l in 0..model.num_layers() {
        let a = &model.layers[l];
        let mut u = Matrix::from_fn(a.rows(), a.cols(), |_, _| rng.gen_range(-1.0..1.0));
        let rows = model.active_rows(mask, l);
        let target = fraction * spectral_norm(&row_submatrix(a, &rows)?)?;
        let current = spectral_norm(&row_submatrix(&u, &rows)?)?;
        if current > 0.0 {
            u = u.scaled(target / current);
        }
        out.layers[l] = a.add(&u)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::{run_sequence, ProtocolConfig};
    use crate::dataset::{synthetic_tasks, SyntheticSpec};
    use crate::network::{init_model, Architecture};
    use crate::optim::OptimizerKind;

    fn task_from(rows: &[&[f64]]) -> TaskDataset {
        let m = Matrix::from_rows(rows).unwrap();
        let n = m.rows();
        TaskDataset::new(0, 0.0, m, vec![0; n], 1).unwrap()
    }

    #[test]
    fn fit_two_points_by_hand() {
        let f = fit_power_law(&[(10.0, 1.0), (100.0, 0.1)]).unwrap();
        assert!((f.beta - 1.0).abs() < 1e-12);
        assert!((f.gamma - 10.0).abs() < 1e-10);
        assert!(f.residual < 1e-20);
    }

    #[test]
    fn fit_flat_line_and_bad_points() {
        let f = fit_power_law(&[(32.0, 0.4), (64.0, 0.4), (128.0, 0.4)]).unwrap();
        assert_eq!(f.beta, 0.0);
        assert!(fit_power_law(&[(32.0, 0.0), (64.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(32.0, 1.0)]).is_err());
        assert!(matches!(
            fit_power_law(&[(32.0, 1.0), (32.0, 2.0)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn full_masks_always_overlap_completely() {
        let s = intersection_stats(1.0, 64, 50, 3).unwrap();
        assert_eq!(s.empirical_mean, 64.0);
        assert_eq!(s.expected, 64.0);
        assert_eq!(s.stderr, 0.0);
    }

    #[test]
    fn chi_by_hand() {
        assert_eq!(measure_chi(&task_from(&[&[0.3, 0.4], &[0.0, 0.1]])), 0.5);
        assert_eq!(measure_chi(&task_from(&[&[0.0, 0.0]])), 0.0);
    }

    #[test]
    fn cushion_examples() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((cushion_for_inputs(&a, &[vec![0.0, 1.0]]).unwrap() - 2.0).abs() < 1e-12);
        let scalar = Matrix::from_rows(&[[-3.0]]).unwrap();
        assert!((cushion_for_inputs(&scalar, &[vec![0.7]]).unwrap() - 1.0).abs() < 1e-12);
        let iso = Matrix::identity(3).scaled(2.5);
        let probes = vec![vec![1.0, -2.0, 0.5], vec![0.1, 0.0, 0.0]];
        assert!((cushion_for_inputs(&iso, &probes).unwrap() - 1.0).abs() < 1e-12);
        assert!(cushion_for_inputs(&a, &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn contraction_examples() {
        let c = contraction_for_preactivations(&[vec![1.0, -1.0]]).unwrap();
        assert!((c - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(contraction_for_preactivations(&[vec![1.0, 2.0]]).unwrap(), 1.0);
        assert!(contraction_for_preactivations(&[vec![-1.0, -2.0]]).is_err());
        let skipped = contraction_for_preactivations(&[vec![-1.0, -2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(skipped, 1.0);
    }

    #[test]
    fn theorem1_hand_value_and_zero_gap() {
        let mut inputs = BoundInputs {
            t: 0,
            t_prime: 1,
            lambda_bar: 1.0,
            chi: 1.0,
            spectral_norms: vec![2.0],
            lipschitz: vec![1.0],
            gamma: 1.0,
            beta: 0.5,
            alpha: 1.0,
            width: 100,
        };
        assert!((bound_theorem1(&inputs).unwrap() - 0.4).abs() < 1e-15);
        assert!(inputs.alpha_exponent_nonpositive());
        inputs.t_prime = 3;
        assert!((bound_theorem1(&inputs).unwrap() - 1.2).abs() < 1e-14);
        inputs.t_prime = 0;
        assert_eq!(bound_theorem1(&inputs).unwrap(), 0.0);
        inputs.alpha = 0.0;
        assert!(bound_theorem1(&inputs).is_err());
    }

    #[test]
    fn eta_examples() {
        let one = NoiseStabilityConstants::from_parts(vec![1.0], vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(one.eta(0.0), 1.0);
        let two = NoiseStabilityConstants::from_parts(vec![1.0; 2], vec![1.0; 2], vec![1.0; 2], 1.0).unwrap();
        assert_eq!(two.eta(1.0), 8.0);
    }

    #[test]
    fn noise_bound_zero_gap_and_layer_mismatch() {
        let k = NoiseStabilityConstants::from_parts(vec![1.5; 2], vec![1.2; 2], vec![1.0; 2], 3.0).unwrap();
        let inputs = BoundInputs {
            t: 2,
            t_prime: 2,
            lambda_bar: 1.1,
            chi: 4.0,
            spectral_norms: vec![2.0, 3.0],
            lipschitz: vec![1.0, 1.0],
            gamma: 0.3,
            beta: 0.2,
            alpha: 0.5,
            width: 64,
        };
        assert_eq!(bound_noise_stability(&inputs, &k).unwrap(), 0.0);
        let short = BoundInputs {
            spectral_norms: vec![2.0],
            lipschitz: vec![1.0],
            ..inputs
        };
        assert!(bound_noise_stability(&short, &k).is_err());
    }

    fn tiny_model(seed: u64) -> (ModelSnapshot, ActiveRowMask) {
        let arch = Architecture { input_dim: 3, width: 6, depth: 2, classes: 2 };
        (init_model(arch, seed).unwrap(), sample_mask(0.7, 6, 2, seed, 0).unwrap())
    }

    #[test]
    fn identical_models_certify_with_zero_gap() {
        let (m, mask) = tiny_model(1);
        let probe = synthetic_tasks(SyntheticSpec { tasks: 1, n: 16, d: 3, classes: 2 }, 1).unwrap();
        let c = perturbation_certificate(&m, &m, &mask, &probe[0]).unwrap();
        assert_eq!((c.bound, c.max_gap), (0.0, 0.0));
        assert!(c.holds && c.premise_holds);
    }

    #[test]
    fn single_linear_layer_certificate_is_twice_the_operator_bound() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap();
        let u = Matrix::from_rows(&[[0.1, 0.0], [0.0, -0.2]]).unwrap();
        // An identity hidden layer passes the nonnegative probe through, so
        // only the output layer differs.
        let arch = Architecture { input_dim: 2, width: 2, depth: 1, classes: 2 };
        let hidden = Matrix::identity(2);
        let ma = ModelSnapshot::from_layers(arch, vec![hidden.clone(), a.clone()], 0).unwrap();
        let mb = ModelSnapshot::from_layers(arch, vec![hidden, a.add(&u).unwrap()], 1).unwrap();
        let probe = task_from(&[&[0.6, 0.8]]);
        let c = perturbation_certificate(&ma, &mb, &ActiveRowMask::full(2, 1), &probe).unwrap();
        let x = [0.6, 0.8];
        let gap = l2_norm(&u.matvec(&x).unwrap());
        assert!((c.max_gap - gap).abs() < 1e-15);
        let expected = 4.0 * spectral_norm(&u).unwrap();
        assert!((c.bound - expected).abs() < 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn premise_respecting_perturbations_certify() {
        let probe = synthetic_tasks(SyntheticSpec { tasks: 1, n: 16, d: 3, classes: 2 }, 9).unwrap();
        for s in 0..40 {
            let (m, _) = tiny_model(s);
            let mask = ActiveRowMask::full(6, 2);
            let p = perturb_within_premise(&m, &mask, 0.9, s + 100).unwrap();
            let c = perturbation_certificate(&m, &p, &mask, &probe[0]).unwrap();
            assert!(c.premise_holds);
            assert!(c.holds, "trial {s}: slack {}", c.min_slack);
        }
    }

    #[test]
    fn drift_hand_example() {
        let arch = Architecture { input_dim: 2, width: 2, depth: 1, classes: 2 };
        let out = Matrix::identity(2);
        let a0 = ModelSnapshot::from_layers(arch, vec![Matrix::identity(2), out.clone()], 0).unwrap();
        let a1 = ModelSnapshot::from_layers(
            arch,
            vec![Matrix::from_rows(&[[1.0, 0.1], [0.0, 1.0]]).unwrap(), out],
            1,
        )
        .unwrap();
        let record = ExperimentRecord {
            config: ProtocolConfig::new(2, 1, 1.0, OptimizerKind::Sgd, 0),
            snapshots: vec![
                crate::continual::SnapshotSlot::InMemory(a0),
                crate::continual::SnapshotSlot::InMemory(a1),
            ],
            masks: vec![ActiveRowMask::full(2, 1); 2],
            heads: vec![],
            gaps: vec![],
            final_losses: vec![],
            stage_seconds: vec![],
        };
        let d = measure_drift(&record, 0).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].drift - 0.1).abs() < 1e-12);
        assert_eq!(d[0].active_count, 2);
        let lam = lambda_ratios(&record, 0, 0).unwrap();
        assert_eq!(lam.lambda_bar, 1.0);
        assert!(lambda_ratios(&record, 0, 1).unwrap().lambda_bar >= 1.0);
    }

    #[test]
    fn measured_constants_satisfy_their_definitions() {
        let tasks = synthetic_tasks(SyntheticSpec { tasks: 1, n: 50, d: 4, classes: 3 }, 5).unwrap();
        let arch = Architecture { input_dim: 4, width: 12, depth: 2, classes: 3 };
        let m = init_model(arch, 4).unwrap();
        let mask = ActiveRowMask::full(12, 2);
        let k = noise_stability_constants(&m, &mask, &tasks[0]).unwrap();
        assert_eq!(k.c[0], 1.0);
        assert!(k.c.iter().all(|&c| c >= 1.0));
        for n in 0..tasks[0].len() {
            let trace = crate::network::forward(&m, &mask, tasks[0].input(n)).unwrap();
            for l in 0..m.num_layers() {
                let h = l2_norm(&trace.layer_inputs[l]);
                let z = l2_norm(&trace.pre_activations[l]);
                if z >= DEGENERATE_NORM {
                    let a = spectral_norm(&m.layers[l]).unwrap();
                    assert!(a * h <= k.mu[l] * z * (1.0 + 1e-12));
                }
                if l > 0 && h >= DEGENERATE_NORM {
                    let prev = l2_norm(&trace.pre_activations[l - 1]);
                    assert!(prev <= k.c[l] * h * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn lemma2_identity_trainer_has_zero_lhs() {
        let tasks = synthetic_tasks(SyntheticSpec { tasks: 2, n: 30, d: 4, classes: 2 }, 6).unwrap();
        let cfg = ProtocolConfig {
            epochs: 1,
            ..ProtocolConfig::new(8, 1, 0.5, OptimizerKind::Sgd, 2)
        };
        let record = run_sequence(&tasks, &cfg).unwrap();
        let fit = DriftFit { gamma: 0.5, beta: 0.2, residual: 0.0, points: 2, r: -1.0 };
        let report = lemma2_check(&record, 0, &fit, 30, |m, _| Ok(m.clone())).unwrap();
        assert_eq!(report.reseeds, 30);
        assert!(report.layers.iter().all(|l| l.mean_lhs == 0.0));
        assert!(report.holds);
    }

    #[test]
    fn report_for_identical_snapshots_is_zero() {
        let tasks = synthetic_tasks(SyntheticSpec { tasks: 1, n: 20, d: 4, classes: 2 }, 8).unwrap();
        let arch = Architecture { input_dim: 4, width: 8, depth: 1, classes: 2 };
        let m = init_model(arch, 2).unwrap();
        let fit = DriftFit { gamma: 0.1, beta: 0.3, residual: 0.0, points: 4, r: -0.9 };
        let r = bound_report(&m, &m, &ActiveRowMask::full(8, 1), &tasks[0], Some(&fit)).unwrap();
        assert_eq!(r.max_gap, 0.0);
        assert_eq!(r.theorem1_bound, Some(0.0));
        assert_eq!(r.noise_stability_bound, Some(0.0));
        assert_eq!(r.lambda_bar, 1.0);
        assert!(r.certificate.holds);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"Gamma_t\"") && json.contains("\"lambda_bar\""));
    }
}
