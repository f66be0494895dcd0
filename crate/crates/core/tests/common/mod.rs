//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widthlab::linalg::Matrix;
use widthlab::network::{loss_and_grads, ActiveRowMask, ModelSnapshot};

/// Largest singular value by one-sided Jacobi rotations on the columns.
pub fn jacobi_sigma_max(m: &Matrix) -> f64 {
    let (rows, cols) = m.shape();
    // Column-major copy so each column is contiguous.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|v| v * v).sum();
                let beta: f64 = a[q].iter().map(|v| v * v).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    a.iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Central finite-difference gradient of the mean loss with respect to every
/// weight of every layer.
pub fn finite_difference_grads(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    inputs: &Matrix,
    labels: &[usize],
    h: f64,
) -> Vec<Matrix> {
    let loss = |m: &ModelSnapshot| loss_and_grads(m, mask, inputs, labels).unwrap().0;
    let mut probe = model.clone();
    model
        .layers
        .iter()
        .enumerate()
        .map(|(l, a)| {
            Matrix::from_fn(a.rows(), a.cols(), |i, j| {
                let w = a.get(i, j);
                probe.layers[l].set(i, j, w + h);
                let up = loss(&probe);
                probe.layers[l].set(i, j, w - h);
                let down = loss(&probe);
                probe.layers[l].set(i, j, w);
                (up - down) / (2.0 * h)
            })
        })
        .collect()
}

/// Relative error with a floor on the scale, so near-zero gradients compare
/// absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Closed-form bound written out term by term, without sharing code with the
/// library evaluator.
pub struct HandInputs {
    pub task_gap: f64,
    pub lambda_bar: f64,
    pub chi: f64,
    pub norms: Vec<f64>,
    pub lips: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub width: f64,
}

pub fn hand_theorem1(x: &HandInputs) -> f64 {
    let layers = x.norms.len() as f64;
    let mut prod = 1.0;
    for k in 0..x.norms.len() {
        prod *= x.lips[k] * x.norms[k];
    }
    let alpha_term = x.alpha.powf(0.5 - x.beta);
    let width_term = 1.0 / x.width.powf(x.beta);
    x.task_gap * layers * 2f64.powf(layers) * x.lambda_bar * x.chi * prod * x.gamma * width_term * alpha_term
}

pub fn hand_noise(x: &HandInputs, mu: &[f64], c: &[f64], big_gamma: f64) -> f64 {
    let kappa: Vec<f64> = (0..mu.len()).map(|i| x.lips[i] * c[i] * mu[i]).collect();
    let s = x.task_gap * x.gamma * x.lambda_bar;
    let mut prod = 1.0;
    for i in 0..mu.len() {
        prod *= kappa[i] * (1.0 + s * mu[i]);
    }
    let eta = prod * kappa.iter().sum::<f64>();
    let alpha_term = x.alpha.powf(0.5 - x.beta);
    let width_term = 1.0 / x.width.powf(x.beta);
    big_gamma * x.task_gap * x.gamma * x.lambda_bar * width_term * alpha_term * eta
}

/// Binomial variance of the overlap of two independent Bernoulli(α) masks.
pub fn overlap_variance(alpha: f64, width: usize) -> f64 {
    let p = alpha * alpha;
    p * (1.0 - p) * width as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dataset directory: `$WIDTHLAB_DATA` or the vendored MNIST copy.
pub fn data_dir() -> PathBuf {
    std::env::var_os("WIDTHLAB_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}
