//! Dense row-major `f64` matrices and the two matrix norms the bound
//! computations rely on.
//!
//! Products go through `matrixmultiply::dgemm`, which is single threaded and
//! accumulates in a fixed order, so every product is bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed used by [`spectral_norm`] for the power-iteration start vector.
pub const POWER_ITERATION_SEED: u64 = 0x5eed_2f0b_11e5;
pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidInput(format!(
                "non-finite entry {} at ({}, {})",
                self.data[i],
                i / self.cols.max(1),
                i % self.cols.max(1)
            ))),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {:?} by transpose of {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(self, false, other, true, &mut out);
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply transpose of {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(self, true, other, false, &mut out);
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {:?}",
                x.len(),
                self.shape()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector of length {} against transpose of {:?}",
                y.len(),
                self.shape()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        Ok(out)
    }
}

/// `out = op(a) · op(b)` where `op` optionally transposes; `out` is overwritten.
fn gemm(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool, out: &mut Matrix) {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if b_t { b.rows } else { b.cols };
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.fill(0.0);
        return;
    }
    let (rsa, csa) = if a_t { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if b_t { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: strides describe the row-major buffers above, whose lengths were
    // checked against the shapes by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sorted, duplicate-free set of row indices.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowIndexSet {
    indices: Vec<usize>,
}

impl RowIndexSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn all(rows: usize) -> Self {
        Self {
            indices: (0..rows).collect(),
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            indices: mask
                .iter()
                .enumerate()
                .filter_map(|(i, &on)| on.then_some(i))
                .collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn intersection(&self, other: &RowIndexSet) -> RowIndexSet {
        RowIndexSet {
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| other.contains(i))
                .collect(),
        }
    }
}

/// Rows of `m` selected by `s`, in ascending index order.
pub fn row_submatrix(m: &Matrix, s: &RowIndexSet) -> Result<Matrix> {
    let mut data = Vec::with_capacity(s.len() * m.cols());
    for &i in s.indices() {
        if i >= m.rows() {
            return Err(Error::Index {
                index: i,
                len: m.rows(),
            });
        }
        data.extend_from_slice(m.row(i));
    }
    Matrix::new(s.len(), m.cols(), data)
}

pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    m.ensure_finite()?;
    Ok(l2_norm(m.data()))
}

/// Largest singular value via power iteration on `mᵀm`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    spectral_norm_seeded(m, POWER_ITERATION_SEED)
}

/// [`spectral_norm`] with an explicit start-vector seed.
///
/// The unit iterate `v` is refined until it moves by less than
/// [`POWER_ITERATION_TOL`] in one step or [`POWER_ITERATION_MAX_ITERS`]
/// iterations have run; the result is `‖m v‖₂`. The singular-value estimate
/// converges quadratically faster than `v`, so its error is far below the
/// tolerance when the loop stops.
pub fn spectral_norm_seeded(m: &Matrix, seed: u64) -> Result<f64> {
    m.ensure_finite()?;
    if m.data().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..m.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if !normalize(&mut v) {
        v[0] = 1.0;
    }

    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATION_MAX_ITERS {
        let mv = m.matvec(&v)?;
        let next_sigma = l2_norm(&mv);
        let mut w = m.t_matvec(&mv)?;
        if !normalize(&mut w) {
            // Start vector fell into the null space; any unit vector outside
            // it works, so take the heaviest column direction.
            let col = (0..m.cols())
                .max_by(|&a, &b| {
                    let na: f64 = (0..m.rows()).map(|r| m.get(r, a).powi(2)).sum();
                    let nb: f64 = (0..m.rows()).map(|r| m.get(r, b).powi(2)).sum();
                    na.total_cmp(&nb)
                })
                .unwrap_or(0);
            v.fill(0.0);
            v[col] = 1.0;
            continue;
        }
        let step: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let converged = step <= POWER_ITERATION_TOL;
        sigma = next_sigma;
        v = w;
        if converged {
            break;
        }
    }
    // Rayleigh estimate with the last direction.
    let final_sigma = l2_norm(&m.matvec(&v)?);
    Ok(final_sigma.max(sigma))
}

fn normalize(v: &mut [f64]) -> bool {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}
