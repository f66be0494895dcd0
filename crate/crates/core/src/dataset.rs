//! Image corpora in IDX format, rotated task sequences and synthetic fixtures.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// The five rotations of the standard rotated-image benchmark, in degrees.
pub const DEFAULT_ANGLES: [f64; 5] = [0.0, 22.5, 45.0, 67.5, 90.0];

/// Raw images and labels exactly as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCorpus {
    pub height: usize,
    pub width: usize,
    /// `count × height × width` bytes, row-major per image.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }
}

/// One supervised task: inputs in `[0,1]`, labels below `classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub rotation_deg: f64,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TaskDataset {
    pub fn new(
        task_id: usize,
        rotation_deg: f64,
        inputs: Matrix,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("task has no examples".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        if let Some(&bad) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("input value {bad} outside [0,1]")));
        }
        Ok(Self {
            task_id,
            rotation_deg,
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// First `n` examples (or all of them).
    pub fn head(&self, n: usize) -> TaskDataset {
        let n = n.min(self.len());
        TaskDataset {
            task_id: self.task_id,
            rotation_deg: self.rotation_deg,
            inputs: Matrix::new(n, self.dim(), self.inputs.data()[..n * self.dim()].to_vec())
                .expect("prefix of a valid matrix"),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Splits into the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(TaskDataset, TaskDataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot split {} examples at {n}",
                self.len()
            )));
        }
        let d = self.dim();
        let (a, b) = self.inputs.data().split_at(n * d);
        let part = |data: &[f64], labels: &[usize]| {
            TaskDataset::new(
                self.task_id,
                self.rotation_deg,
                Matrix::new(labels.len(), d, data.to_vec())?,
                labels.to_vec(),
                self.classes,
            )
        };
        Ok((part(a, &self.labels[..n])?, part(b, &self.labels[n..])?))
    }

    /// Concatenates tasks with identical dimensionality. The result keeps the
    /// first task's id and reports rotation 0.
    pub fn concat(tasks: &[TaskDataset]) -> Result<TaskDataset> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::InvalidInput("no tasks to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for t in tasks {
            if t.dim() != first.dim() || t.classes != first.classes {
                return Err(Error::Config(format!(
                    "task {} has shape (d={}, K={}), expected (d={}, K={})",
                    t.task_id,
                    t.dim(),
                    t.classes,
                    first.dim(),
                    first.classes
                )));
            }
            data.extend_from_slice(t.inputs.data());
            labels.extend_from_slice(&t.labels);
        }
        TaskDataset::new(
            first.task_id,
            0.0,
            Matrix::new(labels.len(), first.dim(), data)?,
            labels,
            first.classes,
        )
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{what} header ends at byte {}", bytes.len())))
}

/// Parses an IDX image stream (3-d unsigned bytes) and its IDX label stream.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<RawCorpus> {
    let magic = read_u32(image_bytes, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(image_bytes, 4, "image")? as usize;
    let height = read_u32(image_bytes, 8, "image")? as usize;
    let width = read_u32(image_bytes, 12, "image")? as usize;
    let payload = &image_bytes[16..];
    let expected = count * height * width;
    if payload.len() != expected {
        return Err(Error::Length(format!(
            "image payload has {} bytes, header promises {count}x{height}x{width} = {expected}",
            payload.len()
        )));
    }

    let magic = read_u32(label_bytes, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32(label_bytes, 4, "label")? as usize;
    let labels = &label_bytes[8..];
    if labels.len() != label_count {
        return Err(Error::Length(format!(
            "label payload has {} bytes, header promises {label_count}",
            labels.len()
        )));
    }
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }

    Ok(RawCorpus {
        height,
        width,
        images: payload.to_vec(),
        labels: labels.to_vec(),
    })
}

/// Serializes a corpus back to the two IDX streams.
pub fn encode_idx(corpus: &RawCorpus) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + corpus.images.len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for dim in [corpus.len(), corpus.height, corpus.width] {
        images.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    images.extend_from_slice(&corpus.images);

    let mut labels = Vec::with_capacity(8 + corpus.labels.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(corpus.len() as u32).to_be_bytes());
    labels.extend_from_slice(&corpus.labels);
    (images, labels)
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("inflating {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<RawCorpus> {
    parse_idx(&read_maybe_gz(images)?, &read_maybe_gz(labels)?)
}

/// Locates `{split}-images-idx3-ubyte[.gz]` and `{split}-labels-idx1-ubyte[.gz]`
/// inside `dir` (`split` is `train` or `t10k` for the MNIST family).
pub fn find_idx_pair(dir: &Path, split: &str) -> Result<(PathBuf, PathBuf)> {
    let find = |kind: &str| -> Result<PathBuf> {
        let stems = [
            format!("{split}-{kind}-ubyte"),
            format!("{split}-{kind}.ubyte"),
        ];
        for stem in &stems {
            for ext in ["", ".gz"] {
                let p = dir.join(format!("{stem}{ext}"));
                if p.is_file() {
                    return Ok(p);
                }
            }
        }
        Err(Error::io(
            format!("looking for {} in {}", stems[0], dir.display()),
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ))
    };
    Ok((find("images-idx3")?, find("labels-idx1")?))
}

pub fn load_split(dir: &Path, split: &str) -> Result<RawCorpus> {
    let (images, labels) = find_idx_pair(dir, split)?;
    load_idx(&images, &labels)
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(angle_deg: f64) -> (f64, f64) {
    let reduced = angle_deg.rem_euclid(360.0);
    if reduced % 90.0 == 0.0 {
        match (reduced / 90.0) as u32 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        reduced.to_radians().sin_cos()
    }
}

/// Rotates a `height × width` image counterclockwise (as displayed, rows
/// growing downward) by `angle_deg` about `((width-1)/2, (height-1)/2)`.
///
/// Each output pixel is pulled back through the inverse rotation and
/// bilinearly interpolated; neighbours outside the image count as 0.
/// Output values are clamped to `[0,1]`.
pub fn rotate_image(pixels: &[f64], height: usize, width: usize, angle_deg: f64) -> Vec<f64> {
    assert_eq!(pixels.len(), height * width, "image buffer does not match its shape");
    assert!(angle_deg.is_finite(), "rotation angle must be finite");
    let (sin, cos) = sin_cos_deg(angle_deg);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            0.0
        } else {
            pixels[r as usize * width + c as usize]
        }
    };

    let mut out = Vec::with_capacity(pixels.len());
    for r in 0..height {
        for c in 0..width {
            // Destination offset with y pointing up.
            let x = c as f64 - cx;
            let y = cy - r as f64;
            // Inverse (clockwise) rotation back into the source.
            let sx = x * cos + y * sin;
            let sy = -x * sin + y * cos;
            let src_c = cx + sx;
            let src_r = cy - sy;

            let r0 = src_r.floor();
            let c0 = src_c.floor();
            let fr = src_r - r0;
            let fc = src_c - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let mut v = (1.0 - fr) * (1.0 - fc) * at(r0, c0);
            if fc != 0.0 {
                v += (1.0 - fr) * fc * at(r0, c0 + 1);
            }
            if fr != 0.0 {
                v += fr * (1.0 - fc) * at(r0 + 1, c0);
                if fc != 0.0 {
                    v += fr * fc * at(r0 + 1, c0 + 1);
                }
            }
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// One task per angle over a shared seeded subsample of `corpus`.
///
/// Pixels are scaled by `1/255` before rotation. `subsample = None` keeps the
/// whole corpus in its stored order.
pub fn build_task_sequence(
    corpus: &RawCorpus,
    angles: &[f64],
    subsample: Option<usize>,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    if angles.is_empty() {
        return Err(Error::Config("no rotation angles given".into()));
    }
    if let Some(&a) = angles.iter().find(|a| !a.is_finite()) {
        return Err(Error::Config(format!("rotation angle {a} is not finite")));
    }
    let indices: Vec<usize> = match subsample {
        None => (0..corpus.len()).collect(),
        Some(k) if k > corpus.len() => {
            return Err(Error::Config(format!(
                "subsample of {k} exceeds corpus of {}",
                corpus.len()
            )))
        }
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, corpus.len(), k).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    let classes = corpus.labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let (h, w) = (corpus.height, corpus.width);
    let labels: Vec<usize> = indices.iter().map(|&i| corpus.labels[i] as usize).collect();
    let base: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| corpus.image(i).iter().map(|&b| b as f64 / 255.0).collect())
        .collect();

    angles
        .par_iter()
        .enumerate()
        .map(|(task_id, &angle)| {
            let mut data = Vec::with_capacity(base.len() * h * w);
            for img in &base {
                if angle == 0.0 {
                    data.extend_from_slice(img);
                } else {
                    data.extend(rotate_image(img, h, w, angle));
                }
            }
            TaskDataset::new(
                task_id,
                angle,
                Matrix::new(base.len(), h * w, data)?,
                labels.clone(),
                classes,
            )
        })
        .collect()
}

/// Shape of a synthetic task family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
}

/// Standard deviation of each synthetic cluster around its centre.
pub const SYNTHETIC_SPREAD: f64 = 0.05;

/// Seeded Gaussian class clusters, fresh centres per task, labels balanced
/// to within one example.
pub fn synthetic_tasks(spec: SyntheticSpec, seed: u64) -> Result<Vec<TaskDataset>> {
    let SyntheticSpec { tasks, n, d, classes } = spec;
    if tasks == 0 || n == 0 || d == 0 || classes == 0 {
        return Err(Error::Config(format!("all synthetic counts must be positive: {spec:?}")));
    }
    if classes > n {
        return Err(Error::Config(format!("{classes} classes cannot fit in {n} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTHETIC_SPREAD).expect("positive spread");
    (0..tasks)
        .map(|task_id| {
            let centres: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..d).map(|_| rng.gen_range(0.15..0.85)).collect())
                .collect();
            let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            labels.shuffle(&mut rng);
            let mut data = Vec::with_capacity(n * d);
            for &label in &labels {
                for &centre in &centres[label] {
                    data.push((centre + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            TaskDataset::new(task_id, 0.0, Matrix::new(n, d, data)?, labels, classes)
        })
        .collect()
}
