use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labelled train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train_x.cols()
    }

    /// Shuffles the samples and keeps the first 80% for training.
    fn split(points: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.shuffle(rng);
        let n_train = points.len() * 4 / 5;
        if n_train == 0 || n_train == points.len() {
            return Err(Error::Config(format!("{} samples are too few for a train/test split", points.len())));
        }
        let take = |ids: &[usize]| -> Result<(Tensor, Vec<usize>)> {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&i| points[i].clone()).collect();
            Ok((Tensor::from_rows(&rows)?, ids.iter().map(|&i| labels[i]).collect()))
        };
        let (train_x, train_y) = take(&idx[..n_train])?;
        let (test_x, test_y) = take(&idx[n_train..])?;
        Ok(Self {
            train_x,
            train_y,
            test_x,
            test_y,
            classes,
        })
    }
}

fn check_classes(classes: usize, samples: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if samples < classes {
        return Err(Error::Config(format!("{samples} samples cannot cover {classes} classes")));
    }
    Ok(())
}

/// Interleaved 2-D spirals, one arm per class, with Gaussian angle noise.
pub fn generate_spiral(classes: usize, samples: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_classes(classes, samples)?;
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for c in 0..classes {
        let n = samples / classes + usize::from(c < samples % classes);
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64;
            let t = 2.0 * PI * c as f64 / classes as f64 + 1.75 * PI * r + normal.sample(&mut rng);
            points.push(vec![r * t.cos(), r * t.sin()]);
            labels.push(c);
        }
    }
    Dataset::split(points, labels, classes, &mut rng)
}

/// Isotropic Gaussian clusters centred on a circle of radius 3.
pub fn generate_blobs(classes: usize, samples: usize, spread: f64, seed: u64) -> Result<Dataset> {
    check_classes(classes, samples)?;
    let normal = Normal::new(0.0, spread.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        let a = 2.0 * PI * c as f64 / classes as f64;
        points.push(vec![3.0 * a.cos() + normal.sample(&mut rng), 3.0 * a.sin() + normal.sample(&mut rng)]);
        labels.push(c);
    }
    Dataset::split(points, labels, classes, &mut rng)
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(self.err(format!(
                "truncated at byte offset {}: {what} needs {n} bytes, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: u32, dims: usize) -> Result<Vec<usize>> {
        let m = self.u32("magic number")?;
        if m != magic {
            return Err(self.err(format!("bad magic 0x{m:08x}, expected 0x{magic:08x}")));
        }
        (0..dims).map(|d| self.u32(&format!("dimension {d}")).map(|v| v as usize)).collect()
    }
}

/// Reads an IDX image file (`0x803`) and label file (`0x801`); pixels are
/// scaled to `[0, 1]` and each image flattened to one row.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Tensor, Vec<usize>)> {
    let img_bytes = fs::read(images)?;
    let mut r = IdxReader { path: images, bytes: &img_bytes, pos: 0 };
    let dims = r.header(IMAGE_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if n == 0 || rows * cols == 0 {
        return Err(r.err(format!("empty image set {n}×{rows}×{cols}")));
    }
    let pixels = r.take(n * rows * cols, "pixel data")?;
    let x = Tensor::new(vec![n, rows * cols], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;

    let lbl_bytes = fs::read(labels)?;
    let mut r = IdxReader { path: labels, bytes: &lbl_bytes, pos: 0 };
    let count = r.header(LABEL_MAGIC, 1)?[0];
    if count != n {
        return Err(r.err(format!("label count {count} does not match image count {n}")));
    }
    let y = r.take(count, "label data")?.iter().map(|&v| v as usize).collect();
    Ok((x, y))
}

/// Builds a dataset from IDX files; without test files the training set is
/// split 80/20.
pub fn idx_dataset(images: &Path, labels: &Path, test: Option<(&Path, &Path)>, seed: u64) -> Result<Dataset> {
    let (x, y) = load_idx(images, labels)?;
    let mut classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    match test {
        Some((ti, tl)) => {
            let (test_x, test_y) = load_idx(ti, tl)?;
            if test_x.cols() != x.cols() {
                return Err(Error::Shape(format!("test images have {} pixels, training {}", test_x.cols(), x.cols())));
            }
            classes = classes.max(test_y.iter().max().map_or(0, |m| m + 1));
            Ok(Dataset {
                train_x: x,
                train_y: y,
                test_x,
                test_y,
                classes,
            })
        }
        None => {
            let points = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Dataset::split(points, y, classes, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_split_sizes_and_determinism() {
        let d = generate_spiral(3, 3000, 0.1, 4).unwrap();
        assert_eq!((d.train_y.len(), d.test_y.len()), (2400, 600));
        assert_eq!(d, generate_spiral(3, 3000, 0.1, 4).unwrap());
        assert_ne!(d, generate_spiral(3, 3000, 0.1, 5).unwrap());
        assert!(generate_spiral(1, 10, 0.0, 0).is_err());
    }

    #[test]
    fn blobs_cover_all_classes() {
        let d = generate_blobs(4, 400, 0.3, 1).unwrap();
        let mut seen = [false; 4];
        for &y in d.train_y.iter().chain(&d.test_y) {
            seen[y] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
