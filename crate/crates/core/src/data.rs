//! In-memory labelled datasets.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mnist,
    SyntheticBlobs,
}

/// Images as an `n × d` tensor with values in `[0, 1]`, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub source: Source,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
        source: Source,
    ) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                left: images.shape().to_vec(),
                right: alloc::vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                index: bad,
                len: classes,
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter(format!(
                "{split:?} images contain values outside [0, 1]"
            )));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// Rows `indices` as a new batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::matrix(indices.len(), d, data).expect("rows have width d")
    }

    /// Subset with the given rows, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
            source: self.source,
        }
    }

    /// Per-feature mean image.
    pub fn mean_image(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = alloc::vec![0.0; d];
        for i in 0..self.len() {
            mean.iter_mut()
                .zip(self.image(i))
                .for_each(|(m, v)| *m += v);
        }
        if !self.is_empty() {
            let n = self.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    }
}

/// Standard deviation of each blob, in pixel units.
pub const BLOB_SIGMA: f64 = 0.05;

/// Gaussian blobs around class centres `separation · BLOB_SIGMA` apart,
/// clamped to `[0, 1]`. Class `k` is centred at `0.5 ± s/√2 · e_(k mod dims)`
/// (sign flips for `k ≥ dims`), so at most `2 · dims` classes fit.
///
/// Returns `(train, test)` with `n` and `n / 4` samples; labels cycle
/// through the classes.
pub fn make_synthetic_blobs(
    classes: usize,
    dims: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if dims == 0 || classes > 2 * dims {
        return Err(Error::Parameter(format!(
            "{classes} classes do not fit in {dims} dimensions"
        )));
    }
    let shift = separation * BLOB_SIGMA / libm::sqrt(2.0);
    let centre = |k: usize| {
        let mut c = alloc::vec![0.5; dims];
        let sign = if k < dims { 1.0 } else { -1.0 };
        c[k % dims] += sign * shift;
        c
    };
    let centres: Vec<Vec<f64>> = (0..classes).map(centre).collect();
    let root = RngState::new(seed);
    let build = |count: usize, split: Split, rng: &mut RngState| -> Result<Dataset> {
        let mut data = Vec::with_capacity(count * dims);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let k = i % classes;
            labels.push(k);
            for &c in &centres[k] {
                data.push(rng.normal(c, BLOB_SIGMA).clamp(0.0, 1.0));
            }
        }
        Dataset::new(
            Tensor::matrix(count, dims, data)?,
            labels,
            classes,
            split,
            Source::SyntheticBlobs,
        )
    };
    let train = build(n, Split::Train, &mut root.fork("blobs-train", 0))?;
    let test = build(n / 4, Split::Test, &mut root.fork("blobs-test", 0))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_in_range() {
        let (a, at) = make_synthetic_blobs(3, 4, 40, 5.0, 9).unwrap();
        let (b, bt) = make_synthetic_blobs(3, 4, 40, 5.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
        assert_eq!((a.len(), at.len()), (40, 10));
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(&a.labels[..4], &[0, 1, 2, 0]);
    }

    #[test]
    fn blobs_reject_degenerate_requests() {
        assert!(make_synthetic_blobs(1, 4, 10, 5.0, 0).is_err());
        assert!(make_synthetic_blobs(9, 4, 10, 5.0, 0).is_err());
        let (train, _) = make_synthetic_blobs(2, 2, 0, 5.0, 0).unwrap();
        assert!(train.is_empty());
    }

    #[test]
    fn dataset_validates_pixels_and_labels() {
        let img = Tensor::matrix(1, 2, alloc::vec![0.5, 1.5]).unwrap();
        assert!(Dataset::new(img, alloc::vec![0], 2, Split::Train, Source::Mnist).is_err());
        let img = Tensor::matrix(1, 2, alloc::vec![0.5, 0.5]).unwrap();
        assert!(Dataset::new(img, alloc::vec![2], 2, Split::Train, Source::Mnist).is_err());
    }
}
