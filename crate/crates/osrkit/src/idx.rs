//! IDX files as distributed with MNIST.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D `u8` image
//! arrays, `0x00000801` for 1-D `u8` label arrays), one big-endian `u32`
//! per dimension, then the raw bytes. Pixels are scaled by `1/255`.

use std::path::{Path, PathBuf};

use osrkit_core::data::{Dataset, Source, Split};
use osrkit_core::Tensor;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "OSRKIT_DATA_DIR";

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.err("truncated header"))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic {found:#010x}, expected {expected:#010x}"
            )));
        }
        Ok(())
    }

    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.err(format!(
                "truncated body: need {len} bytes, have {available}"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(out)
    }
}

/// Parses an image file; returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let body = r.body(n * rows * cols)?;
    Ok((
        n,
        rows,
        cols,
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    ))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    Ok(r.body(n)?.iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn load_split(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset> {
    let ipath = dir.join(images);
    let lpath = dir.join(labels);
    let (n, rows, cols, pixels) = parse_images(&ipath, &read(&ipath)?)?;
    let labels = parse_labels(&lpath, &read(&lpath)?)?;
    if labels.len() != n {
        return Err(Error::Parse {
            path: lpath,
            offset: 4,
            message: format!("{} labels for {n} images", labels.len()),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset::new(
        Tensor::matrix(n, rows * cols, pixels)?,
        labels,
        classes,
        split,
        Source::Mnist,
    )?)
}

/// Loads `(train, test)` from a directory holding the four standard files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((
        load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, Split::Train)?,
        load_split(dir, TEST_IMAGES, TEST_LABELS, Split::Test)?,
    ))
}

/// `$OSRKIT_DATA_DIR/mnist` if the variable is set, else `data/mnist`
/// relative to the working directory.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(|root| PathBuf::from(root).join("mnist"))
        .unwrap_or_else(|| PathBuf::from("data").join("mnist"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut v = IMAGES_MAGIC.to_be_bytes().to_vec();
        for x in [n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn images_parse_and_scale() {
        let bytes = image_file(1, 1, 2, &[255, 0]);
        let (n, r, c, px) = parse_images(Path::new("img"), &bytes).unwrap();
        assert_eq!((n, r, c), (1, 1, 2));
        assert_eq!(px, vec![1.0, 0.0]);
    }

    #[test]
    fn label_magic_in_image_slot_rejected() {
        let mut bytes = image_file(1, 1, 1, &[0]);
        bytes[..4].copy_from_slice(&LABELS_MAGIC.to_be_bytes());
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        match parse_images(Path::new("img"), &bytes) {
            Err(Error::Parse {
                offset, message, ..
            }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_files_report_offset() {
        let bytes = image_file(2, 2, 2, &[1, 2, 3]);
        match parse_images(Path::new("img"), &bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
        match parse_labels(Path::new("lbl"), &[0, 0, 8]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn labels_parse() {
        let mut bytes = LABELS_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[5, 0, 4]);
        assert_eq!(
            parse_labels(Path::new("lbl"), &bytes).unwrap(),
            vec![5, 0, 4]
        );
    }
}
