//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 3072 pixel bytes (R, G, B planes of 32×32, row-major).

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + PIXELS;
pub const CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Parses up to `limit` records from one batch file's bytes. Pixels are
/// scaled to `[0, 1]`.
pub fn parse_batch(bytes: &[u8], limit: Option<usize>, split: Split) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::CorruptBatch(format!(
            "{} bytes is not a multiple of the {RECORD_LEN}-byte record",
            bytes.len()
        )));
    }
    let n = (bytes.len() / RECORD_LEN).min(limit.unwrap_or(usize::MAX));
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for record in bytes.chunks_exact(RECORD_LEN).take(n) {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(Error::LabelOutOfRange { label, classes: CLASSES });
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Dataset::new(Tensor::from_vec(&[n, 3, SIDE, SIDE], pixels)?, labels, CLASSES, split)
}

/// Serializes raw records; the inverse of [`parse_batch`] for byte pixels.
pub fn encode_batch(labels: &[u8], pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != labels.len() * PIXELS {
        return Err(Error::shape(
            "cifar10 encode",
            format!("{} pixel bytes for {} records", pixels.len(), labels.len()),
        ));
    }
    let mut out = Vec::with_capacity(labels.len() * RECORD_LEN);
    for (label, px) in labels.iter().zip(pixels.chunks_exact(PIXELS)) {
        out.push(*label);
        out.extend_from_slice(px);
    }
    Ok(out)
}

fn batch_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the first `limit` records of the train batches (in file order) or of
/// the test batch.
pub fn load_cifar10(dir: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let dir = batch_dir(dir);
    let files: Vec<&str> = match split {
        Split::Train => TRAIN_FILES.to_vec(),
        Split::Test => vec![TEST_FILE],
    };
    let mut parts = Vec::new();
    let mut remaining = limit.unwrap_or(usize::MAX);
    for name in files {
        if remaining == 0 {
            break;
        }
        let bytes = fs::read(dir.join(name))?;
        let part = parse_batch(&bytes, Some(remaining), split)?;
        remaining -= part.len();
        parts.push(part);
    }
    let labels: Vec<usize> = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
    let pixels: Vec<f32> = parts.into_iter().flat_map(|p| p.images.into_data()).collect();
    Dataset::new(Tensor::from_vec(&[labels.len(), 3, SIDE, SIDE], pixels)?, labels, CLASSES, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_arithmetic() {
        let labels = vec![3u8; 4];
        let pixels = vec![255u8; 4 * PIXELS];
        let bytes = encode_batch(&labels, &pixels).unwrap();
        assert_eq!(bytes.len(), 4 * 3073);
        let d = parse_batch(&bytes, None, Split::Train).unwrap();
        assert_eq!(d.images.shape(), &[4, 3, 32, 32]);
        assert_eq!(d.labels, vec![3; 4]);
        assert!(d.images.data().iter().all(|&v| v == 1.0));
        assert_eq!(parse_batch(&bytes, Some(2), Split::Train).unwrap().len(), 2);
    }

    #[test]
    fn truncated_batch_is_corrupt() {
        let bytes = encode_batch(&[1], &vec![0; PIXELS]).unwrap();
        let err = parse_batch(&bytes[..3000], None, Split::Train).unwrap_err();
        assert!(matches!(err, Error::CorruptBatch(_)));
    }

    #[test]
    fn label_above_nine_is_rejected() {
        let bytes = encode_batch(&[10], &vec![0; PIXELS]).unwrap();
        assert!(matches!(
            parse_batch(&bytes, None, Split::Test),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
    }

    #[test]
    fn channel_major_layout() {
        let mut pixels = vec![0u8; PIXELS];
        pixels[0] = 10; // R (0,0)
        pixels[1024] = 20; // G (0,0)
        pixels[2048 + 33] = 30; // B (1,1)
        let d = parse_batch(&encode_batch(&[0], &pixels).unwrap(), None, Split::Train).unwrap();
        let x = d.images.data();
        assert_eq!(x[0], 10.0 / 255.0);
        assert_eq!(x[1024], 20.0 / 255.0);
        assert_eq!(x[2048 + SIDE + 1], 30.0 / 255.0);
    }
}
