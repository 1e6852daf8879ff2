//! The `MPT1` checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MPT1"  u32 version  u32 spec_len  spec_text[spec_len]
//! per prunable layer:
//!     u32 rank  u32 dims[rank]
//!     f32 weights[n]  f32 scores[n]
//!     u8 mask[ceil(n/8)]          (LSB-first)
//!     f32 alpha  f32 scale
//! u64 seed  u8 phase
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::supermask::{binarize_layer, Mask, MaskedBinaryLayer};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"MPT1";
pub const VERSION: u32 = 1;

/// Relative tolerance for the stored binarization scale.
const SCALE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Mpt = 0,
    Finetune = 1,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Mpt => "mpt",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub weights: Tensor<f32>,
    pub scores: Tensor<f32>,
    pub mask: Mask,
    pub alpha: f32,
    pub scale: f32,
}

impl LayerState {
    /// Builds a record with the scale recomputed from `weights` and `mask`;
    /// an empty mask stores scale 0.
    pub fn new(weights: Tensor<f32>, scores: Tensor<f32>, mask: Mask, alpha: f32) -> Result<Self> {
        let scale = if mask.kept() == 0 {
            0.0
        } else {
            binarize_layer(&weights.cast::<f64>(), &mask)?.0 as f32
        };
        Ok(Self {
            weights,
            scores,
            mask,
            alpha,
            scale,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerState>,
    pub seed: u64,
    pub phase: Phase,
}

impl Checkpoint {
    pub fn masks(&self) -> Vec<Mask> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }

    /// Masked binarized layers in precision `T`, with scales recomputed from
    /// the stored weights.
    pub fn binary_layers<T: Real>(&self) -> Result<Vec<MaskedBinaryLayer<T>>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(j, l)| {
                if l.mask.kept() == 0 {
                    return Err(Error::LayerFullyPruned { layer: j });
                }
                MaskedBinaryLayer::new(l.weights.cast::<T>(), l.mask.clone())
            })
            .collect()
    }

    /// `W_b ⊙ M` for every prunable layer.
    pub fn effective_weights<T: Real>(&self) -> Result<Vec<Tensor<T>>> {
        Ok(self.binary_layers::<T>()?.iter().map(MaskedBinaryLayer::effective_weights).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let layers = self.spec.prunable_layers();
        if layers.len() != self.layers.len() {
            return Err(Error::Invariant(format!(
                "{} layer records for {} prunable layers",
                self.layers.len(),
                layers.len()
            )));
        }
        for (j, (want, got)) in layers.iter().zip(&self.layers).enumerate() {
            let shape = want.weight_shape.as_slice();
            if got.weights.shape() != shape || got.scores.shape() != shape || got.mask.shape() != shape {
                return Err(Error::Invariant(format!("layer {j}: tensor shapes differ from {shape:?}")));
            }
            let expected = if got.mask.kept() == 0 {
                0.0
            } else {
                binarize_layer(&got.weights.cast::<f64>(), &got.mask)?.0
            };
            let stored = got.scale as f64;
            if (stored - expected).abs() > SCALE_TOLERANCE * expected.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Invariant(format!(
                    "layer {j}: stored scale {stored} but weights and mask give {expected}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.spec.to_string();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for layer in &self.layers {
            let shape = layer.weights.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in layer.weights.data().iter().chain(layer.scores.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&pack_mask(layer.mask.bits()));
            out.extend_from_slice(&layer.alpha.to_le_bytes());
            out.extend_from_slice(&layer.scale.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.phase as u8);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic("not an MPT1 checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let len = r.u32("spec length")? as usize;
        let text = std::str::from_utf8(r.take(len, "spec text")?)
            .map_err(|e| Error::Format(format!("spec text: {e}")))?;
        let spec: NetworkSpec = text.parse()?;
        let mut layers = Vec::new();
        for (j, want) in spec.prunable_layers().iter().enumerate() {
            let rank = r.u32("layer rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("layer dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != want.weight_shape {
                return Err(Error::Format(format!(
                    "layer {j}: stored shape {shape:?}, spec says {:?}",
                    want.weight_shape
                )));
            }
            let n: usize = shape.iter().product();
            let weights = Tensor::from_vec(&shape, r.f32s(n, "weights")?)?;
            let scores = Tensor::from_vec(&shape, r.f32s(n, "scores")?)?;
            let mask = Mask::from_bits(&shape, unpack_mask(r.take(n.div_ceil(8), "mask")?, n))?;
            let alpha = r.f32("alpha")?;
            let scale = r.f32("scale")?;
            layers.push(LayerState {
                weights,
                scores,
                mask,
                alpha,
                scale,
            });
        }
        let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
        let phase = match r.take(1, "phase")?[0] {
            0 => Phase::Mpt,
            1 => Phase::Finetune,
            other => return Err(Error::Format(format!("unknown phase tag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Self {
            spec,
            layers,
            seed,
            phase,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Packs mask bits eight to a byte, least significant bit first.
pub fn pack_mask(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)))
        .collect()
}

pub fn unpack_mask(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::conv_family(Arch::Conv2, [1, 4, 4], 3).unwrap();
        let layers = spec
            .prunable_layers()
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let n = l.len();
                let w = Tensor::from_fn(&l.weight_shape, |i| ((i * 7 + j) % 11) as f32 - 5.0);
                let s = Tensor::from_fn(&l.weight_shape, |i| (i % 5) as f32 * 0.1);
                let m = Mask::from_bits(&l.weight_shape, (0..n).map(|i| i % 3 != 0).collect()).unwrap();
                LayerState::new(w, s, m, 2.0).unwrap()
            })
            .collect();
        Checkpoint {
            spec,
            layers,
            seed: 42,
            phase: Phase::Mpt,
        }
    }

    #[test]
    fn mask_packing_is_lsb_first() {
        let bits = [true, false, true, true, false, false, false, false];
        assert_eq!(pack_mask(&bits), vec![0x0D]);
        assert_eq!(unpack_mask(&[0x0D], 8), bits.to_vec());
        assert_eq!(pack_mask(&[true; 9]), vec![0xFF, 0x01]);
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn flipped_magic() {
        let mut bytes = sample().to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_and_truncation() {
        let mut bytes = sample().to_bytes();
        let full = bytes.clone();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));
        assert!(matches!(Checkpoint::from_bytes(&full[..full.len() - 3]), Err(Error::Truncated(_))));
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let mut c = sample();
        c.layers[1].scale *= 1.01;
        assert!(matches!(Checkpoint::from_bytes(&c.to_bytes()), Err(Error::Invariant(_))));
    }
}
