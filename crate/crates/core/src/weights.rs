//! Self-describing binary weight files.
//!
//! Layout (integers little-endian `u32` unless noted):
//!
//! ```text
//! magic          8 bytes  "WCHNNW\0\0"
//! version        u32      = 1
//! name           u32 length + UTF-8 bytes
//! input shape    u32 rank + rank x u32
//! layer count    u32
//! per layer:
//!   kind         u8       0 dense, 1 conv2d, 2 relu, 3 maxpool2, 4 flatten
//!   padding      u8       conv2d only: 0 valid, 1 same
//!   tensors      u32      2 for dense/conv2d (weight, bias), else 0
//!   per tensor:  u32 rank + rank x u32 dims + product(dims) x f32 LE
//! ```
//!
//! Loading rebuilds the model through the same shape-chain check as
//! construction, so a header whose shapes disagree fails naming the layer.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::layers::{Layer, Padding};
use crate::model::{Model, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WCHNNW\0\0";
pub const VERSION: u32 = 1;

const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("weight file truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed weight file at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("weight file shape error: {0}")]
    Shape(#[from] ModelError),
}

/// Serializes `model` into the weight-file byte layout.
pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    u32le(&mut out, model.name().len());
    out.extend_from_slice(model.name().as_bytes());
    u32le(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        u32le(&mut out, d);
    }
    u32le(&mut out, model.layers().len());
    for layer in model.layers() {
        let tag = match layer {
            Layer::Dense { .. } => 0u8,
            Layer::Conv2d { .. } => 1,
            Layer::Relu => 2,
            Layer::MaxPool2 => 3,
            Layer::Flatten => 4,
        };
        out.push(tag);
        if let Layer::Conv2d { padding, .. } = layer {
            out.push(match padding {
                Padding::Valid => 0,
                Padding::Same => 1,
            });
        }
        let params = layer.params();
        u32le(&mut out, params.len());
        for p in params {
            u32le(&mut out, p.shape().len());
            for &d in p.shape() {
                u32le(&mut out, d);
            }
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let left = self.bytes.len() - self.at;
        if n > left {
            return Err(WeightsError::Truncated {
                offset: self.at,
                needed: n - left,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, WeightsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn shape(&mut self) -> Result<Vec<usize>, WeightsError> {
        let at = self.at;
        let rank = self.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(WeightsError::Format {
                offset: at,
                reason: format!("tensor rank {rank}"),
            });
        }
        let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        if dims.contains(&0) {
            return Err(WeightsError::Format {
                offset: at,
                reason: format!("zero extent in {dims:?}"),
            });
        }
        Ok(dims)
    }

    fn tensor(&mut self) -> Result<Tensor<f32>, WeightsError> {
        let shape = self.shape()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WeightsError::Format {
                offset: self.at,
                reason: format!("tensor of shape {shape:?} is too large"),
            })?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor::new(shape, data).expect("length follows from shape"))
    }
}

/// Rebuilds a model from the weight-file byte layout.
pub fn decode(bytes: &[u8]) -> Result<Model<f32>, WeightsError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len()).map_err(|_| WeightsError::BadMagic)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(WeightsError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let name_len = r.u32()?;
    let at = r.at;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|e| WeightsError::Format {
            offset: at,
            reason: e.to_string(),
        })?
        .to_string();
    let input_shape = r.shape()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let at = r.at;
        let tag = r.u8()?;
        let padding = if tag == 1 {
            match r.u8()? {
                0 => Some(Padding::Valid),
                1 => Some(Padding::Same),
                p => {
                    return Err(WeightsError::Format {
                        offset: at + 1,
                        reason: format!("layer {index}: unknown padding {p}"),
                    })
                }
            }
        } else {
            None
        };
        let at_params = r.at;
        let n_params = r.u32()?;
        let wanted = if tag <= 1 { 2 } else { 0 };
        if tag > 4 {
            return Err(WeightsError::Format {
                offset: at,
                reason: format!("layer {index}: unknown kind tag {tag}"),
            });
        }
        if n_params != wanted {
            return Err(WeightsError::Format {
                offset: at_params,
                reason: format!("layer {index}: {n_params} parameter tensors, expected {wanted}"),
            });
        }
        let layer = match (tag, padding) {
            (0, _) => Layer::Dense {
                weight: r.tensor()?,
                bias: r.tensor()?,
            },
            (1, Some(padding)) => Layer::Conv2d {
                weight: r.tensor()?,
                bias: r.tensor()?,
                padding,
            },
            (2, _) => Layer::Relu,
            (3, _) => Layer::MaxPool2,
            _ => Layer::Flatten,
        };
        layers.push(layer);
    }
    if r.at != bytes.len() {
        return Err(WeightsError::Format {
            offset: r.at,
            reason: format!("{} trailing bytes", bytes.len() - r.at),
        });
    }
    Ok(Model::from_layers(&name, &input_shape, layers)?)
}

pub fn save_weights(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model<f32>, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchSpec};
    use proptest::prelude::*;

    fn cnn() -> Model<f32> {
        build_model(&ArchSpec::cnn_2conv(&[28, 28, 1], 10), 3).unwrap()
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wts");
        let m = cnn();
        save_weights(&m, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, m);
        let probe = Tensor::full(&[28, 28, 1], 0.25f32);
        let (a, b) = (m.logits(&probe).unwrap(), back.logits(&probe).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let bytes = encode(&cnn());
        for cut in [3, 12, bytes.len() / 2, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, WeightsError::Truncated { .. } | WeightsError::BadMagic),
                "cut {cut}: {err}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(WeightsError::Format { .. })));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = encode(&cnn());
        bytes[8] = 2;
        assert!(matches!(decode(&bytes), Err(WeightsError::Version { found: 2, supported: 1 })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(WeightsError::BadMagic)));
    }

    #[test]
    fn edited_shape_header_names_the_layer() {
        // Reshape the final dense weight [512, 10] to [256, 20]: same byte
        // count, so only the shape chain can catch it.
        let m = cnn();
        let mut bytes = encode(&m);
        let mut header = Vec::new();
        for v in [2u32, 512, 10] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        let pos = bytes
            .windows(header.len())
            .rposition(|w| w == header.as_slice())
            .expect("dense header present");
        bytes[pos + 4..pos + 8].copy_from_slice(&256u32.to_le_bytes());
        bytes[pos + 8..pos + 12].copy_from_slice(&20u32.to_le_bytes());
        match decode(&bytes) {
            Err(WeightsError::Shape(ModelError::Shape { layer, kind, .. })) => {
                assert_eq!((layer, kind), (7, "dense"));
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn mlp_round_trip(seed in any::<u64>(), d in 1usize..20, classes in 2usize..6) {
            let m: Model<f32> = build_model(&ArchSpec::mlp_small(&[d], classes), seed).unwrap();
            prop_assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }
}
