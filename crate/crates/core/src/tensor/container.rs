//! `MSSTACK` on-disk container.
//!
//! Layout: 8-byte magic `MSSTACK\0`, little-endian u32 version, little-endian
//! u32 JSON length, UTF-8 JSON metadata, then the payload. Payload order is
//! `[bin][coil][row][col]`; complex values are interleaved little-endian f32
//! `(re, im)` pairs, real values little-endian f32, masks one byte (0/1) per
//! sample. Values are rounded to f32 on save.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ComplexImage, Domain, MultiSpectralStack, TensorError};

pub const STACK_MAGIC: &[u8; 8] = b"MSSTACK\0";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: file is not an MSSTACK container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated container: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("container has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("payload does not match metadata: {0}")]
    PayloadMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ContainerError {
    /// Stable short code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            ContainerError::BadMagic => "bad_magic",
            ContainerError::UnsupportedVersion(_) => "bad_version",
            ContainerError::Truncated { .. } => "truncated",
            ContainerError::TrailingBytes(_) => "trailing_bytes",
            ContainerError::Metadata(_) => "bad_metadata",
            ContainerError::PayloadMismatch(_) => "payload_mismatch",
            ContainerError::Tensor(_) => "invalid_stack",
            ContainerError::Io(_) => "io",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    Complex64,
    Float32,
    U8,
}

impl Dtype {
    fn bytes_per_value(self) -> usize {
        match self {
            Dtype::Complex64 => 8,
            Dtype::Float32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackMetadata {
    pub n_bins: usize,
    pub n_coils: usize,
    pub rows: usize,
    pub cols: usize,
    pub domain: Domain,
    pub bin_centers_khz: Vec<f64>,
    pub provenance: String,
    #[serde(default)]
    pub dtype: Dtype,
    /// Free-form labels (scheme names, method, window/level, ...).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl StackMetadata {
    pub fn n_values(&self) -> usize {
        self.n_bins * self.n_coils * self.rows * self.cols
    }

    fn payload_len(&self) -> usize {
        self.n_values() * self.dtype.bytes_per_value()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
    Mask(Vec<bool>),
}

impl Payload {
    fn dtype(&self) -> Dtype {
        match self {
            Payload::Complex(_) => Dtype::Complex64,
            Payload::Real(_) => Dtype::Float32,
            Payload::Mask(_) => Dtype::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Complex(v) => v.len(),
            Payload::Real(v) => v.len(),
            Payload::Mask(v) => v.len(),
        }
    }
}

pub fn write_container<W: Write>(
    mut w: W,
    meta: &StackMetadata,
    payload: &Payload,
) -> Result<(), ContainerError> {
    if meta.dtype != payload.dtype() {
        return Err(ContainerError::PayloadMismatch(format!(
            "metadata dtype {:?}, payload {:?}",
            meta.dtype,
            payload.dtype()
        )));
    }
    if payload.len() != meta.n_values() {
        return Err(ContainerError::PayloadMismatch(format!(
            "metadata implies {} values, payload has {}",
            meta.n_values(),
            payload.len()
        )));
    }
    let json = serde_json::to_vec(meta).map_err(|e| ContainerError::Metadata(e.to_string()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + json.len() + meta.payload_len());
    buf.extend_from_slice(STACK_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    match payload {
        Payload::Complex(v) => {
            for z in v {
                buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                buf.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        Payload::Real(v) => {
            for x in v {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        Payload::Mask(v) => buf.extend(v.iter().map(|&b| b as u8)),
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_container(bytes: &[u8]) -> Result<(StackMetadata, Payload), ContainerError> {
    if bytes.len() < 8 || &bytes[..8] != STACK_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json_end = HEADER_LEN + json_len;
    if bytes.len() < json_end {
        return Err(ContainerError::Truncated {
            expected: json_end,
            actual: bytes.len(),
        });
    }
    let meta: StackMetadata = serde_json::from_slice(&bytes[HEADER_LEN..json_end])
        .map_err(|e| ContainerError::Metadata(e.to_string()))?;
    if meta.bin_centers_khz.len() != meta.n_bins {
        return Err(ContainerError::Metadata(format!(
            "{} bin centers for {} bins",
            meta.bin_centers_khz.len(),
            meta.n_bins
        )));
    }
    let expected = json_end + meta.payload_len();
    if bytes.len() < expected {
        return Err(ContainerError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ContainerError::TrailingBytes(bytes.len() - expected));
    }
    let body = &bytes[json_end..];
    let f32_at = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap()) as f64;
    let payload = match meta.dtype {
        Dtype::Complex64 => Payload::Complex(
            (0..meta.n_values())
                .map(|i| Complex64::new(f32_at(2 * i), f32_at(2 * i + 1)))
                .collect(),
        ),
        Dtype::Float32 => Payload::Real((0..meta.n_values()).map(f32_at).collect()),
        Dtype::U8 => Payload::Mask(
            body.iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(ContainerError::PayloadMismatch(format!(
                        "mask byte {other} is not 0/1"
                    ))),
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok((meta, payload))
}

pub(crate) fn stack_metadata(stack: &MultiSpectralStack, provenance: &str) -> StackMetadata {
    StackMetadata {
        n_bins: stack.n_bins(),
        n_coils: stack.n_coils(),
        rows: stack.rows(),
        cols: stack.cols(),
        domain: stack.domain(),
        bin_centers_khz: stack.bin_centers_khz().to_vec(),
        provenance: provenance.to_string(),
        dtype: Dtype::Complex64,
        extra: Default::default(),
    }
}

/// Write a complex stack. Values are stored as f32.
pub fn save_stack(
    stack: &MultiSpectralStack,
    provenance: &str,
    path: impl AsRef<Path>,
) -> Result<(), ContainerError> {
    let meta = stack_metadata(stack, provenance);
    let payload = Payload::Complex(
        stack
            .images()
            .iter()
            .flat_map(|im| im.data().iter().copied())
            .collect(),
    );
    let mut bytes = Vec::new();
    write_container(&mut bytes, &meta, &payload)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<MultiSpectralStack, ContainerError> {
    let bytes = fs::read(path)?;
    stack_from_bytes(&bytes)
}

pub(crate) fn stack_from_bytes(bytes: &[u8]) -> Result<MultiSpectralStack, ContainerError> {
    let (meta, payload) = read_container(bytes)?;
    let Payload::Complex(values) = payload else {
        return Err(ContainerError::PayloadMismatch(format!(
            "expected complex64 payload, found {:?}",
            meta.dtype
        )));
    };
    let plane = meta.rows * meta.cols;
    let images = values
        .chunks(plane.max(1))
        .take(meta.n_bins * meta.n_coils)
        .map(|chunk| ComplexImage::from_vec(meta.rows, meta.cols, chunk.to_vec(), meta.domain))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiSpectralStack::new(
        meta.bin_centers_khz,
        meta.n_coils,
        images,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::symmetric_bin_centers;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(n_bins: usize, n_coils: usize, rows: usize, cols: usize) -> MultiSpectralStack {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let images = (0..n_bins * n_coils)
            .map(|_| {
                let data = (0..rows * cols)
                    .map(|_| {
                        // f32-representable so the f32 payload is lossless
                        Complex64::new(
                            rng.random::<f32>() as f64 - 0.5,
                            rng.random::<f32>() as f64 - 0.5,
                        )
                    })
                    .collect();
                ComplexImage::from_vec(rows, cols, data, Domain::Kspace).unwrap()
            })
            .collect();
        MultiSpectralStack::new(symmetric_bin_centers(n_bins, 1.0), n_coils, images).unwrap()
    }

    fn encode(stack: &MultiSpectralStack) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.msstack");
        save_stack(stack, "test", &path).unwrap();
        fs::read(path).unwrap()
    }

    #[test]
    fn round_trip_bit_identical() {
        let stack = random_stack(8, 2, 64, 64);
        let bytes = encode(&stack);
        assert_eq!(&bytes[..8], b"MSSTACK\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = stack_from_bytes(&bytes).unwrap();
        assert_eq!(back, stack);
        assert_eq!(back.bin_centers_khz(), stack.bin_centers_khz());
    }

    #[test]
    fn json_keys_present() {
        let bytes = encode(&random_stack(2, 1, 2, 3));
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + n]).unwrap();
        for key in [
            "n_bins",
            "n_coils",
            "rows",
            "cols",
            "domain",
            "bin_centers_khz",
            "provenance",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["domain"], "kspace");
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = encode(&random_stack(2, 1, 4, 4));
        bytes[3] ^= 0xff;
        let err = stack_from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ContainerError::BadMagic));
        assert_eq!(err.code(), "bad_magic");
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&random_stack(2, 1, 4, 4));
        let err = stack_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.code(), "truncated");
    }

    #[test]
    fn version_and_trailing() {
        let mut bytes = encode(&random_stack(2, 1, 4, 4));
        bytes.push(0);
        assert_eq!(stack_from_bytes(&bytes).unwrap_err().code(), "trailing_bytes");
        bytes.pop();
        bytes[8] = 2;
        assert_eq!(stack_from_bytes(&bytes).unwrap_err().code(), "bad_version");
    }

    #[test]
    fn mask_and_real_payloads() {
        let meta = StackMetadata {
            n_bins: 2,
            n_coils: 1,
            rows: 2,
            cols: 2,
            domain: Domain::Kspace,
            bin_centers_khz: vec![-0.5, 0.5],
            provenance: String::new(),
            dtype: Dtype::U8,
            extra: Default::default(),
        };
        let mask = Payload::Mask(vec![true, false, false, true, true, true, false, false]);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &meta, &mask).unwrap();
        assert_eq!(read_container(&bytes).unwrap(), (meta.clone(), mask));

        let real_meta = StackMetadata {
            dtype: Dtype::Float32,
            ..meta.clone()
        };
        let real = Payload::Real(vec![0.25, 1.0, 2.0, 0.0, 3.5, 4.0, 5.0, 6.0]);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &real_meta, &real).unwrap();
        assert_eq!(read_container(&bytes).unwrap().1, real);

        // dtype/payload disagreement is refused
        assert!(write_container(Vec::new(), &meta, &real).is_err());
    }
}
