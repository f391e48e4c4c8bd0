//! Weight container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NUCUNET1"
//! 8       4     depth           (u32 LE)
//! 12      4     base_channels   (u32 LE)
//! 16      4     input_channels  (u32 LE)
//! 20      4     parameter count (u32 LE, total scalars)
//! 24      4*n   parameters as f32 LE, arrays in `UNetSpec::param_layout` order
//! ```

use alloc::format;
use alloc::vec::Vec;

use super::{Model, UNetSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 8] = b"NUCUNET1";
const HEADER_LEN: usize = 24;

pub fn encode_weights(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let count = spec.param_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * count);
    out.extend_from_slice(WEIGHT_MAGIC);
    for v in [spec.depth, spec.base_channels, spec.input_channels, count] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in model.params() {
        for &v in p.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
}

/// Decodes a weight container. With `requested`, the stored spec must match.
pub fn decode_weights(bytes: &[u8], requested: Option<&UNetSpec>) -> Result<Model> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..8] != WEIGHT_MAGIC {
        return Err(Error::WeightFormat(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..8],
            core::str::from_utf8(WEIGHT_MAGIC).unwrap_or_default()
        )));
    }
    let spec = UNetSpec {
        depth: read_u32(bytes, 8),
        base_channels: read_u32(bytes, 12),
        input_channels: read_u32(bytes, 16),
    };
    spec.validate()
        .map_err(|e| Error::WeightFormat(format!("invalid stored spec: {e}")))?;
    if let Some(req) = requested {
        if *req != spec {
            return Err(Error::SpecMismatch {
                found: format!("{spec}"),
                requested: format!("{req}"),
            });
        }
    }
    let count = read_u32(bytes, 20);
    if count != spec.param_count() {
        return Err(Error::WeightFormat(format!(
            "header declares {count} parameters, spec {spec} needs {}",
            spec.param_count()
        )));
    }
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let mut cursor = HEADER_LEN;
    let mut params = Vec::new();
    for (_, shape) in spec.param_layout() {
        let len: usize = shape.iter().product();
        let data = bytes[cursor..cursor + 4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        cursor += 4 * len;
        params.push(Tensor::new(shape, data)?);
    }
    Model::from_params(spec, params)
}
