//! Reader and writer for the safetensors container layout:
//!
//! ```text
//! [u64 little-endian header length N][N bytes UTF-8 JSON header][tensor bytes]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! with offsets relative to the start of the byte buffer that follows the
//! header. An optional `"__metadata__"` entry holds string key/value pairs.

use std::collections::BTreeMap;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use super::ModelError;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
    BF16,
    F64,
    I64,
    I32,
    I16,
    I8,
    U8,
    BOOL,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F16 | Dtype::BF16 | Dtype::I16 => 2,
            Dtype::I8 | Dtype::U8 | Dtype::BOOL => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// A tensor borrowed from a parsed container.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: &'a [u8],
}

impl TensorView<'_> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decodes to `f32`. Half-precision dtypes widen exactly; everything else
    /// (including `F64`, which would need lossy narrowing) is rejected.
    pub fn to_f32(&self) -> Result<Vec<f32>, ModelError> {
        let out = match self.dtype {
            Dtype::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => self
                .bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            Dtype::BF16 => self
                .bytes
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            other => {
                return Err(ModelError::UnsupportedDtype {
                    name: self.name.clone(),
                    dtype: format!("{other:?}"),
                })
            }
        };
        Ok(out)
    }
}

/// A parsed container. Tensor bytes are borrowed from the input buffer.
#[derive(Debug)]
pub struct SafeTensors<'a> {
    tensors: BTreeMap<String, TensorView<'a>>,
    metadata: BTreeMap<String, String>,
}

impl<'a> SafeTensors<'a> {
    pub fn parse(buffer: &'a [u8]) -> Result<Self, ModelError> {
        let header_err = |msg: String| ModelError::Header(msg);
        if buffer.len() < 8 {
            return Err(header_err(format!(
                "file is {} bytes, too short for the 8-byte header length",
                buffer.len()
            )));
        }
        let header_len = u64::from_le_bytes(buffer[..8].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(8))
            .filter(|&end| end <= buffer.len())
            .ok_or_else(|| {
                header_err(format!(
                    "declared header length {header_len} exceeds file size {}",
                    buffer.len()
                ))
            })?;
        let header = std::str::from_utf8(&buffer[8..header_end])
            .map_err(|e| header_err(format!("header is not valid UTF-8: {e}")))?;
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(header).map_err(|e| header_err(format!("header JSON does not parse: {e}")))?;

        let data = &buffer[header_end..];
        let mut tensors = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in raw {
            if name == METADATA_KEY {
                metadata = serde_json::from_value(value).map_err(|e| header_err(format!("bad {METADATA_KEY}: {e}")))?;
                continue;
            }
            let info: TensorInfo =
                serde_json::from_value(value).map_err(|e| header_err(format!("bad entry for tensor `{name}`: {e}")))?;
            let [start, end] = info.data_offsets;
            if start > end || end > data.len() {
                return Err(header_err(format!(
                    "tensor `{name}` offsets [{start}, {end}) outside data section of {} bytes",
                    data.len()
                )));
            }
            let numel: usize = info.shape.iter().product();
            if numel * info.dtype.size() != end - start {
                return Err(ModelError::ShapeMismatch {
                    name,
                    expected: format!("{} bytes for shape {:?}", numel * info.dtype.size(), info.shape),
                    actual: format!("{} bytes", end - start),
                });
            }
            tensors.insert(
                name.clone(),
                TensorView {
                    name,
                    dtype: info.dtype,
                    shape: info.shape,
                    bytes: &data[start..end],
                },
            );
        }
        Ok(Self { tensors, metadata })
    }

    pub fn get(&self, name: &str) -> Option<&TensorView<'a>> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }
}

/// One `f32` tensor to be written.
pub struct TensorToWrite<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f32],
}

/// Serializes `f32` tensors (in the given order) plus metadata.
pub fn serialize(tensors: &[TensorToWrite<'_>], metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(metadata).expect("string map serializes"),
        );
    }
    let mut offset = 0usize;
    for t in tensors {
        let len = t.data.len() * 4;
        let info = TensorInfo {
            dtype: Dtype::F32,
            shape: t.shape.clone(),
            data_offsets: [offset, offset + len],
        };
        header.insert(t.name.clone(), serde_json::to_value(info).expect("info serializes"));
        offset += len;
    }
    let mut header_bytes = serde_json::to_vec(&header).expect("header serializes");
    // Pad with spaces so the data section starts 8-byte aligned.
    while !header_bytes.len().is_multiple_of(8) {
        header_bytes.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
