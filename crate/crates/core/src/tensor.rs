//! Binary tensor container.
//!
//! Layout: the 8-byte magic `TPFV0001`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then the raw little-endian IEEE-754 payload in
//! row-major order (innermost axis last). Feature maps use `f32`; model files
//! use the same container with a `metadata` block in the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TPFV0001";
const PREAMBLE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl TensorHeader {
    pub fn new(dtype: DType, shape: Vec<usize>) -> Self {
        TensorHeader {
            dtype,
            shape,
            layer_tag: None,
            source_height: None,
            source_width: None,
            metadata: None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// A decoded tensor file.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: TensorData,
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(TensorHeader::new(DType::F32, shape), TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(TensorHeader::new(DType::F64, shape), TensorData::F64(data))
    }

    pub fn new(mut header: TensorHeader, data: TensorData) -> Result<Self> {
        header.dtype = data.dtype();
        if header.element_count() != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {:?} holds {} elements, payload has {}",
                header.shape,
                header.element_count(),
                data.len()
            )));
        }
        Ok(Tensor { header, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.header.shape
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.header.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.header.shape) {
            if i >= n {
                return None;
            }
            flat = flat * n + i;
        }
        Some(flat)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        let at = self.offset(index)?;
        Some(match &self.data {
            TensorData::F32(v) => f64::from(v[at]),
            TensorData::F64(v) => v[at],
        })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn into_f32_vec(self) -> Vec<f32> {
        match self.data {
            TensorData::F32(v) => v,
            TensorData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        }
    }

    /// Serialize to the container byte layout.
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out =
            Vec::with_capacity(PREAMBLE + header.len() + self.data.len() * self.header.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parse container bytes. `origin` is only used in error messages.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(Error::format(origin, bytes.len() as u64, "truncated preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format(origin, 0, "bad magic, expected TPFV0001"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::format(origin, 8, "header length exceeds file size"))?;
        let header: TensorHeader = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::format(origin, PREAMBLE as u64, format!("header: {e}")))?;
        if header.shape.is_empty() {
            return Err(Error::format(origin, PREAMBLE as u64, "empty shape"));
        }

        let payload = &bytes[header_end..];
        let width = header.dtype.size();
        let expected = header
            .element_count()
            .checked_mul(width)
            .ok_or_else(|| Error::format(origin, PREAMBLE as u64, "shape overflows"))?;
        if payload.len() != expected {
            return Err(Error::format(
                origin,
                header_end as u64,
                format!(
                    "payload is {} bytes, shape {:?} requires {}",
                    payload.len(),
                    header.shape,
                    expected
                ),
            ));
        }

        let non_finite = |i: usize| {
            Error::format(
                origin,
                (header_end + i * width) as u64,
                format!("non-finite value at element {i}"),
            )
        };
        let data = match header.dtype {
            DType::F32 => {
                let mut v = Vec::with_capacity(header.element_count());
                for (i, chunk) in payload.chunks_exact(4).enumerate() {
                    let x = f32::from_le_bytes(chunk.try_into().unwrap());
                    if !x.is_finite() {
                        return Err(non_finite(i));
                    }
                    v.push(x);
                }
                TensorData::F32(v)
            }
            DType::F64 => {
                let mut v = Vec::with_capacity(header.element_count());
                for (i, chunk) in payload.chunks_exact(8).enumerate() {
                    let x = f64::from_le_bytes(chunk.try_into().unwrap());
                    if !x.is_finite() {
                        return Err(non_finite(i));
                    }
                    v.push(x);
                }
                TensorData::F64(v)
            }
        };
        Ok(Tensor { header, data })
    }
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes, path)
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}
