//! Binary tensor container used by every pipeline stage.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SCWT"
//! version u16      currently 1
//! dtype   u8       1 = f32, 2 = f64
//! rank    u8
//! dims    rank x u32
//! payload product(dims) * dtype size, row-major
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SCWT";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// A tensor read back from a container file.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::F64(a) => a.shape(),
        }
    }

    /// Widens to f64 regardless of stored precision.
    pub fn into_f64(self) -> ArrayD<f64> {
        match self {
            Tensor::F32(a) => a.mapv(f64::from),
            Tensor::F64(a) => a,
        }
    }

    pub fn as_f64(&self) -> Result<&ArrayD<f64>> {
        match self {
            Tensor::F64(a) => Ok(a),
            Tensor::F32(_) => Err(Error::Format("expected f64 tensor, found f32".into())),
        }
    }
}

fn encode_header(dtype: u8, dims: &[usize]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(Error::Format(format!("unsupported rank {}", dims.len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} exceeds u32 range")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_f64(array: &ArrayD<f64>) -> Result<Vec<u8>> {
    let mut out = encode_header(DTYPE_F64, array.shape())?;
    out.reserve(array.len() * 8);
    for &v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_f32(array: &ArrayD<f32>) -> Result<Vec<u8>> {
    let mut out = encode_header(DTYPE_F32, array.shape())?;
    out.reserve(array.len() * 4);
    for &v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let fail = |msg: &str| Error::Format(msg.to_string());
    if bytes.len() < 8 {
        return Err(fail("container shorter than fixed header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unknown container version {version}")));
    }
    let dtype = bytes[6];
    let rank = bytes[7] as usize;
    if rank == 0 {
        return Err(fail("rank must be at least 1"));
    }
    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(fail("truncated dimension table"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail("dimension product overflows"))?;
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
    };
    let payload_len = count
        .checked_mul(elem)
        .ok_or_else(|| fail("payload size overflows"))?;
    let payload = &bytes[dims_end..];
    if payload.len() != payload_len {
        return Err(Error::Format(format!(
            "payload length {} does not match header ({} expected)",
            payload.len(),
            payload_len
        )));
    }
    let shape = IxDyn(&dims);
    match dtype {
        DTYPE_F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::F32(ArrayD::from_shape_vec(shape, data).unwrap()))
        }
        _ => {
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::F64(ArrayD::from_shape_vec(shape, data).unwrap()))
        }
    }
}

pub fn write_f64(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    fs::write(path, encode_f64(array)?)?;
    Ok(())
}

pub fn write_f32(path: &Path, array: &ArrayD<f32>) -> Result<()> {
    fs::write(path, encode_f32(array)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    let mut file = fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    file.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Reads a tensor and checks its rank before handing it back.
pub fn read_rank(path: &Path, rank: usize) -> Result<Tensor> {
    let t = read(path)?;
    if t.shape().len() != rank {
        return Err(Error::Format(format!(
            "{}: expected rank {rank}, found rank {}",
            path.display(),
            t.shape().len()
        )));
    }
    Ok(t)
}
