//! Dense tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "PIMF"
//! version u16      currently 1
//! dtype   u8       1 = f32, 2 = f64
//! rank    u8
//! dims    rank × u32, row-major order
//! payload product(dims) scalars, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PIMF";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
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

    /// Widens to f64 (exact for f32 inputs).
    pub fn into_f64(self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.into_iter().map(f64::from).collect(),
            TensorData::F64(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new_f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(TensorFile { dims, data: TensorData::F64(data) })
    }

    pub fn new_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(TensorFile { dims, data: TensorData::F32(data) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let scalar_size = match self.data {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
        };
        let mut out =
            Vec::with_capacity(4 + 2 + 1 + 1 + 4 * self.dims.len() + scalar_size * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        match &self.data {
            TensorData::F32(_) => out.push(DTYPE_F32),
            TensorData::F64(_) => out.push(DTYPE_F64),
        }
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}", magic)));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = r.take(1)?[0];
        let rank = r.take(1)?[0] as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("rank {rank} exceeds maximum {MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
            dims.push(d);
        }
        let data = match dtype {
            DTYPE_F32 => {
                let raw = r.take_exact_rest(count * 4)?;
                let mut v = Vec::with_capacity(count);
                for c in raw.chunks_exact(4) {
                    v.push(f32::from_le_bytes(c.try_into().unwrap()));
                }
                TensorData::F32(v)
            }
            DTYPE_F64 => {
                let raw = r.take_exact_rest(count * 8)?;
                let mut v = Vec::with_capacity(count);
                for c in raw.chunks_exact(8) {
                    v.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
                TensorData::F64(v)
            }
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        Ok(TensorFile { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn num_elements(&self) -> usize {
        self.data.len()
    }
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.len() > MAX_RANK {
        return Err(Error::Format(format!("rank {} exceeds maximum {MAX_RANK}", dims.len())));
    }
    let product: usize = dims.iter().product();
    if product != len {
        return Err(Error::ShapeMismatch {
            expected: format!("{dims:?} = {product} elements"),
            got: format!("{len} elements"),
        });
    }
    for &d in dims {
        if d > u32::MAX as usize {
            return Err(Error::Format(format!("dimension {d} exceeds u32 range")));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Takes exactly `n` bytes and requires them to be the last bytes of the
    /// buffer; trailing garbage is rejected.
    fn take_exact_rest(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.take(n)?;
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(s)
    }
}
