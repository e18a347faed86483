//! Minimal binary tensor container.
//!
//! Layout (all multi-byte fields little-endian):
//!
//! | bytes      | field                                  |
//! |------------|----------------------------------------|
//! | 4          | magic `PGTN`                           |
//! | 2          | version (u16, currently 1)             |
//! | 1          | dtype code: 1 = f32, 2 = f64, 3 = u8   |
//! | 2          | ndim (u16)                             |
//! | 8 × ndim   | shape (u64 per dim)                    |
//! | rest       | payload, row-major                     |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::HarnessError;

pub const MAGIC: &[u8; 4] = b"PGTN";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<u64>,
    data: TensorData,
}

fn format_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

fn element_count(shape: &[u64]) -> Option<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
}

impl TensorFile {
    pub fn new(shape: Vec<u64>, data: TensorData) -> Result<Self, HarnessError> {
        if shape.len() > u16::MAX as usize {
            return Err(format_err("too many dimensions"));
        }
        let count = element_count(&shape).ok_or_else(|| format_err("shape overflows"))?;
        if count != data.len() {
            return Err(format_err(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: &[usize], values: Vec<f64>) -> Result<Self, HarnessError> {
        Self::new(shape.iter().map(|&d| d as u64).collect(), TensorData::F64(values))
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Payload as f64, failing on other dtypes.
    pub fn as_f64(&self) -> Result<&[f64], HarnessError> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            other => Err(format_err(format!("expected f64 tensor, found {:?}", other.dtype()))),
        }
    }

    /// Checks the shape against `expected`, then returns the f64 payload.
    pub fn expect_f64(&self, expected: &[usize]) -> Result<&[f64], HarnessError> {
        let want: Vec<u64> = expected.iter().map(|&d| d as u64).collect();
        if self.shape != want {
            return Err(format_err(format!("expected shape {want:?}, found {:?}", self.shape)));
        }
        self.as_f64()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(9 + 8 * self.shape.len() + self.data.len() * dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype.code());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], HarnessError> {
            if cur.len() < n {
                return Err(format_err("truncated tensor file"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let code = take(1)?[0];
        let dtype = DType::from_code(code).ok_or_else(|| format_err(format!("unknown dtype code {code}")))?;
        let ndim = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let count = element_count(&shape).ok_or_else(|| format_err("shape overflows"))?;
        let size = count
            .checked_mul(dtype.size())
            .ok_or_else(|| format_err("payload size overflows"))?;
        let payload = take(size)?;
        if !cur.is_empty() {
            return Err(format_err(format!("{} trailing bytes", cur.len())));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { shape, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, HarnessError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = TensorFile::new(vec![2, 1], TensorData::U8(vec![7, 9])).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"PGTN");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 3);
        assert_eq!(&b[7..9], &[2, 0]);
        assert_eq!(&b[9..17], &2u64.to_le_bytes());
        assert_eq!(&b[17..25], &1u64.to_le_bytes());
        assert_eq!(&b[25..], &[7, 9]);
        assert_eq!(b.len(), 27);
    }

    #[test]
    fn round_trips() {
        let cases = [
            TensorFile::new(vec![3], TensorData::F32(vec![1.5, -0.0, f32::MIN_POSITIVE])).unwrap(),
            TensorFile::new(vec![2, 2], TensorData::F64(vec![0.1, f64::MAX, -3.0, 1e-300])).unwrap(),
            TensorFile::new(vec![0, 5], TensorData::F64(vec![])).unwrap(),
            TensorFile::new(vec![], TensorData::U8(vec![42])).unwrap(),
        ];
        for t in cases {
            assert_eq!(TensorFile::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }

    #[test]
    fn rejects_corruption() {
        let t = TensorFile::from_f64(&[2], vec![1.0, 2.0]).unwrap();
        let b = t.to_bytes();
        assert!(TensorFile::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(TensorFile::from_bytes(&extra).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(TensorFile::from_bytes(&bad).is_err());
        let mut bad = b;
        bad[6] = 9;
        assert!(TensorFile::from_bytes(&bad).is_err());
        assert!(TensorFile::from_f64(&[3], vec![1.0]).is_err());
    }
}
