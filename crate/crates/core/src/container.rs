//! On-disk array container used for dataset shards, cached features and
//! training checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"AEDD"
//! version u32
//! meta    u32 length + JSON bytes (unknown fields are ignored on read)
//! count   u32 number of arrays, then per array:
//!   name  u16 length + UTF-8 bytes
//!   dtype u8 (1 = f64, 2 = f32, 3 = u8)
//!   ndim  u8, dims as u64 each
//!   data  raw little-endian values
//!   crc   u32 CRC32 of the data bytes
//! ```

use crate::{Error, Real, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"AEDD";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;
const DTYPE_U8: u8 = 3;

/// A named array inside a container.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn from_reals(name: impl Into<String>, shape: Vec<usize>, values: &[Real]) -> Self {
        #[cfg(not(feature = "single-precision"))]
        let data = ArrayData::F64(values.to_vec());
        #[cfg(feature = "single-precision")]
        let data = ArrayData::F32(values.to_vec());
        NamedArray { name: name.into(), shape, data }
    }

    pub fn from_bytes(name: impl Into<String>, shape: Vec<usize>, values: Vec<u8>) -> Self {
        NamedArray { name: name.into(), shape, data: ArrayData::U8(values) }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Values widened/narrowed to the build precision.
    pub fn to_reals(&self) -> Vec<Real> {
        match &self.data {
            ArrayData::F64(v) => v.iter().map(|&x| x as Real).collect(),
            ArrayData::F32(v) => v.iter().map(|&x| x as Real).collect(),
            ArrayData::U8(v) => v.iter().map(|&x| x as Real).collect(),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            ArrayData::U8(v) => Ok(v),
            _ => Err(Error::format(format!("array '{}' is not u8", self.name))),
        }
    }
}

/// Self-describing container: a JSON metadata header plus named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Container { meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(format!("container has no array '{name}'")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::format(format!("metadata serialization: {e}")))?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            let name = a.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            let (dtype, bytes) = encode_data(&a.data);
            if a.numel() != data_len(&a.data) {
                return Err(Error::format(format!(
                    "array '{}' shape {:?} does not match {} values",
                    a.name,
                    a.shape,
                    data_len(&a.data)
                )));
            }
            w.write_all(&[dtype, a.shape.len() as u8])?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&bytes)?;
            w.write_all(&crc32fast::hash(&bytes).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic bytes, not a container file"));
        }
        let version = read_u32(r)?;
        if version > FORMAT_VERSION {
            return Err(Error::format(format!(
                "container version {version} newer than supported {FORMAT_VERSION}"
            )));
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact(r, &mut meta_bytes)?;
        let meta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::format(format!("metadata parse: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(r, &mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("array name is not UTF-8"))?;
            let mut head = [0u8; 2];
            read_exact(r, &mut head)?;
            let (dtype, ndim) = (head[0], head[1] as usize);
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let width = match dtype {
                DTYPE_F64 => 8,
                DTYPE_F32 => 4,
                DTYPE_U8 => 1,
                other => return Err(Error::format(format!("unknown dtype tag {other}"))),
            };
            let mut bytes = vec![0u8; numel * width];
            read_exact(r, &mut bytes)?;
            let stored_crc = read_u32(r)?;
            let actual_crc = crc32fast::hash(&bytes);
            if stored_crc != actual_crc {
                return Err(Error::format(format!(
                    "array '{name}' CRC mismatch: stored {stored_crc:#010x}, actual {actual_crc:#010x}"
                )));
            }
            let data = decode_data(dtype, &bytes);
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Container { meta, arrays })
    }
}

fn encode_data(data: &ArrayData) -> (u8, Vec<u8>) {
    match data {
        ArrayData::F64(v) => {
            let mut bytes = Vec::with_capacity(v.len() * 8);
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            (DTYPE_F64, bytes)
        }
        ArrayData::F32(v) => {
            let mut bytes = Vec::with_capacity(v.len() * 4);
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            (DTYPE_F32, bytes)
        }
        ArrayData::U8(v) => (DTYPE_U8, v.clone()),
    }
}

fn decode_data(dtype: u8, bytes: &[u8]) -> ArrayData {
    match dtype {
        DTYPE_F64 => ArrayData::F64(
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DTYPE_F32 => ArrayData::F32(
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        _ => ArrayData::U8(bytes.to_vec()),
    }
}

fn data_len(data: &ArrayData) -> usize {
    match data {
        ArrayData::F64(v) => v.len(),
        ArrayData::F32(v) => v.len(),
        ArrayData::U8(v) => v.len(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("truncated container file")
        } else {
            Error::Io(e)
        }
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new(json!({"kind": "test", "seed": 7}));
        c.push(NamedArray::from_reals("weights", vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        c.push(NamedArray::from_bytes("labels", vec![4], vec![0, 1, 1, 0]));
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let mut buf1 = Vec::new();
        c.write_to(&mut buf1).unwrap();
        let loaded = Container::read_from(&mut buf1.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        loaded.write_to(&mut buf2).unwrap();
        assert_eq!(buf1, buf2);
        assert_eq!(loaded.get("weights").unwrap().to_reals(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(loaded.get("labels").unwrap().as_u8().unwrap(), &[0, 1, 1, 0]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        for cut in [3, 10, buf.len() - 1] {
            let err = Container::read_from(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corrupted_data_fails_crc() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        // Flip a bit inside the last array's data region (before its CRC).
        let offset = buf.len() - 6;
        buf[offset] ^= 0x01;
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn unknown_meta_fields_are_ignored() {
        let mut c = sample();
        c.meta = json!({"kind": "test", "future_field": [1, 2, 3]});
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let loaded = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.meta["kind"], "test");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(matches!(Container::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
