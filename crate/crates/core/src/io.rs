//! The `GCW1` weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"GCW1"
//! version u32        (currently 1)
//! count   u32
//! entry*  name_len u32, name bytes (UTF-8),
//!         dtype u8   (0 = f32, 1 = f64),
//!         rank u8, extents u64[rank],
//!         payload    product(extents) scalars
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::param::{Param, Parameters};
use crate::real::{DType, Real};

pub const MAGIC: [u8; 4] = *b"GCW1";
pub const VERSION: u32 = 1;

/// Guards against absurd allocations when reading a corrupt header.
const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;

/// One named array. Values are held as f64; `dtype` decides the on-disk width.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Entry {
    pub fn new(name: impl Into<String>, dtype: DType, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Format(format!("entry shape {shape:?} holds {n} values, got {}", values.len())));
        }
        Ok(Entry { name: name.into(), dtype, shape: shape.to_vec(), values })
    }

    pub fn from_param<F: Real>(name: &str, p: &Param<F>) -> Self {
        Entry {
            name: name.to_string(),
            dtype: F::DTYPE,
            shape: p.shape.clone(),
            values: p.value.iter().map(|v| v.to_f64().unwrap()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub entries: Vec<Entry>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Every parameter and buffer of `model`, in visit order.
    pub fn from_model<F: Real, M: Parameters<F> + ?Sized>(model: &M) -> Self {
        let mut entries = Vec::new();
        model.visit("", &mut |name, p| entries.push(Entry::from_param(name, p)));
        WeightFile { entries }
    }

    /// Copies entries into `model` by name. Every model parameter must be
    /// present with the same shape; extra entries are an error too.
    pub fn apply<F: Real, M: Parameters<F> + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut seen = 0;
        let mut err = None;
        model.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                None => err = Some(Error::Format(format!("missing entry {name}"))),
                Some(e) if e.shape != p.shape => {
                    err = Some(Error::Format(format!("entry {name}: shape {:?}, model expects {:?}", e.shape, p.shape)))
                }
                Some(e) => {
                    for (dst, &v) in p.value.iter_mut().zip(&e.values) {
                        *dst = F::from_f64_lossy(v);
                    }
                    seen += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.entries.len() {
            return Err(Error::Format(format!("container has {} entries, model uses {seen}", self.entries.len())));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(len_u32(self.entries.len(), "entry count")?)?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_u32::<LittleEndian>(len_u32(name.len(), "name length")?)?;
            w.write_all(name)?;
            w.write_u8(e.dtype.tag())?;
            if e.shape.len() > MAX_RANK {
                return Err(Error::Format(format!("entry {}: rank {} too large", e.name, e.shape.len())));
            }
            w.write_u8(e.shape.len() as u8)?;
            for &d in &e.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            match e.dtype {
                DType::F32 => {
                    for &v in &e.values {
                        w.write_f32::<LittleEndian>(v as f32)?;
                    }
                }
                DType::F64 => {
                    for &v in &e.values {
                        w.write_f64::<LittleEndian>(v)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version} (expected {VERSION})")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if len > MAX_NAME {
                return Err(Error::Format(format!("name length {len} too large")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let tag = r.read_u8().map_err(truncated)?;
            let dtype =
                DType::from_tag(tag).ok_or_else(|| Error::Format(format!("entry {name}: unknown dtype tag {tag}")))?;
            let rank = r.read_u8().map_err(truncated)? as usize;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("entry {name}: rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.read_u64::<LittleEndian>().map_err(truncated)?;
                shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("entry {name}: extent {d}")))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("entry {name}: extents overflow")))?;
            let mut values = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let v = match dtype {
                    DType::F32 => r.read_f32::<LittleEndian>().map_err(truncated)? as f64,
                    DType::F64 => r.read_f64::<LittleEndian>().map_err(truncated)?,
                };
                values.push(v);
            }
            entries.push(Entry { name, dtype, shape, values });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(WeightFile { entries })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

pub fn save_model<F: Real, M: Parameters<F> + ?Sized>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    WeightFile::from_model(model).save(path)
}

pub fn load_into<F: Real, M: Parameters<F> + ?Sized>(model: &mut M, path: impl AsRef<Path>) -> Result<()> {
    WeightFile::load(path)?.apply(model)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated container".into())
    } else {
        Error::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightFile {
        WeightFile {
            entries: vec![
                Entry::new("a.kernel", DType::F32, &[2, 3], vec![0.5, -1.0, 2.25, 3.0, 0.0, 1e-3_f32 as f64]).unwrap(),
                Entry::new("b", DType::F64, &[], vec![std::f64::consts::PI]).unwrap(),
                Entry::new("empty", DType::F64, &[0, 4], vec![]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GCW1");
        assert_eq!(WeightFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn header_bytes() {
        let f = WeightFile { entries: vec![Entry::new("x", DType::F64, &[1], vec![1.0]).unwrap()] };
        let b = f.to_bytes().unwrap();
        let mut want = b"GCW1".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.push(b'x');
        want.push(1);
        want.push(1);
        want.extend(1u64.to_le_bytes());
        want.extend(1.0f64.to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn rejects_version_and_truncation() {
        let mut b = sample().to_bytes().unwrap();
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(WeightFile::from_bytes(&v2), Err(Error::Format(m)) if m.contains("version 2")));
        b.truncate(b.len() - 3);
        assert!(matches!(WeightFile::from_bytes(&b), Err(Error::Format(m)) if m.contains("truncated")));
        assert!(WeightFile::from_bytes(b"GCW0").is_err());
    }
}
