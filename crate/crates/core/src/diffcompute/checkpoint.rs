//! Versioned binary container for parameters, optimizer state and raw blobs.
//!
//! All integers are little-endian. Strings are a `u32` byte length followed
//! by UTF-8. A tensor header is `u32 ndim` then `ndim` `u32` dimensions.
//!
//! ```text
//! magic      8 bytes  "RCACCKPT"
//! version    u32      1
//! metadata   u32 count, then count x (key: str, value: str)
//! sets       u32 count, then count x
//!              name: str, u32 entries, then entries x
//!                name: str, tensor header, step: u64,
//!                value: f32[n], first moment: f32[n], second moment: f32[n]
//! banks      u32 count, then count x
//!              name: str, u32 entries, then entries x
//!                name: str, tensor header, step: u64,
//!                first moment: f32[n], second moment: f32[n]
//! blobs      u32 count, then count x (name: str, u64 length, bytes)
//! trailer    8 bytes  "RCACEND\0"
//! ```
//!
//! Gradient buffers are not stored; they load as zeros.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcompute::{MomentBank, Moments, ParamEntry, ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RCACCKPT";
pub const TRAILER: &[u8; 8] = b"RCACEND\0";
pub const VERSION: u32 = 1;

const MAX_NDIM: usize = 8;
const MAX_STRING: usize = 1 << 20;

/// In-memory form of a checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub param_sets: BTreeMap<String, ParameterSet<f32>>,
    pub moment_banks: BTreeMap<String, MomentBank<f32>>,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn param_set(&self, name: &str) -> Result<&ParameterSet<f32>> {
        self.param_sets
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no parameter set '{name}'")))
    }

    pub fn moment_bank(&self, name: &str) -> Result<&MomentBank<f32>> {
        self.moment_banks
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no moment bank '{name}'")))
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Format(format!("checkpoint has no blob '{name}'")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;

        put_u32(w, count(self.metadata.len())?)?;
        for (k, v) in &self.metadata {
            put_str(w, k)?;
            put_str(w, v)?;
        }

        put_u32(w, count(self.param_sets.len())?)?;
        for (name, set) in &self.param_sets {
            put_str(w, name)?;
            put_u32(w, count(set.len())?)?;
            for (pname, e) in set.iter() {
                put_str(w, pname)?;
                put_shape(w, e.value.shape())?;
                put_u64(w, e.moments.step)?;
                put_f32s(w, e.value.data())?;
                put_f32s(w, e.moments.first.data())?;
                put_f32s(w, e.moments.second.data())?;
            }
        }

        put_u32(w, count(self.moment_banks.len())?)?;
        for (name, bank) in &self.moment_banks {
            put_str(w, name)?;
            put_u32(w, count(bank.len())?)?;
            for (pname, m) in bank.iter() {
                put_str(w, pname)?;
                put_shape(w, m.first.shape())?;
                put_u64(w, m.step)?;
                put_f32s(w, m.first.data())?;
                put_f32s(w, m.second.data())?;
            }
        }

        put_u32(w, count(self.blobs.len())?)?;
        for (name, bytes) in &self.blobs {
            put_str(w, name)?;
            put_u64(w, bytes.len() as u64)?;
            w.write_all(bytes)?;
        }

        w.write_all(TRAILER)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut out = Container::new();

        for _ in 0..get_u32(r)? {
            let k = get_str(r)?;
            let v = get_str(r)?;
            out.metadata.insert(k, v);
        }

        for _ in 0..get_u32(r)? {
            let name = get_str(r)?;
            let mut set = ParameterSet::new();
            for _ in 0..get_u32(r)? {
                let pname = get_str(r)?;
                let shape = get_shape(r)?;
                let n = shape.iter().product();
                let step = get_u64(r)?;
                let value = Tensor::new(shape.clone(), get_f32s(r, n)?)?;
                let first = Tensor::new(shape.clone(), get_f32s(r, n)?)?;
                let second = Tensor::new(shape.clone(), get_f32s(r, n)?)?;
                let entry = ParamEntry {
                    value,
                    grad: Tensor::zeros(&shape),
                    moments: Moments { first, second, step },
                };
                set.insert_entry(pname, entry)?;
            }
            out.param_sets.insert(name, set);
        }

        for _ in 0..get_u32(r)? {
            let name = get_str(r)?;
            let mut bank = MomentBank::new();
            for _ in 0..get_u32(r)? {
                let pname = get_str(r)?;
                let shape = get_shape(r)?;
                let n = shape.iter().product();
                let step = get_u64(r)?;
                let first = Tensor::new(shape.clone(), get_f32s(r, n)?)?;
                let second = Tensor::new(shape, get_f32s(r, n)?)?;
                bank.insert(pname, Moments { first, second, step });
            }
            out.moment_banks.insert(name, bank);
        }

        for _ in 0..get_u32(r)? {
            let name = get_str(r)?;
            let len = usize::try_from(get_u64(r)?)
                .map_err(|_| Error::Format("blob length overflows".into()))?;
            let mut bytes = Vec::new();
            r.by_ref().take(len as u64).read_to_end(&mut bytes)?;
            if bytes.len() != len {
                return Err(Error::Format(format!("blob '{name}' truncated")));
            }
            out.blobs.insert(name, bytes);
        }

        let mut trailer = [0u8; 8];
        r.read_exact(&mut trailer)?;
        if &trailer != TRAILER {
            return Err(Error::Format("checkpoint trailer missing".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn count(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("section too large ({n})")))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, count(s.len())?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_shape<W: Write>(w: &mut W, shape: &[usize]) -> Result<()> {
    put_u32(w, count(shape.len())?)?;
    for &d in shape {
        put_u32(w, count(d)?)?;
    }
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > MAX_STRING {
        return Err(Error::Format(format!("string length {len} implausible")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("string is not UTF-8".into()))
}

fn get_shape<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let ndim = get_u32(r)? as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("tensor rank {ndim} unsupported")));
    }
    (0..ndim).map(|_| get_u32(r).map(|d| d as usize)).collect()
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    r.by_ref().take(n as u64 * 4).read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::Format("tensor data truncated".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
