//! The `NSTW` weight file.
//!
//! Little-endian layout:
//!
//! ```text
//! "NSTW"  u32 version=1  u32 entry_count
//! entry_count × { u16 name_len, name (UTF-8), u8 dtype (0 = f32), u8 ndim, u32 dims[ndim], data }
//! 3 × f32 channel means
//! ```
//!
//! Each conv layer stores its weight under the layer name. A bias, when
//! present, is a rank-1 entry named `<layer>.bias`; a missing bias is zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: [u8; 4] = *b"NSTW";
pub const WEIGHT_VERSION: u32 = 1;
pub(crate) const BIAS_SUFFIX: &str = ".bias";
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFile {
    pub entries: Vec<WeightEntry>,
    pub channel_means: [f64; 3],
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_weight_file(path: impl AsRef<Path>) -> Result<WeightFile> {
    let mut r = BufReader::new(File::open(path)?);
    decode(&mut r)
}

pub(crate) fn decode(r: &mut impl Read) -> Result<WeightFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != WEIGHT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"NSTW\""
        )));
    }
    let version = read_u32(r)?;
    if version != WEIGHT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = read_u16(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let dtype = read_u8(r)?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!(
                "entry `{name}` has unsupported dtype {dtype}"
            )));
        }
        let ndim = read_u8(r)? as usize;
        if ndim == 0 {
            return Err(Error::Format(format!("entry `{name}` has rank 0")));
        }
        let dims = (0..ndim)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Format(format!("entry `{name}` has invalid dims {dims:?}")))?;
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor =
            Tensor::new(dims, data).map_err(|e| Error::Format(format!("entry `{name}`: {e}")))?;
        entries.push(WeightEntry { name, tensor });
    }
    let channel_means = [
        read_f32(r)? as f64,
        read_f32(r)? as f64,
        read_f32(r)? as f64,
    ];
    Ok(WeightFile {
        entries,
        channel_means,
    })
}

pub fn write_weight_file(path: impl AsRef<Path>, file: &WeightFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode(&mut w, file)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn encode(w: &mut impl Write, file: &WeightFile) -> Result<()> {
    w.write_all(&WEIGHT_MAGIC)?;
    w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    w.write_all(&(file.entries.len() as u32).to_le_bytes())?;
    for entry in &file.entries {
        let name = entry.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Format("entry name too long".into()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[DTYPE_F32, entry.tensor.shape().len() as u8])?;
        for &d in entry.tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in entry.tensor.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    for m in file.channel_means {
        w.write_all(&(m as f32).to_le_bytes())?;
    }
    Ok(())
}
