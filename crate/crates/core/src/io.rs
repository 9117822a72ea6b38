//! Binary feature files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   "HHCL"        4 bytes
//! version u32 = 1
//! count   u64           N
//! dim     u32           D_in
//! N × [ D_in × f32 feature | i64 identity | u32 camera ]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{common_dim, Sample};

pub const FEATURE_MAGIC: &[u8; 4] = b"HHCL";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 4 + 4 + 8 + 4;

/// Size in bytes of one record with `dim` features.
pub fn record_len(dim: usize) -> usize {
    dim * 4 + 8 + 4
}

pub fn write_features<W: Write>(samples: &[Sample], mut w: W) -> Result<()> {
    let dim = common_dim(samples)?.unwrap_or(0);
    let dim_u32 = u32::try_from(dim)
        .map_err(|_| Error::Validation(format!("feature dimension {dim} too large")))?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    w.write_all(&dim_u32.to_le_bytes())?;
    for s in samples {
        for v in &s.feature {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&s.identity.to_le_bytes())?;
        w.write_all(&s.camera.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Vec<Sample>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r).map_err(|_| Error::Format("truncated header".into()))?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r).map_err(|_| Error::Format("truncated header".into()))?;
    let dim = read_u32(&mut r).map_err(|_| Error::Format("truncated header".into()))? as usize;

    let mut samples = Vec::new();
    let mut buf = vec![0u8; record_len(dim)];
    for i in 0..count {
        r.read_exact(&mut buf)?;
        let (feat_bytes, tail) = buf.split_at(dim * 4);
        let feature: Vec<f32> = feat_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "record {i} has a non-finite feature"
            )));
        }
        let identity = i64::from_le_bytes(tail[..8].try_into().unwrap());
        let camera = u32::from_le_bytes(tail[8..12].try_into().unwrap());
        samples.push(Sample {
            feature,
            identity,
            camera,
        });
    }
    Ok(samples)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_features(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    // validate before touching the filesystem
    common_dim(samples)?;
    let file = File::create(path)?;
    write_features(samples, BufWriter::new(file))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let file = File::open(path)?;
    read_features(BufReader::new(file))
}
