//! Self-describing binary tensor files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes   "USBL"
//! version    u32       currently 1
//! dtype      u8        0 = little-endian f32
//! ndim       u32       1..=4
//! dims       ndim * u64
//! payload    product(dims) * 4 bytes, row-major f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"USBL";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;
pub const MAX_NDIM: usize = 4;

fn check_dims(dims: &[u64]) -> Result<u64> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "ndim must be between 1 and 4",
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "every dim must be >= 1",
        });
    }
    dims.iter().try_fold(1u64, |acc, &d| {
        acc.checked_mul(d).ok_or(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "element count overflows u64",
        })
    })
}

/// Writes one tensor record to `w`. The stream is left positioned directly
/// after the payload, so records can be concatenated.
pub fn write_tensor_to<W: Write>(w: &mut W, dims: &[u64], values: &[f32]) -> Result<()> {
    let numel = check_dims(dims)?;
    if numel != values.len() as u64 {
        return Err(Error::InvalidDims {
            dims: dims.to_vec(),
            reason: "value count does not match product(dims)",
        });
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32_LE])?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor record from `r`, leaving the stream positioned after the
/// payload.
pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<(Vec<u64>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_truncated(r, &mut u32buf, "header")?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut dtype = [0u8; 1];
    read_exact_or_truncated(r, &mut dtype, "header")?;
    if dtype[0] != DTYPE_F32_LE {
        return Err(Error::DtypeMismatch {
            found: dtype[0],
            expected: DTYPE_F32_LE,
        });
    }
    read_exact_or_truncated(r, &mut u32buf, "header")?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::InvalidDims {
            dims: vec![],
            reason: "ndim must be between 1 and 4",
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        read_exact_or_truncated(r, &mut u64buf, "header")?;
        dims.push(u64::from_le_bytes(u64buf));
    }
    let numel = check_dims(&dims)?;
    let payload_bytes = numel
        .checked_mul(4)
        .ok_or(Error::InvalidDims {
            dims: dims.clone(),
            reason: "payload size overflows u64",
        })?;
    let mut payload = vec![0u8; payload_bytes as usize];
    let mut filled = 0usize;
    while filled < payload.len() {
        let n = r.read(&mut payload[filled..])?;
        if n == 0 {
            return Err(Error::TruncatedPayload {
                expected: payload_bytes,
                found: filled as u64,
            });
        }
        filled += n;
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, values))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], _what: &str) -> Result<()> {
    let mut filled = 0usize;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::TruncatedPayload {
                expected: buf.len() as u64,
                found: filled as u64,
            });
        }
        filled += n;
    }
    Ok(())
}

pub fn write_tensor<P: AsRef<Path>>(path: P, dims: &[u64], values: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, dims, values)?;
    w.flush()?;
    Ok(())
}

/// Reads a file holding exactly one tensor record.
pub fn read_tensor<P: AsRef<Path>>(path: P) -> Result<(Vec<u64>, Vec<f32>)> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.into() },
        _ => Error::Io(e),
    })?);
    let out = read_tensor_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::TrailingBytes { path: path.into() });
    }
    Ok(out)
}
