//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   b"FEDSIMCK"
//! version      u32       1
//! n_segments   u32
//! n_segments × {
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rows       u64
//!   cols       u64
//! }
//! n_values     u64       sum of rows*cols
//! values       n_values × f64, flat layout order (row-major per tensor)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::params::{Layout, ParamVector};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"FEDSIMCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, params: &ParamVector<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let segs = params.layout().segments();
    w.write_all(&(segs.len() as u32).to_le_bytes())?;
    for s in segs {
        w.write_all(&(s.name.len() as u32).to_le_bytes())?;
        w.write_all(s.name.as_bytes())?;
        w.write_all(&(s.rows as u64).to_le_bytes())?;
        w.write_all(&(s.cols as u64).to_le_bytes())?;
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ParamVector<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a fedsim checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n_segments = read_u32(&mut r)?;
    let mut layout = Layout::new();
    for _ in 0..n_segments {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        layout.push(name, rows, cols);
    }
    let n_values = read_u64(&mut r)? as usize;
    if n_values != layout.len() {
        return Err(Error::Format(format!(
            "header describes {} values, file declares {n_values}",
            layout.len()
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let x = f64::from_le_bytes(b);
        if !x.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        values.push(T::of(x));
    }
    ParamVector::new(Arc::new(layout), values)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, params: &ParamVector<T>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamVector<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
