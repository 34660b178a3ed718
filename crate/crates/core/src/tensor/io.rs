//! Named-array container: the binary tensor encoding used inside checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"RNAC"
//! u32    container version (1)
//! u32    array count
//! per array:
//!   u32  name length, then UTF-8 name bytes
//!   u8   dtype tag (0 = f64, 1 = f32)
//!   u32  ndim, then ndim × u64 dims
//!   raw  little-endian element data
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RNAC";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

pub fn write_arrays<W: Write>(w: &mut W, arrays: &[(&str, &Tensor)], dtype: Dtype) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, t) in arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dtype as u8])?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        match dtype {
            Dtype::F64 => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            Dtype::F32 => t.data().iter().for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_arrays<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data("not a named-array container (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported container version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::data("array name is not UTF-8"))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = match tag[0] {
            0 => {
                let mut raw = vec![0u8; numel * 8];
                r.read_exact(&mut raw)?;
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            }
            1 => {
                let mut raw = vec![0u8; numel * 4];
                r.read_exact(&mut raw)?;
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
            t => return Err(Error::data(format!("array {name}: unknown dtype tag {t}"))),
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let a = Tensor::new(&[2, 3], vec![0.1, -2.5, 1e-300, 3.0, f64::MAX, 7.0]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[("a", &a), ("layer.0.w", &b)], Dtype::F64).unwrap();
        let back = read_arrays(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "layer.0.w");
        assert_eq!(back[1].1, b);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_arrays(&mut &b"XXXX\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
