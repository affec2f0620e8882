//! Binary tensor records.
//!
//! Each record is: name length (u32), UTF-8 name, dtype tag (u8), rank
//! (u32), dimensions (u64 each), then the little-endian payload. All
//! integers are little-endian. Files that hold records append a CRC-32 of
//! everything before it.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

pub fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[DTYPE_F64])?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
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

pub fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(Error::Checkpoint(format!("tensor name length {name_len} is implausible")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let data = match tag[0] {
        DTYPE_F64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
        DTYPE_F32 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect()
        }
        other => return Err(Error::Checkpoint(format!("tensor `{name}` has unknown dtype tag {other}"))),
    };
    Ok((name, Tensor::new(&shape, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_is_bit_exact() {
        let t = Tensor::new(&[2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, "block.0.w", &t).unwrap();
        let (name, back) = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(name, "block.0.w");
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_record_fails() {
        let t = Tensor::zeros(&[4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, "x", &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
