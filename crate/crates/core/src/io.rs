//! Raw tensor files: `u64` rank, `u64` dims, then `f64` data, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_RANK: u64 = 8;

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_raw_tensor<R: Read>(mut r: R) -> Result<Tensor<f64>> {
    let rank = read_u64(&mut r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::InvalidArgument(format!("raw tensor rank {rank} outside 1..={MAX_RANK}")));
    }
    let dims = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n <= (1 << 28))
        .ok_or_else(|| Error::InvalidArgument(format!("raw tensor dims {dims:?} are empty or too large")))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::InvalidArgument(format!("trailing bytes after {len} values")));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(dims, data)
}

pub fn write_raw_tensor<W: Write>(t: &Tensor<f64>, mut w: W) -> Result<()> {
    w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Loads an image tensor and brings it to `[1, C, H, W]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let t = read_raw_tensor(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let dims = match t.shape() {
        [c, h, w] => vec![1, *c, *h, *w],
        [1, c, h, w] => vec![1, *c, *h, *w],
        s => return Err(Error::InvalidArgument(format!("image must be [C, H, W] or [1, C, H, W], got {s:?}"))),
    };
    if !t.all_finite() {
        return Err(Error::InvalidArgument("image contains non-finite values".into()));
    }
    Tensor::new(dims, t.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.25, 1e-300, f64::MAX, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_raw_tensor(&t, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (1 + 2 + 6));
        assert_eq!(read_raw_tensor(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let t = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_raw_tensor(&t, &mut buf).unwrap();
        assert!(read_raw_tensor(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_raw_tensor(buf.as_slice()).is_err());
        assert!(read_raw_tensor(&0u64.to_le_bytes()[..]).is_err());
    }
}
