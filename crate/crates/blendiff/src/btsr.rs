//! BTSR binary tensor files.
//!
//! Layout: magic `BTSR`, u32 version (1), u32 rank, u64 dims[rank],
//! little-endian f32 payload in row-major order. Used for feature
//! ingestion and parameter checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BTSR";
const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::FormatError("truncated BTSR header".into()))?;
    if &magic != MAGIC {
        return Err(Error::FormatError(format!(
            "bad magic {:?}, expected BTSR",
            magic
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::FormatError(format!(
            "unsupported BTSR version {version}"
        )));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::FormatError(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::FormatError("truncated BTSR dims".into()))?;
        shape.push(u64::from_le_bytes(buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 4];
    for _ in 0..numel {
        r.read_exact(&mut buf)
            .map_err(|_| Error::FormatError("truncated BTSR payload".into()))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    Ok(Tensor::new(shape, data))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::FormatError("truncated BTSR header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load(path: &Path) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity_for_f32_exact_values() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 0.5, -1.25, 3.0, 1024.0, -0.0078125]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::scalar(1.0)).unwrap();
        buf[0] = b'X';
        match read_tensor(&mut buf.as_slice()) {
            Err(Error::FormatError(_)) => {}
            other => panic!("expected FormatError, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::new(vec![4], vec![1.0; 4])).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn preserves_shape() {
        let t = Tensor::zeros(vec![3, 4, 5]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[3, 4, 5]);
    }
}
