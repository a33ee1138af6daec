//! CKS1 dataset files: the magic `CKS1`, little-endian `u32` sample count,
//! coils, rows and columns, then each sample as interleaved little-endian
//! `f64` (re, im) pairs in coil-major, row-major order.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{KGrid, Shape};
use crate::error::{Error, Result};

pub const CKS1_MAGIC: &[u8; 4] = b"CKS1";

pub fn write_cks1<W: Write>(mut out: W, samples: &[KGrid]) -> Result<()> {
    let shape = match samples.first() {
        Some(k) => k.shape(),
        None => return Err(Error::InvalidInput("CKS1 needs at least one sample".into())),
    };
    if let Some(bad) = samples.iter().find(|k| k.shape() != shape) {
        return Err(Error::shape(shape, bad.shape()));
    }
    let header_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} does not fit in u32")))
    };
    out.write_all(CKS1_MAGIC)?;
    for v in [samples.len(), shape.coils, shape.rows, shape.cols] {
        out.write_all(&header_u32(v)?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(shape.len() * 16);
    for k in samples {
        buf.clear();
        for z in k.as_slice() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cks1<R: Read>(mut input: R) -> Result<Vec<KGrid>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CKS1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut header = [0usize; 4];
    for v in header.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b) as usize;
    }
    let [count, coils, rows, cols] = header;
    let shape = Shape::new(coils, rows, cols);
    if shape.is_empty() {
        return Err(Error::Format(format!("empty sample shape {shape:?}")));
    }
    let mut bytes = vec![0u8; shape.len() * 16];
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated sample data".into()),
            _ => Error::Io(e),
        })?;
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        samples.push(KGrid::from_vec(shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last sample".into()));
    }
    Ok(samples)
}
