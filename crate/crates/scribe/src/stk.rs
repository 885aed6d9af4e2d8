//! The STK1 tensor container: magic, version, dtype, rank, u64 extents, f64 payload.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use scribe_core::Tensor;

const MAGIC: &[u8; 4] = b"STK1";
const VERSION: u8 = 1;
const DTYPE_F64_LE: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StkError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not an STK1 container")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unsupported dtype code {0}")]
    Dtype(u8),
    #[error("payload holds {got} bytes, extents need {want}")]
    Truncated { got: usize, want: usize },
    #[error(transparent)]
    Shape(#[from] scribe_core::Error),
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F64_LE, t.ndim() as u8]);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor, StkError> {
    let mut head = [0u8; 7];
    bytes.read_exact(&mut head).map_err(|_| StkError::Magic)?;
    if &head[..4] != MAGIC {
        return Err(StkError::Magic);
    }
    if head[4] != VERSION {
        return Err(StkError::Version(head[4]));
    }
    if head[5] != DTYPE_F64_LE {
        return Err(StkError::Dtype(head[5]));
    }
    let ndim = head[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut e = [0u8; 8];
        bytes.read_exact(&mut e).map_err(|_| StkError::Truncated { got: 0, want: 8 })?;
        shape.push(u64::from_le_bytes(e) as usize);
    }
    let n: usize = shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(StkError::Truncated {
            got: bytes.len(),
            want: 8 * n,
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<(), StkError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode(t))?;
    f.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor, StkError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.5, -0.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..7], &[b'S', b'T', b'K', b'1', 1, 1, 2]);
        assert_eq!(&b[7..15], &2u64.to_le_bytes());
        assert_eq!(b.len(), 7 + 16 + 16);
        let back = decode(&b).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(decode(b"NOPE\x01\x01\x00"), Err(StkError::Magic)));
        let mut b = encode(&Tensor::vector(&[1.0, 2.0]));
        b.pop();
        assert!(matches!(decode(&b), Err(StkError::Truncated { .. })));
        b = encode(&Tensor::vector(&[1.0]));
        b[5] = 2;
        assert!(matches!(decode(&b), Err(StkError::Dtype(2))));
    }
}
