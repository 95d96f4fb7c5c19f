//! `CTNS` v1 binary tensors: magic, u32 version, u32 rank, u64 extents, then
//! interleaved little-endian f64 `(re, im)` pairs in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::{ComplexTensor, C64};
use crate::error::{ensure, Error, Result};

pub const CTNS_MAGIC: &[u8; 4] = b"CTNS";
pub const CTNS_VERSION: u32 = 1;

pub fn write_ctns<W: Write>(mut w: W, x: &ComplexTensor) -> Result<()> {
    w.write_all(CTNS_MAGIC)?;
    w.write_all(&CTNS_VERSION.to_le_bytes())?;
    w.write_all(&(x.rank() as u32).to_le_bytes())?;
    for &e in x.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(16 * x.len());
    for v in x.data() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
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

/// Reads a tensor; entries are not required to be finite.
pub fn read_ctns<R: Read>(mut r: R) -> Result<ComplexTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    ensure!(&magic == CTNS_MAGIC, Format, "bad magic {magic:?}");
    let version = read_u32(&mut r)?;
    ensure!(version == CTNS_VERSION, Format, "unsupported CTNS version {version}");
    let rank = read_u32(&mut r)? as usize;
    ensure!((1..=16).contains(&rank), Format, "implausible rank {rank}");
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = read_u64(&mut r)?;
        ensure!(e > 0, Format, "zero extent");
        shape.push(usize::try_from(e).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n <= (1 << 32))
        .ok_or_else(|| Error::Format("tensor too large".into()))?;
    let mut bytes = vec![0u8; 16 * len];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(ComplexTensor::from_parts_unchecked(shape, data))
}

pub fn write_ctns_file(path: impl AsRef<Path>, x: &ComplexTensor) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_ctns(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn read_ctns_file(path: impl AsRef<Path>) -> Result<ComplexTensor> {
    let f = std::fs::File::open(path)?;
    read_ctns(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let x = ComplexTensor::new(vec![2, 1], vec![C64::new(1.0, -2.0), C64::new(0.5, 0.0)]).unwrap();
        let mut buf = Vec::new();
        write_ctns(&mut buf, &x).unwrap();
        assert_eq!(&buf[..4], b"CTNS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 4 + 4 + 4 + 16 + 32);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), -2.0);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_ctns(&b"NOPE\x01\0\0\0"[..]).is_err());
        let x = ComplexTensor::zeros(&[3]);
        let mut buf = Vec::new();
        write_ctns(&mut buf, &x).unwrap();
        assert!(read_ctns(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in prop::collection::vec(1usize..5, 1..4),
            bits in prop::collection::vec(any::<u64>(), 128),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<C64> = (0..n)
                .map(|i| C64::new(f64::from_bits(bits[2 * i % 128]), f64::from_bits(bits[(2 * i + 1) % 128])))
                .collect();
            let x = ComplexTensor::from_parts_unchecked(shape, data);
            let mut buf = Vec::new();
            write_ctns(&mut buf, &x).unwrap();
            let y = read_ctns(&buf[..]).unwrap();
            prop_assert_eq!(x.shape(), y.shape());
            for (a, b) in x.data().iter().zip(y.data()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }
}
