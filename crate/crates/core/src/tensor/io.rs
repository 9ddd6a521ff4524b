//! NDT1 binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "NDT1"
//! 4       2           u16 version = 1
//! 6       1           u8 dtype (0 = f64)
//! 7       1           u8 reserved = 0
//! 8       4           u32 rank
//! 12      8·rank      u64 dims
//! ...     8·numel     f64 payload, row-major
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const NDT1_MAGIC: [u8; 4] = *b"NDT1";
pub const NDT1_VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;

pub fn write_ndt<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(&NDT1_MAGIC)?;
    w.write_all(&NDT1_VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, 0])?;
    let rank = u32::try_from(t.rank()).map_err(|_| Error::Format("rank exceeds u32".into()))?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ndt<R: Read>(mut r: R) -> Result<Tensor> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if header[0..4] != NDT1_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[0..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != NDT1_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    if header[6] != DTYPE_F64 {
        return Err(Error::Format(format!(
            "unsupported dtype code {}",
            header[6]
        )));
    }
    if header[7] != 0 {
        return Err(Error::Format("reserved byte must be 0".into()));
    }
    let rank = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut dims = Vec::with_capacity(rank.min(64));
    let mut buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut buf)?;
        let d = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| Error::Format("dimension exceeds usize".into()))?;
        dims.push(d);
    }
    let shape = super::Shape::new(&dims)?;
    let mut data = Vec::with_capacity(shape.numel());
    for _ in 0..shape.numel() {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Tensor::from_vec(&dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let t = Tensor::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_ndt(&mut buf, &t).unwrap();
        let mut expected = b"NDT1".to_vec();
        expected.extend([1, 0, 0, 0]);
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::zeros(&[2]).unwrap();
        let mut buf = Vec::new();
        write_ndt(&mut buf, &t).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_ndt(&bad[..]), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[6] = 1;
        assert!(matches!(read_ndt(&bad[..]), Err(Error::Format(_))));

        assert!(read_ndt(&buf[..buf.len() - 1]).is_err());

        let mut long = buf.clone();
        long.push(0);
        assert!(read_ndt(&long[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trips_bitwise(dims in proptest::collection::vec(1usize..5, 1..5), seed: u64) {
            let t = Tensor::randn(&mut Rng::new(seed), &dims).unwrap();
            let mut buf = Vec::new();
            write_ndt(&mut buf, &t).unwrap();
            let back = read_ndt(&buf[..]).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
