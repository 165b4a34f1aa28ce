//! Flat binary bundles of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TCFTTNSR"
//! version  u32      1
//! count    u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank, values f64 × Π dims }
//! ```
//!
//! Entries keep insertion order, so writing a bundle that was just read
//! reproduces the original bytes.

use std::io::{Read, Write};

use super::{numel, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TCFTTNSR";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_bundle<W: Write>(mut w: W, entries: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(entries.len()).map_err(Error::contract)?.to_le_bytes())?;
    for entry in entries {
        let name = entry.name.as_bytes();
        w.write_all(&u32::try_from(name.len()).map_err(Error::contract)?.to_le_bytes())?;
        w.write_all(name)?;
        let shape = entry.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(entry.tensor.len() * 8);
        for v in entry.tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
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

pub fn read_bundle<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a tensor bundle (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, values)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bundle_round_trip_is_byte_identical(
            dims in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n = numel(&dims);
            let values: Vec<f64> = (0..n).map(|i| ((seed as f64) * 1e-3 + i as f64).sin()).collect();
            let entries = vec![
                NamedTensor { name: "a.w".into(), tensor: Tensor::new(dims.clone(), values).unwrap() },
                NamedTensor { name: "b".into(), tensor: Tensor::scalar(-0.0) },
            ];
            let mut bytes = Vec::new();
            write_bundle(&mut bytes, &entries).unwrap();
            let back = read_bundle(bytes.as_slice()).unwrap();
            let mut again = Vec::new();
            write_bundle(&mut again, &back).unwrap();
            prop_assert_eq!(bytes, again);
            prop_assert_eq!(back[0].tensor.shape(), dims.as_slice());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_bundle(&b"NOTATENSxxxxxxxx"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
