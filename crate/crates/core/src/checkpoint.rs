//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CENCKPT"            7 bytes magic
//! version              u32
//! entry count          u32
//! per entry:
//!   name length        u32
//!   name               UTF-8 bytes
//!   rank               u32
//!   dims               rank × u64
//!   values             product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"CENCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, entry) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = entry.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in entry.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
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

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_params(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let f = std::fs::File::open(path)?;
    read_params(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..3), any::<u64>()), 1..5)
        ) {
            let mut ps = ParamStore::new();
            for (i, (shape, seed)) in entries.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n as u64)
                    .map(|k| f64::from_bits(seed.wrapping_mul(k + 1) & 0x7FEF_FFFF_FFFF_FFFF))
                    .collect();
                ps.insert(format!("p{i}"), Tensor::new(shape.clone(), data).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_params(&mut buf, &ps).unwrap();
            let back = read_params(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), ps.len());
            for ((n1, e1), (n2, e2)) in ps.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(e1.value.shape(), e2.value.shape());
                let b1: Vec<u64> = e1.value.data().iter().map(|x| x.to_bits()).collect();
                let b2: Vec<u64> = e2.value.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn header_layout() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &ps).unwrap();
        assert_eq!(&buf[..7], b"CENCKPT");
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[11..15].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 7 + 4 + 4 + 4 + 1 + 4 + 16 + 16);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTACKPT\0\0\0\0".to_vec();
        assert!(matches!(read_params(&buf[..]), Err(Error::Checkpoint(_))));
    }
}
