//! Flat binary parameter container.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "SPRB1" | count | count × (name_len | name utf-8 | rank | rank × dim | values as f32 LE)
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 5] = b"SPRB1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_params(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.num_values() * 4);
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, store.len())?;
    for (_, p) in store.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.rank())?;
        for &d in p.tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: "<parameter container>".into(),
                message: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let bad = |message: String| Error::Format {
        path: "<parameter container>".into(),
        message,
    };
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(5)? != PARAMS_MAGIC {
        return Err(bad("missing SPRB1 header".into()));
    }
    let count = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| bad(format!("parameter name is not utf-8: {e}")))?
            .to_string();
        let rank = cur.u32()?;
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(store)
}

pub fn write_params(store: &ParamStore<f32>, mut w: impl Write) -> Result<()> {
    let bytes = encode_params(store)?;
    w.write_all(&bytes)
        .map_err(|e| Error::io("<parameter container>", e))
}

pub fn read_params(mut r: impl Read) -> Result<ParamStore<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<parameter container>", e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40),
            rows in 1usize..4,
        ) {
            let cols = values.len().div_ceil(rows);
            let mut data = values.clone();
            data.resize(rows * cols, 0.5);
            let mut store = ParamStore::new();
            store.add("embed.src", Tensor::matrix(rows, cols, data).unwrap()).unwrap();
            store.add("b", Tensor::vector(values).unwrap()).unwrap();
            let bytes = encode_params(&store).unwrap();
            let back = decode_params(&bytes).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.tensor.shape(), b.tensor.shape());
                let ab: Vec<u32> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(1, 2, vec![1.0f32, -2.0]).unwrap()).unwrap();
        let bytes = encode_params(&store).unwrap();
        let mut expected = b"SPRB1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'w');
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode_params(b"SPRR1\0\0\0\0").is_err());
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0f32)).unwrap();
        let bytes = encode_params(&store).unwrap();
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
    }
}
