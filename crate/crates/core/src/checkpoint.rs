//! Checkpoint codec: byte-level only, so it works without any IO.
//!
//! Layout: magic `QCN1`, then per-parameter records in registry (name)
//! order. Each record is `u32 name length, name bytes, u32 rank, u32
//! extents..., f32 little-endian values`. Round trips are bit-exact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"QCN1";

pub fn encode(params: &[Param]) -> Vec<u8> {
    let payload: usize = params
        .iter()
        .map(|p| 4 + p.name.len() + 4 + 4 * p.value.shape().len() + 4 * p.value.numel())
        .sum();
    let mut out = Vec::with_capacity(4 + payload);
    out.extend_from_slice(MAGIC);
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "truncated checkpoint: needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("bad checkpoint magic (expected QCN1)"));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name_bytes = r.take(name_len, "name")?;
        let name = core::str::from_utf8(name_bytes)
            .map_err(|_| Error::format("parameter name is not valid UTF-8"))?
            .into();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, "values")?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = vec![
            Param {
                name: "a.weight".to_string(),
                value: Tensor::from_vec(&[2, 2], vec![1.5f32, -0.25, 3.0e-8, f32::MIN_POSITIVE])
                    .unwrap(),
            },
            Param { name: "b.bias".to_string(), value: Tensor::zeros(&[3]) },
        ];
        let bytes = encode(&params);
        let decoded = decode(&bytes).unwrap();
        assert_eq!(decoded.len(), 2);
        for (p, (name, t)) in params.iter().zip(&decoded) {
            assert_eq!(&p.name, name);
            assert_eq!(p.value.shape(), t.shape());
            for (a, b) in p.value.data().iter().zip(t.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let err = decode(b"NOPE").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err:?}");
    }

    #[test]
    fn truncation_is_format_error() {
        let params = vec![Param { name: "p".to_string(), value: Tensor::zeros(&[4]) }];
        let bytes = encode(&params);
        let err = decode(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err:?}");
    }
}
