//! Binary parameter segments.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32 format_version
//! u32 entry_count
//! entry_count × {
//!     u32 path_len, path bytes (UTF-8), u8 trainable,
//!     u32 ndim, ndim × u64 dim, product(dims) × f64
//! }
//! [u8; 32] SHA-256 of every preceding byte
//! ```

use sha2::{Digest, Sha256};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SEGMENT_FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

pub fn encode_segment(store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&SEGMENT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (path, t) in store.iter() {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.push(u8::from(store.is_trainable(path)));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated parameter segment".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_segment(bytes: &[u8]) -> Result<ParameterStore> {
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(Error::Checkpoint("parameter segment too short".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Checkpoint("parameter segment checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    let version = r.u32()?;
    if version != SEGMENT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported segment version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let path = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter path is not UTF-8".into()))?
            .to_string();
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("oversized tensor".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{path}: {e}")))?;
        store.insert(path, t, trainable);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes in parameter segment".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new();
        s.insert_normal("a.w", &[3, 4], 1.0, &mut rng, true);
        s.insert_normal("b", &[5], 1.0, &mut rng, false);
        s.insert("c", Tensor::scalar(-0.0), true);
        let back = decode_segment(&encode_segment(&s)).unwrap();
        assert!(back.bitwise_eq(&s));
    }

    #[test]
    fn corrupted_byte_is_detected() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(1.5), true);
        let mut bytes = encode_segment(&s);
        bytes[10] ^= 1;
        assert!(decode_segment(&bytes).is_err());
    }
}
