//! Checkpoint container: a versioned header carrying the session config and
//! its fingerprint, followed by length-prefixed named tensors with raw
//! little-endian payloads. Round trips are bit-exact.

use alloc::borrow::ToOwned;
use alloc::vec::Vec;
use core::fmt;

use crate::config::SessionConfig;
use crate::params::ParameterStore;
use crate::rng::fnv1a;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NABU";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    /// Truncated, wrong magic, or internally inconsistent bytes.
    Corrupt(&'static str),
    /// The embedded session config does not match the one expected by the
    /// loading process.
    ConfigHashMismatch,
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Corrupt(what) => write!(f, "corrupt checkpoint: {what}"),
            CheckpointError::ConfigHashMismatch => {
                f.write_str("checkpoint config hash does not match the expected session config")
            }
        }
    }
}

impl core::error::Error for CheckpointError {}

pub fn encode<S: Scalar>(store: &ParameterStore<S>, session: &SessionConfig) -> Vec<u8> {
    let config_text = session.canonical_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::DTYPE.size() as u8);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&fnv1a(config_text.as_bytes()).to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&((tensor.len() * S::DTYPE.size()) as u32).to_le_bytes());
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt("unexpected end of data"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

/// Reads just the header: the embedded canonical config text and the
/// element width in bytes. Used to discover a checkpoint's session before
/// choosing the float width to load it with.
pub fn read_header(bytes: &[u8]) -> Result<(alloc::string::String, usize), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(CheckpointError::Corrupt("unsupported format version"));
    }
    let dtype = r.take(1)?[0] as usize;
    let config_len = r.u32()? as usize;
    let config_text = core::str::from_utf8(r.take(config_len)?)
        .map_err(|_| CheckpointError::Corrupt("config text is not UTF-8"))?;
    let stored_hash = r.u64()?;
    if stored_hash != fnv1a(config_text.as_bytes()) {
        return Err(CheckpointError::Corrupt("config hash disagrees with text"));
    }
    Ok((config_text.to_owned(), dtype))
}

/// Decodes a checkpoint, verifying the embedded config against `expected`.
pub fn decode<S: Scalar>(
    bytes: &[u8],
    expected: &SessionConfig,
) -> Result<ParameterStore<S>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(CheckpointError::Corrupt("unsupported format version"));
    }
    let dtype = r.take(1)?[0] as usize;

    let config_len = r.u32()? as usize;
    let config_text = core::str::from_utf8(r.take(config_len)?)
        .map_err(|_| CheckpointError::Corrupt("config text is not UTF-8"))?;
    let stored_hash = r.u64()?;
    if stored_hash != fnv1a(config_text.as_bytes()) {
        return Err(CheckpointError::Corrupt("config hash disagrees with text"));
    }
    if config_text != expected.canonical_text() || dtype != S::DTYPE.size() {
        return Err(CheckpointError::ConfigHashMismatch);
    }

    let count = r.u32()? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let payload_len = r.u32()? as usize;
        let expected_len: usize = shape.iter().product::<usize>() * S::DTYPE.size();
        if payload_len != expected_len {
            return Err(CheckpointError::Corrupt("payload length disagrees with shape"));
        }
        let payload = r.take(payload_len)?;
        let data: Vec<S> = payload
            .chunks_exact(S::DTYPE.size())
            .map(S::read_le)
            .collect();
        if store.get(&name).is_some() {
            return Err(CheckpointError::Corrupt("duplicate parameter name"));
        }
        store.insert(&name, Tensor::from_vec(shape, data));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes"));
    }
    Ok(store)
}

/// Convenience for error messages and manifests.
pub fn parameter_count<S: Scalar>(store: &ParameterStore<S>) -> usize {
    store.iter().map(|(_, t)| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EncoderKind, ModelConfig};
    use crate::graph::LanguageTag;
    use crate::rng::stream;

    fn session() -> SessionConfig {
        SessionConfig::new(
            ModelConfig::default(),
            EncoderKind::Gat,
            vec![LanguageTag::Eng],
        )
    }

    fn store() -> ParameterStore<f64> {
        let mut rng = stream(3, "ckpt-test", 0);
        let mut store = ParameterStore::new();
        store.insert("b.bias", Tensor::uniform(vec![4], -1.0, 1.0, &mut rng));
        store.insert("a.weight", Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
        store
    }

    #[test]
    fn header_reads_back_the_session() {
        let bytes = encode(&store(), &session());
        let (text, dtype) = read_header(&bytes).unwrap();
        assert_eq!(text, session().canonical_text());
        assert_eq!(dtype, 8);
        let parsed = SessionConfig::from_canonical_text(&text).unwrap();
        assert_eq!(parsed, session());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = store();
        let bytes = encode(&store, &session());
        let loaded: ParameterStore<f64> = decode(&bytes, &session()).unwrap();
        assert_eq!(loaded, store);
        // Deterministic bytes for identical stores.
        assert_eq!(bytes, encode(&store, &session()));
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = encode(&store(), &session());
        for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
            let err = decode::<f64>(&bytes[..cut], &session()).unwrap_err();
            assert!(matches!(err, CheckpointError::Corrupt(_)), "cut at {cut}");
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let bytes = encode(&store(), &session());
        let mut other = session();
        other.model.vocab_size = 9999;
        assert_eq!(
            decode::<f64>(&bytes, &other).unwrap_err(),
            CheckpointError::ConfigHashMismatch
        );
        // Wrong precision is a config mismatch too.
        assert_eq!(
            decode::<f32>(&bytes, &session()).unwrap_err(),
            CheckpointError::ConfigHashMismatch
        );
    }

    #[test]
    fn flipped_config_bytes_are_corrupt() {
        let mut bytes = encode(&store(), &session());
        // Flip a byte inside the embedded config text.
        bytes[14] ^= 0xff;
        assert!(matches!(
            decode::<f64>(&bytes, &session()).unwrap_err(),
            CheckpointError::Corrupt(_)
        ));
    }
}
