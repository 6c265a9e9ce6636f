//! Binary embedding container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      5 bytes   "ERHV1" for caches; indexes use other magics
//! dim        u32
//! count      u64
//! tag        u16 length + UTF-8
//! entries    count x (u16 length + UTF-8 id, dim x f32)
//! [payload]  container-specific trailer (empty for caches)
//! crc32      u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{EmbedError, EmbeddingBatch};

pub const CACHE_MAGIC: &[u8; 5] = b"ERHV1";

pub fn save_cache(batch: &EmbeddingBatch, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    let bytes = encode_container(CACHE_MAGIC, batch, |_| Ok(()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<EmbeddingBatch, EmbedError> {
    let bytes = fs::read(path)?;
    let (batch, rest) = decode_container(CACHE_MAGIC, &bytes)?;
    if !rest.is_empty() {
        return Err(EmbedError::CorruptCache(format!("{} trailing bytes", rest.len())));
    }
    Ok(batch)
}

pub(crate) fn encode_container(
    magic: &[u8; 5],
    batch: &EmbeddingBatch,
    payload: impl FnOnce(&mut Vec<u8>) -> Result<(), EmbedError>,
) -> Result<Vec<u8>, EmbedError> {
    let mut out = Vec::with_capacity(32 + batch.data().len() * 4 + batch.len() * 12);
    out.extend_from_slice(magic);
    out.extend_from_slice(&u32::try_from(batch.dim()).map_err(too_large)?.to_le_bytes());
    out.extend_from_slice(&(batch.len() as u64).to_le_bytes());
    put_str(&mut out, batch.provider_tag())?;
    for (id, row) in batch.rows() {
        put_str(&mut out, id)?;
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    payload(&mut out)?;
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Verifies magic and checksum, decodes the batch and returns the remaining payload.
pub(crate) fn decode_container<'a>(
    magic: &[u8; 5],
    bytes: &'a [u8],
) -> Result<(EmbeddingBatch, &'a [u8]), EmbedError> {
    if bytes.len() < magic.len() {
        return Err(EmbedError::CorruptCache("file shorter than magic".into()));
    }
    let (head, _) = bytes.split_at(magic.len());
    if head != magic {
        if head[..4] == magic[..4] {
            return Err(EmbedError::VersionMismatch {
                found: String::from_utf8_lossy(head).into_owned(),
            });
        }
        return Err(EmbedError::CorruptCache(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(head)
        )));
    }
    if bytes.len() < magic.len() + 4 {
        return Err(EmbedError::CorruptCache("truncated file".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(EmbedError::CorruptCache("checksum mismatch".into()));
    }

    let mut r = ByteReader::new(&body[magic.len()..]);
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let tag = r.string()?;
    // Each entry needs at least 2 + 4*dim bytes; reject absurd counts before allocating.
    let min_entry = 2 + 4 * dim as u64;
    if count.saturating_mul(min_entry) > r.remaining() as u64 {
        return Err(EmbedError::CorruptCache(format!("count {count} exceeds file size")));
    }
    let count = count as usize;
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        ids.push(r.string()?);
        for _ in 0..dim {
            data.push(r.f32()?);
        }
    }
    let batch = EmbeddingBatch::new(ids, dim, data, tag)
        .map_err(|e| EmbedError::CorruptCache(e.to_string()))?;
    Ok((batch, r.rest()))
}

fn too_large<E>(_: E) -> EmbedError {
    EmbedError::InvalidBatch("value does not fit the container format".into())
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), EmbedError> {
    let len = u16::try_from(s.len())
        .map_err(|_| EmbedError::InvalidBatch(format!("string longer than 65535 bytes: {:.32}...", s)))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Bounds-checked little-endian cursor; every short read is `CorruptCache`.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        if self.buf.len() < n {
            return Err(EmbedError::CorruptCache("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, EmbedError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String, EmbedError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| EmbedError::CorruptCache("invalid UTF-8 string".into()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub(crate) fn rest(self) -> &'a [u8] {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingBatch {
        EmbeddingBatch::new(
            vec!["u1".into(), "ünï".into()],
            3,
            vec![1.0, 0.0, 0.0, 0.6, -0.8, f32::MIN_POSITIVE],
            "hash_ngram(dim=3,n=3,seed=42)",
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.erhv");
        save_cache(&sample(), &path).unwrap();
        assert_eq!(load_cache(&path).unwrap(), sample());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_container(CACHE_MAGIC, &sample(), |_| Ok(())).unwrap();
        assert_eq!(&bytes[..5], b"ERHV1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 2);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.erhv");
        save_cache(&sample(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, 8, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_cache(&path), Err(EmbedError::CorruptCache(_))), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.erhv");
        let mut bytes = encode_container(CACHE_MAGIC, &sample(), |_| Ok(())).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path), Err(EmbedError::CorruptCache(_))));
        bytes[0] = b'E';
        bytes[4] = b'2';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path), Err(EmbedError::VersionMismatch { .. })));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode_container(CACHE_MAGIC, &sample(), |_| Ok(())).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(
            decode_container(CACHE_MAGIC, &bytes),
            Err(EmbedError::CorruptCache(msg)) if msg.contains("checksum")
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            dim in 1usize..6,
            rows in proptest::collection::vec(proptest::collection::vec(any::<f32>(), 5), 0..6),
            tag in "[a-z()=,0-9]{0,20}",
        ) {
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("id-{i}")).collect();
            let data: Vec<f32> = rows.iter().flat_map(|r| r[..dim].to_vec()).collect();
            let batch = EmbeddingBatch::new(ids, dim, data, tag).unwrap();
            let bytes = encode_container(CACHE_MAGIC, &batch, |_| Ok(())).unwrap();
            let (back, rest) = decode_container(CACHE_MAGIC, &bytes).unwrap();
            prop_assert!(rest.is_empty());
            // Bit-level comparison so NaN payloads count as preserved.
            let bits = |b: &EmbeddingBatch| b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&batch));
            prop_assert_eq!(back.ids(), batch.ids());
            prop_assert_eq!(back.provider_tag(), batch.provider_tag());
        }
    }
}
