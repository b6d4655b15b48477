//! Checkpoint persistence.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "MTMCKPT1" (last byte is the format version)
//! vocab count      u32
//!   per token:     u32 byte length, UTF-8 bytes, u32 id (== position)
//! tensor count     u32
//!   per tensor:    u32 name length, name bytes, u32 rank, u32 dims...,
//!                  f32 values (row-major)
//! stage            u8       0 = pretrained, 1 = meta-trained
//! fingerprint      u32 byte length, UTF-8 bytes
//! iteration        u64
//! ```
//!
//! The core computes in f64; checkpoints round to f32 at save. Loading a
//! saved file and saving it again is byte-identical because the f32->f64
//! widening is exact. Corruption and truncation are rejected with the byte
//! offset where reading failed.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::textmodel::{EncoderParams, TextModelError, Vocab};

pub const MAGIC: &[u8; 8] = b"MTMCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version byte {found:?} (expected '1')")]
    UnsupportedVersion { found: u8 },
    #[error("checkpoint truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint corrupt at byte offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("checkpoint has {extra} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    TextModel(#[from] TextModelError),
}

/// Which pipeline stage produced the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrained,
    MetaTrained,
}

impl Stage {
    fn to_byte(self) -> u8 {
        match self {
            Stage::Pretrained => 0,
            Stage::MetaTrained => 1,
        }
    }
}

/// A saved model: vocabulary, named parameter tensors, and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub tensors: Vec<(String, Tensor)>,
    pub stage: Stage,
    pub fingerprint: String,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn from_params(
        vocab: Vocab,
        params: &EncoderParams,
        stage: Stage,
        fingerprint: String,
        iteration: u64,
    ) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| (name.to_owned(), t.clone()))
            .collect();
        Self { vocab, tensors, stage, fingerprint, iteration }
    }

    pub fn to_params(&self) -> Result<EncoderParams, CheckpointError> {
        Ok(EncoderParams::from_named(&self.tensors)?)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);

    let vocab_len = ckpt.vocab.size() as u32;
    out.extend_from_slice(&vocab_len.to_le_bytes());
    for id in 0..ckpt.vocab.size() {
        let token = ckpt.vocab.token_of(id as u32).expect("contiguous ids");
        out.extend_from_slice(&(token.len() as u32).to_le_bytes());
        out.extend_from_slice(token.as_bytes());
        out.extend_from_slice(&(id as u32).to_le_bytes());
    }

    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    out.push(ckpt.stage.to_byte());
    out.extend_from_slice(&(ckpt.fingerprint.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.fingerprint.as_bytes());
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.offset + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { offset: self.offset });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let at = self.offset;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Corrupt {
            offset: at,
            reason: "invalid UTF-8".into(),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        if magic[..7] == MAGIC[..7] {
            return Err(CheckpointError::UnsupportedVersion { found: magic[7] });
        }
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }

    let vocab_len = r.u32()? as usize;
    let mut vocab_text = String::new();
    for expected_id in 0..vocab_len {
        let token = r.string()?;
        let at = r.offset;
        let id = r.u32()? as usize;
        if id != expected_id {
            return Err(CheckpointError::Corrupt {
                offset: at,
                reason: format!("vocab id {id} out of order, expected {expected_id}"),
            });
        }
        vocab_text.push_str(&token);
        vocab_text.push('\t');
        vocab_text.push_str(&id.to_string());
        vocab_text.push('\n');
    }
    let at_vocab = r.offset;
    let vocab = Vocab::parse(&vocab_text, "checkpoint").map_err(|e| CheckpointError::Corrupt {
        offset: at_vocab,
        reason: e.to_string(),
    })?;

    let tensor_count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let at = r.offset;
        let raw = r.take(numel * 4)?;
        let mut values = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
        }
        let tensor = Tensor::new(shape, values).map_err(|e| CheckpointError::Corrupt {
            offset: at,
            reason: e.to_string(),
        })?;
        tensors.push((name, tensor));
    }

    let at_stage = r.offset;
    let stage = match r.u8()? {
        0 => Stage::Pretrained,
        1 => Stage::MetaTrained,
        other => {
            return Err(CheckpointError::Corrupt {
                offset: at_stage,
                reason: format!("unknown stage byte {other}"),
            })
        }
    };
    let fingerprint = r.string()?;
    let iteration = r.u64()?;
    if r.offset != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            offset: r.offset,
            extra: bytes.len() - r.offset,
        });
    }
    Ok(Checkpoint { vocab, tensors, stage, fingerprint, iteration })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::EncoderDims;

    fn sample() -> Checkpoint {
        let vocab = Vocab::build(&["good bad fine", "good good"], 1).unwrap();
        let dims =
            EncoderDims { vocab: vocab.size(), embed: 3, hidden: 4, classes_max: 2 };
        let params = EncoderParams::init(dims, 123);
        Checkpoint::from_params(vocab, &params, Stage::Pretrained, "abcd1234".into(), 17)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        save(&ckpt, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        save(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.stage, Stage::Pretrained);
        assert_eq!(loaded.iteration, 17);
        assert_eq!(loaded.fingerprint, "abcd1234");
        assert_eq!(loaded.vocab, ckpt.vocab);
    }

    #[test]
    fn loaded_params_round_trip_through_f32() {
        let ckpt = sample();
        let bytes = encode(&ckpt);
        let loaded = decode(&bytes).unwrap();
        let params = loaded.to_params().unwrap();
        // Every value must be within one f32 rounding step of the original.
        for ((_, a), (_, b)) in ckpt.tensors.iter().zip(params.tensors()) {
            for (&x, &y) in a.values().iter().zip(b.values()) {
                assert_eq!(x as f32, y as f32);
                assert!((x - y).abs() <= (x as f32).abs() as f64 * 1e-7 + 1e-12);
            }
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&sample());
        for cut in [3usize, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            match decode(&bytes[..cut]) {
                Err(CheckpointError::Truncated { offset }) => assert!(offset <= cut),
                other => panic!("cut at {cut}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn foreign_magic_rejected() {
        let mut bytes = encode(&sample());
        bytes[0..8].copy_from_slice(b"OTHERFMT");
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = encode(&sample());
        bytes[7] = b'2';
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::UnsupportedVersion { found: b'2' })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(CheckpointError::TrailingBytes { extra: 1, .. })));
    }

    #[test]
    fn corrupt_float_rejected() {
        let ckpt = sample();
        let bytes = encode(&ckpt);
        // Overwrite the first tensor value with an f32 NaN. Locate it by
        // re-encoding with a sentinel-free scan: the tensor block starts
        // after the vocab block; simpler to corrupt via a fresh encode of a
        // known layout. Here: find the name "embedding" and skip rank/dims.
        let name_pos = bytes
            .windows("embedding".len())
            .position(|w| w == b"embedding")
            .unwrap();
        let dims_pos = name_pos + "embedding".len() + 4; // rank field
        let value_pos = dims_pos + 8; // two u32 dims
        let mut corrupted = bytes.clone();
        corrupted[value_pos..value_pos + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&corrupted) {
            Err(CheckpointError::Corrupt { offset, .. }) => assert_eq!(offset, value_pos),
            other => panic!("unexpected {other:?}"),
        }
    }
}
