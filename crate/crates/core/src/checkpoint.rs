//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "DPTXCKPT"
//! version    u32       1
//! kind       u32       1 = autoencoder, 2 = intent classifier
//! meta_len   u64       length of the metadata block
//! metadata   bytes     UTF-8 JSON: architecture, vocabulary, label map
//! n_tensors  u32
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   rank     u32, dims (u64 each)
//!   data     f64 little-endian, row-major
//! ```
//!
//! Metadata is serialized from plain structs with ordered fields, so
//! save → load → save reproduces the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderArch, AutoencoderModel};
use crate::classifier::{CharVocab, ClassifierArch, IntentClassifierModel};
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"DPTXCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Autoencoder = 1,
    IntentClassifier = 2,
}

impl ModelKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Autoencoder),
            2 => Ok(ModelKind::IntentClassifier),
            other => Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ModelKind,
    pub metadata: Vec<u8>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.metadata);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_u32(r.u32()?)?;
        let meta_len = r.u64()? as usize;
        let metadata = r.take(meta_len)?.to_vec();
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            kind,
            metadata,
            tensors,
        })
    }

    fn params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for (name, t) in &self.tensors {
            ps.add(name.clone(), t.clone());
        }
        ps
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn tensors_of(params: &ParamSet) -> Vec<(String, Tensor)> {
    params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

#[derive(Serialize, Deserialize)]
struct AutoencoderMeta {
    arch: AutoencoderArch,
    vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    arch: ClassifierArch,
    words: Vec<String>,
    chars: Vec<char>,
    labels: Vec<String>,
}

fn meta_bytes<T: Serialize>(meta: &T) -> Vec<u8> {
    serde_json::to_vec(meta).expect("metadata serializes")
}

fn parse_meta<'de, T: Deserialize<'de>>(bytes: &'de [u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))
}

pub fn autoencoder_to_bytes(model: &AutoencoderModel) -> Vec<u8> {
    Container {
        kind: ModelKind::Autoencoder,
        metadata: meta_bytes(&AutoencoderMeta {
            arch: *model.arch(),
            vocab: model.vocab().tokens().to_vec(),
        }),
        tensors: tensors_of(model.params()),
    }
    .to_bytes()
}

pub fn autoencoder_from_bytes(bytes: &[u8]) -> Result<AutoencoderModel> {
    let c = Container::from_bytes(bytes)?;
    c.expect_kind(ModelKind::Autoencoder)?;
    let meta: AutoencoderMeta = parse_meta(&c.metadata)?;
    let vocab = Vocabulary::from_tokens(meta.vocab)?;
    AutoencoderModel::from_parts(meta.arch, vocab, c.params())
}

pub fn classifier_to_bytes(model: &IntentClassifierModel) -> Vec<u8> {
    Container {
        kind: ModelKind::IntentClassifier,
        metadata: meta_bytes(&ClassifierMeta {
            arch: *model.arch(),
            words: model.word_vocab().tokens().to_vec(),
            chars: model.char_vocab().chars().to_vec(),
            labels: model.labels().to_vec(),
        }),
        tensors: tensors_of(model.params()),
    }
    .to_bytes()
}

pub fn classifier_from_bytes(bytes: &[u8]) -> Result<IntentClassifierModel> {
    let c = Container::from_bytes(bytes)?;
    c.expect_kind(ModelKind::IntentClassifier)?;
    let meta: ClassifierMeta = parse_meta(&c.metadata)?;
    let words = Vocabulary::from_tokens(meta.words)?;
    IntentClassifierModel::from_parts(meta.arch, words, CharVocab::from_chars(meta.chars), meta.labels, c.params())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_autoencoder(model: &AutoencoderModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &autoencoder_to_bytes(model))
}

pub fn load_autoencoder(path: impl AsRef<Path>) -> Result<AutoencoderModel> {
    autoencoder_from_bytes(&read(path.as_ref())?)
}

pub fn save_classifier(model: &IntentClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &classifier_to_bytes(model))
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<IntentClassifierModel> {
    classifier_from_bytes(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let c = Container {
            kind: ModelKind::Autoencoder,
            metadata: b"{}".to_vec(),
            tensors: vec![
                ("a".into(), Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap()),
                ("b".into(), Tensor::vector(vec![7.0])),
            ],
        };
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensors[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let c = Container {
            kind: ModelKind::IntentClassifier,
            metadata: vec![],
            tensors: vec![("w".into(), Tensor::vector(vec![1.0, 2.0]))],
        };
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Container::from_bytes(&bad_magic).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(Container::from_bytes(&bad_version).is_err());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let c = Container {
            kind: ModelKind::IntentClassifier,
            metadata: b"{}".to_vec(),
            tensors: vec![],
        };
        assert!(matches!(
            autoencoder_from_bytes(&c.to_bytes()),
            Err(Error::Checkpoint(_))
        ));
    }
}
