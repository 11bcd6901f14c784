//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "ADVD"
//! version u32      currently 1
//! kind    u8       0 = generator, 1 = discriminator
//! dims    3 x u32  vocab, embed, hidden
//! vocab   u32 count, then per token: u32 byte length + UTF-8 bytes
//! tensors u64 total value count, then raw f64 values in the model's
//!         fixed tensor declaration order
//! ```
//!
//! The tensor layout is fully determined by (kind, dims), so only the
//! values are stored; the total count is validated against the layout
//! on load. Writes go through a temp file and rename, so a crashed save
//! never leaves a half-written checkpoint at the target path.

use std::fs;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::nnet::{Dims, ParamSet};

const MAGIC: &[u8; 4] = b"ADVD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Discriminator,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Generator => 0,
            ModelKind::Discriminator => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Generator),
            1 => Ok(ModelKind::Discriminator),
            other => Err(Error::Format(format!("unknown model kind tag {other}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
        }
    }
}

fn encode(kind: ModelKind, dims: Dims, vocab: &Vocabulary, params: &ParamSet) -> Vec<u8> {
    let total_values: usize = params.iter().map(|t| t.values.len()).sum();
    let mut buf = Vec::with_capacity(64 + total_values * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind.tag());
    for d in [dims.vocab, dims.embed, dims.hidden] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(vocab.size() as u32).to_le_bytes());
    for token in vocab.tokens() {
        buf.extend_from_slice(&(token.len() as u32).to_le_bytes());
        buf.extend_from_slice(token.as_bytes());
    }
    buf.extend_from_slice(&(total_values as u64).to_le_bytes());
    for tensor in params.iter() {
        for v in &tensor.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn save(
    path: &Path,
    kind: ModelKind,
    dims: Dims,
    vocab: &Vocabulary,
    params: &ParamSet,
) -> Result<()> {
    if vocab.size() != dims.vocab {
        return Err(Error::Config(format!(
            "vocabulary size {} does not match model vocab dimension {}",
            vocab.size(),
            dims.vocab
        )));
    }
    let bytes = encode(kind, dims, vocab, params);
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let slice = &self.buf[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::Format(format!(
                "checkpoint truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8], want: ModelKind) -> Result<(Dims, Vocabulary, Vec<f64>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let kind = ModelKind::from_tag(r.u8()?)?;
    if kind != want {
        return Err(Error::Format(format!(
            "checkpoint holds a {} model, expected a {}",
            kind.name(),
            want.name()
        )));
    }
    let vocab_dim = r.u32()? as usize;
    let embed = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let dims = Dims::new(vocab_dim, embed, hidden)
        .map_err(|e| Error::Format(format!("checkpoint dims invalid: {e}")))?;

    let n_tokens = r.u32()? as usize;
    if n_tokens != dims.vocab {
        return Err(Error::Format(format!(
            "checkpoint vocabulary has {n_tokens} tokens but dims say {}",
            dims.vocab
        )));
    }
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let token = std::str::from_utf8(raw)
            .map_err(|_| Error::Format("checkpoint vocabulary is not UTF-8".into()))?;
        tokens.push(token.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens)
        .map_err(|e| Error::Format(format!("checkpoint vocabulary invalid: {e}")))?;

    let n_values = r.u64()? as usize;
    let byte_len = n_values
        .checked_mul(8)
        .ok_or_else(|| Error::Format("checkpoint value count overflows".into()))?;
    let raw = r.take(byte_len)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, vocab, values))
}

/// Overwrite the values of a freshly constructed layout with the stored
/// stream; the stream length must match the layout exactly.
fn fill(params: &mut ParamSet, values: &[f64], kind: ModelKind) -> Result<()> {
    let expect: usize = params.iter().map(|t| t.values.len()).sum();
    if values.len() != expect {
        return Err(Error::Format(format!(
            "checkpoint stores {} values but the {} layout needs {expect}",
            values.len(),
            kind.name()
        )));
    }
    let mut offset = 0;
    for tensor in params.iter_mut() {
        let n = tensor.values.len();
        tensor.values.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

pub fn save_generator(path: &Path, model: &GeneratorModel, vocab: &Vocabulary) -> Result<()> {
    save(path, ModelKind::Generator, model.dims, vocab, &model.params)
}

pub fn load_generator(path: &Path) -> Result<(GeneratorModel, Vocabulary)> {
    let bytes = fs::read(path)?;
    let (dims, vocab, values) = decode(&bytes, ModelKind::Generator)?;
    let mut model = GeneratorModel::new(dims, 0)?;
    fill(&mut model.params, &values, ModelKind::Generator)?;
    Ok((model, vocab))
}

pub fn save_discriminator(
    path: &Path,
    model: &DiscriminatorModel,
    vocab: &Vocabulary,
) -> Result<()> {
    save(
        path,
        ModelKind::Discriminator,
        model.dims,
        vocab,
        &model.params,
    )
}

pub fn load_discriminator(path: &Path) -> Result<(DiscriminatorModel, Vocabulary)> {
    let bytes = fs::read(path)?;
    let (dims, vocab, values) = decode(&bytes, ModelKind::Discriminator)?;
    let mut model = DiscriminatorModel::new(dims, 0)?;
    fill(&mut model.params, &values, ModelKind::Discriminator)?;
    Ok((model, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_vocab(n: usize) -> Vocabulary {
        let mut tokens = vec![
            "<pad>".to_string(),
            "<bos>".to_string(),
            "<eos>".to_string(),
            "<unk>".to_string(),
        ];
        for i in 4..n {
            tokens.push(format!("w{i}"));
        }
        Vocabulary::from_tokens(tokens).unwrap()
    }

    fn dims() -> Dims {
        Dims {
            vocab: 7,
            embed: 3,
            hidden: 4,
        }
    }

    #[test]
    fn generator_roundtrip_is_bitwise() {
        let vocab = test_vocab(7);
        let model = GeneratorModel::new(dims(), 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &model, &vocab).unwrap();
        let (loaded, loaded_vocab) = load_generator(&path).unwrap();
        assert_eq!(loaded_vocab.tokens(), vocab.tokens());
        assert_eq!(loaded.dims, model.dims);
        for (a, b) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "tensor {} not bitwise identical", a.name);
        }
    }

    #[test]
    fn discriminator_roundtrip_is_bitwise() {
        let vocab = test_vocab(7);
        let model = DiscriminatorModel::new(dims(), 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.ckpt");
        save_discriminator(&path, &model, &vocab).unwrap();
        let (loaded, _) = load_discriminator(&path).unwrap();
        for (a, b) in model.params.iter().zip(loaded.params.iter()) {
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxx").unwrap();
        match load_generator(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_kind() {
        let vocab = test_vocab(7);
        let model = DiscriminatorModel::new(dims(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.ckpt");
        save_discriminator(&path, &model, &vocab).unwrap();
        match load_generator(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("expected a generator")),
            other => panic!("expected kind mismatch, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation_and_trailing_garbage() {
        let vocab = test_vocab(7);
        let model = GeneratorModel::new(dims(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &model, &vocab).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_generator(&cut), Err(Error::Format(_))));

        let fat = dir.path().join("fat.ckpt");
        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0u8; 4]);
        std::fs::write(&fat, &extended).unwrap();
        match load_generator(&fat) {
            Err(Error::Format(msg)) => assert!(msg.contains("trailing")),
            other => panic!("expected trailing-bytes error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unsupported_version() {
        let vocab = test_vocab(7);
        let model = GeneratorModel::new(dims(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &model, &vocab).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_generator(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version 99")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_generator(&dir.path().join("absent.ckpt")),
            Err(Error::Io(_))
        ));
    }
}
