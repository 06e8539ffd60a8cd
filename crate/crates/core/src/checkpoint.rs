//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "GRNLINK\0"
//! version    u32
//! meta       u64 byte length, then UTF-8 `key=value` lines
//! genes      u32 count, then per gene: u32 length, UTF-8 symbol, u8 TF flag
//! tensors    u32 count, then per tensor: u32 name length, UTF-8 name,
//!            u32 rank, rank x u64 extents, numel x f64 values
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{format_key_values, parse_key_values};
use crate::data::GeneVocabulary;
use crate::error::{Error, Result};
use crate::model::{ChannelOutputs, Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GRNLINK\0";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

pub const CHANNEL_TF: &str = "derived.channel.tf";
pub const CHANNEL_TARGET: &str = "derived.channel.target";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub genes: Vec<(String, bool)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}: needed {n} more bytes", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| bad("length does not fit in memory"))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| bad(format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (k, v) in &self.meta {
            if k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) || k.trim() != k || v.trim() != v {
                return Err(bad(format!("metadata entry {k:?} cannot be stored")));
            }
        }
        let meta = format_key_values(&self.meta);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.genes.len() as u32).to_le_bytes());
        for (s, tf) in &self.genes {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
            out.push(*tf as u8);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(bad("not a model checkpoint (bad magic bytes)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let meta_len = r.len_u64()?;
        let meta_bytes = r.take(meta_len)?;
        let meta_text = std::str::from_utf8(meta_bytes).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta = parse_key_values(meta_text).map_err(|e| bad(format!("metadata: {e}")))?;
        let n_genes = r.u32()? as usize;
        if n_genes > r.remaining() / 5 {
            return Err(bad("gene count exceeds file size"));
        }
        let mut genes = Vec::with_capacity(n_genes);
        for _ in 0..n_genes {
            let s = r.string("gene symbol")?;
            let tf = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(bad(format!("TF flag {f} is not 0 or 1"))),
            };
            genes.push((s, tf));
        }
        let n_tensors = r.u32()? as usize;
        if n_tensors > r.remaining() / 8 {
            return Err(bad("tensor count exceeds file size"));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            let rank = r.u32()? as usize;
            if rank > MAX_RANK {
                return Err(bad(format!("tensor {name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let e = r.len_u64()?;
                numel = numel.checked_mul(e).ok_or_else(|| bad(format!("tensor {name:?} is too large")))?;
                shape.push(e);
            }
            if numel > r.remaining() / 8 {
                return Err(bad(format!("tensor {name:?} exceeds file size")));
            }
            let raw = r.take(numel * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { meta, genes, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn vocabulary(&self) -> Result<GeneVocabulary> {
        let symbols: Vec<&str> = self.genes.iter().map(|(s, _)| s.as_str()).collect();
        let mut v = GeneVocabulary::new(&symbols).map_err(|e| bad(format!("vocabulary: {e}")))?;
        for (i, (_, tf)) in self.genes.iter().enumerate() {
            if *tf {
                v.set_tf(i);
            }
        }
        Ok(v)
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .ok_or_else(|| bad(format!("missing metadata {key}")))?
            .parse()
            .map_err(|_| bad(format!("metadata {key} is not a count")))
    }

    /// Packs parameters, the model configuration, the vocabulary and the
    /// channel outputs (so pairs can be scored without the training data).
    pub fn from_model(model: &Model, vocab: &GeneVocabulary, channels: &ChannelOutputs, extra: &BTreeMap<String, String>) -> Self {
        let mut meta = model.config.to_key_values();
        meta.insert("model.n_genes".into(), model.n_genes.to_string());
        meta.insert("model.n_cells".into(), model.n_cells.to_string());
        for (k, v) in extra {
            meta.insert(k.clone(), v.clone());
        }
        let mut tensors: Vec<(String, Tensor)> = model
            .store
            .iter()
            .map(|(_, n, t)| (n.to_string(), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")))
            .collect();
        tensors.push((CHANNEL_TF.into(), channels.tf.clone()));
        tensors.push((CHANNEL_TARGET.into(), channels.target.clone()));
        let genes = (0..vocab.len()).map(|i| (vocab.symbol(i).to_string(), vocab.is_tf(i))).collect();
        Checkpoint { meta, genes, tensors }
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<(Model, GeneVocabulary, ChannelOutputs)> {
        let cfg = ModelConfig::from_key_values(&self.meta).map_err(|e| bad(format!("config: {e}")))?;
        let n_genes = self.meta_usize("model.n_genes")?;
        let n_cells = self.meta_usize("model.n_cells")?;
        let vocab = self.vocabulary()?;
        if vocab.len() != n_genes {
            return Err(bad(format!("{} genes stored for a {n_genes}-gene model", vocab.len())));
        }
        let mut model = Model::new(&cfg, n_genes, n_cells, 0).map_err(|e| bad(format!("model: {e}")))?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = self
                .tensor(&name)
                .ok_or_else(|| bad(format!("missing parameter {name}")))?;
            if !t.all_finite() {
                return Err(bad(format!("parameter {name} has non-finite values")));
            }
            model
                .store
                .assign(id, t.clone())
                .map_err(|e| bad(format!("parameter {name}: {e}")))?;
        }
        let channel = |name: &str| -> Result<Tensor> {
            let t = self.tensor(name).ok_or_else(|| bad(format!("missing {name}")))?;
            if t.shape() != [n_genes, cfg.head.output] {
                return Err(bad(format!("{name} has shape {:?}", t.shape())));
            }
            Ok(t.clone())
        };
        let channels = ChannelOutputs {
            tf: channel(CHANNEL_TF)?,
            target: channel(CHANNEL_TARGET)?,
        };
        Ok((model, vocab, channels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: [("a".to_string(), "1".to_string())].into_iter().collect(),
            genes: vec![("TF1".into(), true), ("G2".into(), false)],
            tensors: vec![
                ("w".into(), Tensor::matrix(2, 2, vec![1.0, -2.5, 3.0, 0.125]).unwrap()),
                ("s".into(), Tensor::scalar(7.0)),
            ],
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let c = sample();
        assert_eq!(Checkpoint::decode(&c.encode().unwrap()).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(Checkpoint::decode(&wrong_version), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(Checkpoint::decode(b"NOTAFILE").is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(Checkpoint::decode(&trailing).is_err());
    }
}
