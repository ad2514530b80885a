//! Versioned binary container for model parameters.
//!
//! Layout (little endian): magic `DKCK`, `u32` version, kind tag, JSON
//! metadata, then named tensors stored as raw `f64` bit patterns. Reading
//! a file back yields bit-identical parameters.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DKCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Map<String, Value>,
    pub tensors: Vec<Tensor>,
}

/// Models that can be stored in a [`Checkpoint`].
pub trait Checkpointable: Sized {
    const KIND: &'static str;

    fn write_into(&self, ck: &mut Checkpoint);

    fn read_from(ck: &Checkpoint) -> Result<Self>;

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(Self::KIND);
        self.write_into(&mut ck);
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != Self::KIND {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                Self::KIND,
                ck.kind
            )));
        }
        Self::read_from(ck)
    }

    fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint().to_bytes())?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::from_bytes(&std::fs::read(path)?)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Checkpoint("truncated checkpoint".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 in checkpoint".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), meta: Map::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor { name: name.into(), shape, data });
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &Value::Object(self.meta.clone()).to_string());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.string()?;
        let meta = match serde_json::from_str(&r.string()?)? {
            Value::Object(m) => m,
            _ => return Err(Error::Checkpoint("metadata is not an object".into())),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn put_encoder(&mut self, prefix: &str, p: &EncoderParams) {
        self.meta.insert(
            prefix.to_string(),
            json!({ "bucket_count": p.bucket_count, "embed_dim": p.embed_dim, "seed": p.seed }),
        );
        let d = p.embed_dim;
        self.push(format!("{prefix}.token_table"), vec![p.bucket_count, d], p.token_table.clone());
        self.push(format!("{prefix}.projection"), vec![d, d], p.projection.clone());
        self.push(format!("{prefix}.projection_bias"), vec![d], p.projection_bias.clone());
    }

    pub fn take_encoder(&self, prefix: &str) -> Result<EncoderParams> {
        let meta = self
            .meta
            .get(prefix)
            .ok_or_else(|| Error::Checkpoint(format!("missing encoder {prefix}")))?;
        let field = |k: &str| {
            meta.get(k)
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{k}")))
        };
        let p = EncoderParams {
            bucket_count: field("bucket_count")? as usize,
            embed_dim: field("embed_dim")? as usize,
            seed: field("seed")?,
            token_table: self.tensor(&format!("{prefix}.token_table"))?.data.clone(),
            projection: self.tensor(&format!("{prefix}.projection"))?.data.clone(),
            projection_bias: self.tensor(&format!("{prefix}.projection_bias"))?.data.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

impl Checkpointable for EncoderParams {
    const KIND: &'static str = "encoder";

    fn write_into(&self, ck: &mut Checkpoint) {
        ck.put_encoder("encoder", self);
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        ck.take_encoder("encoder")
    }
}

/// Encoder pair produced by dense-retrieval training.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder {
    pub context: EncoderParams,
    pub snippet: EncoderParams,
}

impl Checkpointable for DualEncoder {
    const KIND: &'static str = "dual_encoder";

    fn write_into(&self, ck: &mut Checkpoint) {
        ck.put_encoder("context", &self.context);
        ck.put_encoder("snippet", &self.snippet);
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        Ok(Self { context: ck.take_encoder("context")?, snippet: ck.take_encoder("snippet")? })
    }
}
