//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"SAPE" | version: u32
//! ngram_n: u64 | vocab_buckets: u64 | embed_dim: u64 | max_tokens: u64
//! init_scale: f64 | seed: u64
//! embedding_table: V*d f64 | proj_weight: d*d f64 | proj_bias: d f64
//! has_optimizer: u32 (0 or 1)
//! [ b"ADAM" | step: u64 | m_emb | v_emb | m_w | v_w | m_b | v_b ]
//! ```

use std::fs;
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::OptimizerState;

const MAGIC: &[u8; 4] = b"SAPE";
const OPTIMIZER_MAGIC: &[u8; 4] = b"ADAM";
pub const FORMAT_VERSION: u32 = 1;

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &EncoderModel, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.ngram_n, c.vocab_buckets, c.embed_dim, c.max_tokens] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.init_scale.to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    put_f64s(&mut buf, model.embedding_table.as_slice());
    put_f64s(&mut buf, model.proj_weight.as_slice());
    put_f64s(&mut buf, &model.proj_bias);
    match optimizer {
        None => buf.extend_from_slice(&0u32.to_le_bytes()),
        Some(s) => {
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(OPTIMIZER_MAGIC);
            buf.extend_from_slice(&s.step.to_le_bytes());
            for t in [
                &s.m_embedding,
                &s.v_embedding,
                &s.m_weight,
                &s.v_weight,
                &s.m_bias,
                &s.v_bias,
            ] {
                put_f64s(&mut buf, t);
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "dimension overflows usize".to_string())
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("tensor size overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<(EncoderModel, Option<OptimizerState>), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic bytes".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let config = EncoderConfig {
        ngram_n: r.usize()?,
        vocab_buckets: r.usize()?,
        embed_dim: r.usize()?,
        max_tokens: r.usize()?,
        init_scale: f64::from_le_bytes(r.take(8)?.try_into().unwrap()),
        seed: r.u64()?,
    };
    config.validate().map_err(|e| e.to_string())?;
    let (v, d) = (config.vocab_buckets, config.embed_dim);
    let emb_len = v.checked_mul(d).ok_or("tensor size overflow")?;
    let embedding_table = Matrix::from_vec(v, d, r.f64s(emb_len)?).map_err(|e| e.to_string())?;
    let proj_weight = Matrix::from_vec(d, d, r.f64s(d * d)?).map_err(|e| e.to_string())?;
    let proj_bias = r.f64s(d)?;
    let model = EncoderModel {
        config,
        embedding_table,
        proj_weight,
        proj_bias,
    };
    let optimizer = match r.u32()? {
        0 => None,
        1 => {
            if r.take(4)? != OPTIMIZER_MAGIC {
                return Err("bad optimizer section magic".into());
            }
            Some(OptimizerState {
                step: r.u64()?,
                m_embedding: r.f64s(emb_len)?,
                v_embedding: r.f64s(emb_len)?,
                m_weight: r.f64s(d * d)?,
                v_weight: r.f64s(d * d)?,
                m_bias: r.f64s(d)?,
                v_bias: r.f64s(d)?,
            })
        }
        other => return Err(format!("bad optimizer flag {other}")),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok((model, optimizer))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EncoderModel, Option<OptimizerState>)> {
    parse(bytes).map_err(|reason| Error::Checkpoint {
        path: "<memory>".into(),
        reason,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &EncoderModel,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    fs::write(path, to_bytes(model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderModel, Option<OptimizerState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
