//! Character n-gram hashing encoder.
//!
//! A name is padded with `^`/`$`, split into character n-grams, each n-gram is
//! hashed (64-bit FNV-1a) into one of `vocab_buckets` embedding rows, the rows
//! are mean-pooled and passed through an affine projection. The backward pass
//! is written out by hand.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub ngram_n: usize,
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub max_tokens: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            ngram_n: 3,
            vocab_buckets: 100_000,
            embed_dim: 64,
            max_tokens: 25,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("encoder: {what}")));
        if self.ngram_n == 0 {
            return bad("ngram_n must be >= 1");
        }
        if self.vocab_buckets == 0 {
            return bad("vocab_buckets must be >= 1");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be >= 1");
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return bad("init_scale must be finite and >= 0");
        }
        Ok(())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Bucket ids of the boundary-padded character n-grams of `name`.
pub fn tokenize(name: &str, config: &EncoderConfig) -> Vec<usize> {
    let padded: Vec<char> = std::iter::once('^')
        .chain(name.chars())
        .chain(std::iter::once('$'))
        .collect();
    let n = config.ngram_n.max(1);
    let buckets = config.vocab_buckets as u64;
    let hash = |gram: &[char]| {
        let s: String = gram.iter().collect();
        (fnv1a64(s.as_bytes()) % buckets) as usize
    };
    if padded.len() < n {
        return vec![hash(&padded)];
    }
    padded
        .windows(n)
        .take(config.max_tokens)
        .map(hash)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    /// `vocab_buckets x embed_dim`
    pub embedding_table: Matrix,
    /// `embed_dim x embed_dim`, output = W * pooled + b
    pub proj_weight: Matrix,
    pub proj_bias: Vec<f64>,
}

/// Uniform(-init_scale, init_scale) weights, zero bias.
pub fn init_model(config: &EncoderConfig) -> Result<EncoderModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * s)
            .collect()
    };
    let (v, d) = (config.vocab_buckets, config.embed_dim);
    let embedding_table = Matrix::from_vec(v, d, draw(v * d))?;
    let proj_weight = Matrix::from_vec(d, d, draw(d * d))?;
    Ok(EncoderModel {
        config: config.clone(),
        embedding_table,
        proj_weight,
        proj_bias: vec![0.0; d],
    })
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub token_ids: Vec<Vec<usize>>,
    /// `B x d` mean-pooled token embeddings.
    pub pooled: Matrix,
    /// `B x d` encoder outputs.
    pub outputs: Matrix,
}

/// Gradients with respect to every model parameter. Only embedding rows
/// touched by the batch are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub embedding_rows: BTreeMap<usize, Vec<f64>>,
    pub proj_weight: Matrix,
    pub proj_bias: Vec<f64>,
}

impl ParamGrads {
    pub fn is_finite(&self) -> bool {
        self.proj_weight.is_finite()
            && self.proj_bias.iter().all(|v| v.is_finite())
            && self
                .embedding_rows
                .values()
                .all(|r| r.iter().all(|v| v.is_finite()))
    }
}

impl EncoderModel {
    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn is_finite(&self) -> bool {
        self.embedding_table.is_finite()
            && self.proj_weight.is_finite()
            && self.proj_bias.iter().all(|v| v.is_finite())
    }

    fn encode_one(&self, name: &str) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let tokens = tokenize(name, &self.config);
        let mut pooled = vec![0.0; d];
        for &t in &tokens {
            for (p, e) in pooled.iter_mut().zip(self.embedding_table.row(t)) {
                *p += e;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        let out = (0..d)
            .map(|k| {
                let w = self.proj_weight.row(k);
                w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + self.proj_bias[k]
            })
            .collect();
        (tokens, pooled, out)
    }

    /// Encodes a batch, keeping what the backward pass needs.
    pub fn encode_batch(&self, names: &[String]) -> Result<(Matrix, ForwardCache)> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty batch".into()));
        }
        let d = self.dim();
        let per_name = par::map_range(names.len(), |i| self.encode_one(&names[i]));
        let mut token_ids = Vec::with_capacity(names.len());
        let mut pooled = Matrix::zeros(names.len(), d);
        let mut outputs = Matrix::zeros(names.len(), d);
        for (i, (t, p, o)) in per_name.into_iter().enumerate() {
            token_ids.push(t);
            pooled.row_mut(i).copy_from_slice(&p);
            outputs.row_mut(i).copy_from_slice(&o);
        }
        let cache = ForwardCache {
            token_ids,
            pooled,
            outputs: outputs.clone(),
        };
        Ok((outputs, cache))
    }

    /// Forward pass only.
    pub fn encode(&self, names: &[String]) -> Result<Matrix> {
        self.encode_batch(names).map(|(out, _)| out)
    }

    pub fn backward_batch(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<ParamGrads> {
        let b = cache.token_ids.len();
        let d = self.dim();
        grad_out.expect_shape(b, d, "output gradient")?;

        let mut proj_bias = vec![0.0; d];
        for g in grad_out.iter_rows() {
            for (acc, v) in proj_bias.iter_mut().zip(g) {
                *acc += v;
            }
        }

        let weight_rows = par::map_range(d, |k| {
            let mut row = vec![0.0; d];
            for i in 0..b {
                let gk = grad_out[(i, k)];
                for (acc, p) in row.iter_mut().zip(cache.pooled.row(i)) {
                    *acc += gk * p;
                }
            }
            row
        });
        let proj_weight = Matrix::from_vec(d, d, weight_rows.concat())?;

        // d pooled_i = W^T g_i, spread evenly over the name's tokens
        let per_token = par::map_range(b, |i| {
            let g = grad_out.row(i);
            let inv = 1.0 / cache.token_ids[i].len() as f64;
            let mut gp = vec![0.0; d];
            for (k, gk) in g.iter().enumerate() {
                for (acc, w) in gp.iter_mut().zip(self.proj_weight.row(k)) {
                    *acc += gk * w;
                }
            }
            gp.iter_mut().for_each(|v| *v *= inv);
            gp
        });

        let mut embedding_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (tokens, gp) in cache.token_ids.iter().zip(&per_token) {
            for &t in tokens {
                let row = embedding_rows.entry(t).or_insert_with(|| vec![0.0; d]);
                for (acc, v) in row.iter_mut().zip(gp) {
                    *acc += v;
                }
            }
        }

        Ok(ParamGrads {
            embedding_rows,
            proj_weight,
            proj_bias,
        })
    }
}
