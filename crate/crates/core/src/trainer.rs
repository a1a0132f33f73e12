//! Self-alignment training: batch, encode, mine, loss, backward, AdamW.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderModel, ParamGrads};
use crate::error::{Error, Result};
use crate::losses::{Loss, LossKind, LossParams};
use crate::metric::{
    all_pairs, label_ids, mine_hard_pairs, mine_hard_pairs_euclidean, similarity_matrix,
    MinedPairs, DEFAULT_LAMBDA,
};
use crate::ontology::{MentionSet, Ontology};
use crate::pairgen::{batch_iter, generate_finetune_pairs, MiniBatch, PairList, DEFAULT_PAIR_CAP};

/// Geometry the miner measures distances in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningSpace {
    /// Unit-normalized embeddings, `D = sqrt(2 - 2S)`.
    Unit,
    /// Raw encoder outputs.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Stops after this many updates when set.
    pub max_iterations: Option<usize>,
    pub batch_pairs: usize,
    pub loss: LossParams,
    pub mining_enabled: bool,
    pub mining_space: MiningSpace,
    pub lambda: f64,
    /// Per-concept cap for fine-tuning pairs.
    pub pair_cap: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 1,
            max_iterations: None,
            batch_pairs: 256,
            loss: LossParams::defaults(LossKind::MultiSimilarity),
            mining_enabled: true,
            mining_space: MiningSpace::Unit,
            lambda: DEFAULT_LAMBDA,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(format!("training: {what}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.batch_pairs < 2 {
            return bad("batch_pairs must be >= 2".into());
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be >= 0".into());
        }
        if self.pair_cap == 0 {
            return bad("pair_cap must be >= 1".into());
        }
        self.loss.validate()
    }
}

/// AdamW moments, one flat buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m_embedding: Vec<f64>,
    pub v_embedding: Vec<f64>,
    pub m_weight: Vec<f64>,
    pub v_weight: Vec<f64>,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

impl OptimizerState {
    pub fn new(model: &EncoderModel) -> Self {
        let e = model.embedding_table.as_slice().len();
        let w = model.proj_weight.as_slice().len();
        let b = model.proj_bias.len();
        Self {
            step: 0,
            m_embedding: vec![0.0; e],
            v_embedding: vec![0.0; e],
            m_weight: vec![0.0; w],
            v_weight: vec![0.0; w],
            m_bias: vec![0.0; b],
            v_bias: vec![0.0; b],
        }
    }

    fn check_shapes(&self, model: &EncoderModel) -> Result<()> {
        let want = [
            model.embedding_table.as_slice().len(),
            model.proj_weight.as_slice().len(),
            model.proj_bias.len(),
        ];
        let got = [
            self.m_embedding.len().min(self.v_embedding.len()),
            self.m_weight.len().min(self.v_weight.len()),
            self.m_bias.len().min(self.v_bias.len()),
        ];
        if want != got
            || self.m_embedding.len() != self.v_embedding.len()
            || self.m_weight.len() != self.v_weight.len()
            || self.m_bias.len() != self.v_bias.len()
        {
            return Err(Error::ShapeMismatch {
                expected: format!("optimizer state for tensors {want:?}"),
                actual: format!("{got:?}"),
            });
        }
        Ok(())
    }
}

struct AdamCoefficients {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamCoefficients {
    #[inline]
    fn update(&self, theta: &mut f64, m: &mut f64, v: &mut f64, g: f64, decay: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.correction1;
        let v_hat = *v / self.correction2;
        *theta -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *theta);
    }
}

/// One AdamW update with decoupled weight decay. The projection bias is not
/// decayed. Untouched embedding rows see a zero gradient.
pub fn adamw_step(
    model: &mut EncoderModel,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    config: &TrainConfig,
    iteration: usize,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { iteration });
    }
    state.check_shapes(model)?;
    let d = model.dim();
    grads.proj_weight.expect_shape(d, d, "projection gradient")?;
    if grads.proj_bias.len() != d
        || grads
            .embedding_rows
            .iter()
            .any(|(&r, g)| r >= model.config.vocab_buckets || g.len() != d)
    {
        return Err(Error::ShapeMismatch {
            expected: format!("gradients for embed_dim {d}"),
            actual: "mismatched gradient rows".into(),
        });
    }

    state.step += 1;
    let t = state.step as f64;
    let c = AdamCoefficients {
        lr: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: config.adam_eps,
        correction1: 1.0 - config.adam_beta1.powf(t),
        correction2: 1.0 - config.adam_beta2.powf(t),
    };
    let wd = config.weight_decay;

    let zeros = vec![0.0; d];
    crate::par::zip3_chunks_mut(
        model.embedding_table.as_mut_slice(),
        &mut state.m_embedding,
        &mut state.v_embedding,
        d,
        |row, theta, m, v| {
            let g = grads.embedding_rows.get(&row).unwrap_or(&zeros);
            for k in 0..theta.len() {
                c.update(&mut theta[k], &mut m[k], &mut v[k], g[k], wd);
            }
        },
    );
    crate::par::zip3_chunks_mut(
        model.proj_weight.as_mut_slice(),
        &mut state.m_weight,
        &mut state.v_weight,
        d,
        |row, theta, m, v| {
            let g = grads.proj_weight.row(row);
            for k in 0..theta.len() {
                c.update(&mut theta[k], &mut m[k], &mut v[k], g[k], wd);
            }
        },
    );
    for k in 0..d {
        c.update(
            &mut model.proj_bias[k],
            &mut state.m_bias[k],
            &mut state.v_bias[k],
            grads.proj_bias[k],
            0.0,
        );
    }
    debug_assert!(model.is_finite());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub pos_pairs: usize,
    pub neg_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean loss over `records[range]`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,pos_pairs,neg_pairs\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{},{}\n",
                r.iteration, r.loss, r.pos_pairs, r.neg_pairs
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub log: TrainLog,
    pub optimizer: OptimizerState,
}

/// Forward, mining and loss for one batch; returns the loss output, the mined
/// pairs and the encoder cache.
fn forward_batch(
    model: &EncoderModel,
    batch: &MiniBatch,
    config: &TrainConfig,
    loss: &Loss,
) -> Result<(crate::losses::LossOutput, MinedPairs, crate::encoder::ForwardCache)> {
    let (outputs, cache) = model.encode_batch(&batch.names)?;
    let labels = label_ids(&batch.labels);
    let bundle = similarity_matrix(&outputs, &labels)?;
    let pairs = if !config.mining_enabled {
        all_pairs(&labels)
    } else {
        match config.mining_space {
            MiningSpace::Unit => mine_hard_pairs(&bundle, config.lambda)?,
            MiningSpace::Raw => mine_hard_pairs_euclidean(&outputs, &labels, config.lambda)?,
        }
    };
    let out = loss.compute(&bundle, &pairs)?;
    Ok((out, pairs, cache))
}

/// Runs one update and returns its log record.
pub fn train_step(
    model: &mut EncoderModel,
    batch: &MiniBatch,
    config: &TrainConfig,
    loss: &Loss,
    state: &mut OptimizerState,
    iteration: usize,
) -> Result<LogRecord> {
    let (out, pairs, cache) = forward_batch(model, batch, config, loss)?;
    if !out.value.is_finite() || !out.grad_embeddings.is_finite() {
        return Err(Error::NonFiniteGradient { iteration });
    }
    let grads = model.backward_batch(&cache, &out.grad_embeddings)?;
    adamw_step(model, &grads, state, config, iteration)?;
    Ok(LogRecord {
        iteration,
        loss: out.value,
        pos_pairs: pairs.positive_count(),
        neg_pairs: pairs.negative_count(),
    })
}

fn epoch_seeds(seed: u64, epochs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs).map(|_| rng.next_u64()).collect()
}

fn with_context(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteGradient { .. } => e,
        other => Error::Training {
            iteration,
            source: Box::new(other),
        },
    }
}

/// Trains on a pair list, resuming from `optimizer` when given.
pub fn train_pairs(
    pairs: &PairList,
    mut model: EncoderModel,
    config: &TrainConfig,
    optimizer: Option<OptimizerState>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = optimizer.unwrap_or_else(|| OptimizerState::new(&model));
    let mut log = TrainLog::default();
    if config.epochs == 0 || config.max_iterations == Some(0) {
        return Ok(TrainOutcome {
            model,
            log,
            optimizer: state,
        });
    }
    if pairs.len() < 2 {
        return Err(Error::EmptyPairList);
    }
    let loss = Loss::new(config.loss.clone())?;
    let mut iteration = 0;
    'epochs: for epoch_seed in epoch_seeds(config.seed, config.epochs) {
        for batch in batch_iter(pairs, config.batch_pairs, epoch_seed)? {
            if config.max_iterations.is_some_and(|cap| iteration >= cap) {
                break 'epochs;
            }
            let record = train_step(&mut model, &batch, config, &loss, &mut state, iteration)
                .map_err(with_context(iteration))?;
            log.records.push(record);
            iteration += 1;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        optimizer: state,
    })
}

/// Self-alignment pretraining on an offline pair list.
pub fn pretrain(pairs: &PairList, model: EncoderModel, config: &TrainConfig) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairList);
    }
    train_pairs(pairs, model, config, None)
}

/// Fine-tuning on mention-to-synonym pairs built from `mentions`.
pub fn finetune(
    mentions: &MentionSet,
    ontology: &Ontology,
    model: EncoderModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let pairs = generate_finetune_pairs(mentions, ontology, config.pair_cap, config.seed)?;
    train_pairs(&pairs, model, config, None)
}

/// Mean per-batch loss over one pass of `pairs` without updating the model,
/// using the mining and loss settings of `config`.
pub fn mean_batch_loss(
    model: &EncoderModel,
    pairs: &PairList,
    config: &TrainConfig,
    epoch_seed: u64,
) -> Result<f64> {
    let loss = Loss::new(config.loss.clone())?;
    let mut total = 0.0;
    let mut n = 0usize;
    for batch in batch_iter(pairs, config.batch_pairs, epoch_seed)? {
        total += forward_batch(model, &batch, config, &loss)?.0.value;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyPairList);
    }
    Ok(total / n as f64)
}
