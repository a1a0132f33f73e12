//! Benchmark workflows shared by the CLI and the test suites.

use crate::encoder::{init_model, EncoderConfig, EncoderModel};
use crate::error::Result;
use crate::linker::{build_index, evaluate, EvalReport};
use crate::losses::{LossKind, LossParams};
use crate::ontology::{MentionSet, Ontology};
use crate::pairgen::PairList;
use crate::trainer::{pretrain, TrainConfig, TrainOutcome};

/// Acc@1/Acc@5 of `model` on `mentions` against the full dictionary.
pub fn evaluate_model(
    model: &EncoderModel,
    ontology: &Ontology,
    mentions: &MentionSet,
    index_batch_size: usize,
) -> Result<EvalReport> {
    let index = build_index(model, ontology, index_batch_size)?;
    evaluate(&index, mentions, model, &[1, 5])
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: LossKind,
    pub final_loss: f64,
    pub acc_at_1: f64,
    pub acc_at_5: f64,
}

/// Mean loss over the last `window` log records.
pub fn final_loss(outcome: &TrainOutcome, window: usize) -> f64 {
    let n = outcome.log.len();
    if n == 0 {
        return f64::NAN;
    }
    outcome.log.mean_loss(n.saturating_sub(window)..n)
}

/// Trains one model per loss kind from the same initialization and data, each
/// with its reference hyper-parameters.
pub fn loss_compare(
    pairs: &PairList,
    ontology: &Ontology,
    mentions: &MentionSet,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    index_batch_size: usize,
) -> Result<(EvalReport, Vec<RunSummary>)> {
    let init = init_model(encoder)?;
    let baseline = evaluate_model(&init, ontology, mentions, index_batch_size)?;
    let mut rows = Vec::with_capacity(LossKind::ALL.len());
    for kind in LossKind::ALL {
        let cfg = TrainConfig {
            loss: LossParams::defaults(kind),
            ..train.clone()
        };
        let outcome = pretrain(pairs, init.clone(), &cfg)?;
        let report = evaluate_model(&outcome.model, ontology, mentions, index_batch_size)?;
        rows.push(RunSummary {
            kind,
            final_loss: final_loss(&outcome, 50),
            acc_at_1: report.acc_at_1,
            acc_at_5: report.acc_at_5,
        });
    }
    Ok((baseline, rows))
}
