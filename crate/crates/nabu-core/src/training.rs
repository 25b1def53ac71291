//! Corpus assembly and the teacher-forced optimization loop.
//!
//! Batches are formed by bucketing examples by graph size (after a seeded
//! shuffle), padding targets within each batch, accumulating per-example
//! gradients, then clipping to the global-norm budget and applying one Adam
//! step per batch.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::config::{SessionConfig, TrainConfig};
use crate::graph::{LanguageTag, ReifiedGraph};
use crate::model;
use crate::params::{
    adam_step, clip_grad_norm, merge_grads, scale_grads, AdamConfig, AdamState, Binder,
    ParameterStore,
};
use crate::rng::stream;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, TensorError};
use crate::tokenizer::{Vocabulary, BOS, EOS, PAD};

/// One training pair: a reified graph and its framed target token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub graph: ReifiedGraph,
    /// `[BOS, pieces.., EOS]`.
    pub target: Vec<u32>,
    pub lang: LanguageTag,
}

impl Example {
    pub fn new(graph: ReifiedGraph, vocab: &Vocabulary, text: &str) -> Self {
        let mut target = alloc::vec![BOS];
        target.extend(vocab.encode(text));
        target.push(EOS);
        let lang = graph.lang;
        Example {
            graph,
            target,
            lang,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Tensor(TensorError),
    /// A configured language has no examples.
    MissingLanguageData(LanguageTag),
    EmptyCorpus,
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::MissingLanguageData(lang) => {
                write!(f, "no training data for language {lang}")
            }
            TrainError::EmptyCorpus => f.write_str("training corpus is empty"),
        }
    }
}

impl core::error::Error for TrainError {}

/// Concatenates the per-language example lists and applies one seeded
/// global shuffle. Every configured language must contribute examples.
pub fn build_corpus(
    per_language: Vec<(LanguageTag, Vec<Example>)>,
    languages: &[LanguageTag],
    seed: u64,
) -> Result<Vec<Example>, TrainError> {
    for &lang in languages {
        let found = per_language
            .iter()
            .any(|(l, examples)| *l == lang && !examples.is_empty());
        if !found {
            return Err(TrainError::MissingLanguageData(lang));
        }
    }
    let mut corpus: Vec<Example> = Vec::new();
    for (_, examples) in per_language {
        corpus.extend(examples);
    }
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    corpus.shuffle(&mut stream(seed, "corpus-shuffle", 0));
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub token_accuracy: f64,
    pub batches: usize,
}

/// Seeded epoch ordering: shuffle, then bucket by graph size, then shuffle
/// whole batches.
fn epoch_batches(
    examples: &[Example],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut stream(seed, "epoch-order", epoch));
    order.sort_by_key(|&i| examples[i].graph.node_count());
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    batches.shuffle(&mut stream(seed, "batch-order", epoch));
    batches
}

/// One pass over the corpus. Returns token-weighted mean loss and accuracy.
pub fn train_epoch<S: Scalar>(
    examples: &[Example],
    store: &mut ParameterStore<S>,
    adam: &mut AdamState<S>,
    vocab: &Vocabulary,
    session: &SessionConfig,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochMetrics, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let batches = epoch_batches(examples, cfg.batch_size, cfg.seed, epoch);
    let mut dropout_rng = stream(cfg.seed, "dropout", epoch);
    let mut epoch_loss = 0.0f64;
    let mut epoch_tokens = 0usize;
    let mut epoch_correct = 0usize;

    for batch in &batches {
        let pad_to = batch
            .iter()
            .map(|&i| examples[i].target.len())
            .max()
            .unwrap();
        let mut grads: BTreeMap<alloc::string::String, crate::tensor::Tensor<S>> = BTreeMap::new();
        let mut batch_tokens = 0usize;

        for &idx in batch {
            let example = &examples[idx];
            let mut padded = example.target.clone();
            padded.resize(pad_to, PAD);

            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let forward = model::teacher_forced(
                &mut tape,
                &mut binder,
                store,
                vocab,
                &example.graph,
                &padded,
                session,
                session.model.dropout,
                &mut dropout_rng,
            )?;
            let mut all = tape.backward(&forward.loss)?;
            merge_grads(&mut grads, binder.grads(&mut all));
            epoch_loss += forward.stats.loss_sum;
            batch_tokens += forward.stats.tokens;
            epoch_correct += forward.stats.correct;
        }
        epoch_tokens += batch_tokens;

        // Gradient of the batch-mean loss, then the global-norm clip.
        scale_grads(&mut grads, S::one() / lit::<S>(batch_tokens as f64));
        clip_grad_norm(&mut grads, lit::<S>(cfg.grad_clip));
        let lr = cfg.lr_schedule.rate(cfg.lr, adam.step + 1);
        adam_step(store, &grads, adam, &AdamConfig::with_lr(lit(lr)))?;
    }

    Ok(EpochMetrics {
        mean_loss: epoch_loss / epoch_tokens.max(1) as f64,
        token_accuracy: epoch_correct as f64 / epoch_tokens.max(1) as f64,
        batches: batches.len(),
    })
}

/// Outcome of a multi-epoch run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub per_epoch: Vec<EpochMetrics>,
    /// The epoch count actually run (early stop may cut it short).
    pub epochs_run: usize,
}

/// Runs up to `cfg.epochs` epochs, stopping early once the mean loss drops
/// below `cfg.early_stop_loss`. `on_epoch` observes each epoch's metrics.
pub fn train<S: Scalar>(
    examples: &[Example],
    store: &mut ParameterStore<S>,
    vocab: &Vocabulary,
    session: &SessionConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    let mut adam = AdamState::new();
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let metrics = train_epoch(examples, store, &mut adam, vocab, session, cfg, epoch as u64)?;
        on_epoch(epoch, &metrics);
        let stop = cfg
            .early_stop_loss
            .is_some_and(|limit| metrics.mean_loss < limit);
        per_epoch.push(metrics);
        if stop {
            break;
        }
    }
    let epochs_run = per_epoch.len();
    Ok(TrainOutcome {
        per_epoch,
        epochs_run,
    })
}
