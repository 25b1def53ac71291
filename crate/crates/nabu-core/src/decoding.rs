//! Beam-search generation and the copy mechanism for unknown outputs.
//!
//! The beam keeps the `beam_size` best partial hypotheses by cumulative
//! log-probability; finished hypotheses are ranked by length-normalized
//! score `log_prob / len^exponent`. With `beam_size = 1` the search is
//! exactly greedy argmax decoding.
//!
//! The copy mechanism post-processes UNK outputs in two stages: an UNK is
//! first replaced by the in-vocabulary words of the source node holding the
//! maximal cross-attention at that step; if that node's label tokens are not
//! themselves vocabulary words, the raw node label is copied verbatim
//! (underscores to spaces, occurrence suffix stripped).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

// Needed by the no_std build; std test builds resolve these inherently.
#[allow(unused_imports)]
use num_traits::Float;

use crate::graph::{node_feature_labels, NodeKind, ReifiedGraph};
use crate::scalar::Scalar;
use crate::tensor::TensorError;
use crate::tokenizer::{Vocabulary, BOS, EOS, MARKER, PAD, UNK};

/// Incremental sequence model abstraction: the beam drives any scorer that
/// can consume one token and yield next-token log-probabilities plus the
/// attention over source memory rows at that step.
pub trait Scorer<S: Scalar> {
    type State: Clone;

    fn start(&self) -> Result<Self::State, TensorError>;

    /// Consumes `token` and returns `(log_probs, attention)`.
    fn step(&self, state: &mut Self::State, token: u32)
        -> Result<(Vec<S>, Vec<S>), TensorError>;
}

/// One (partial or finished) decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens; includes the terminating EOS when one was emitted.
    pub tokens: Vec<u32>,
    /// Cumulative log-probability; non-increasing as tokens are appended.
    pub log_prob: f64,
    /// Cross-attention over memory rows, one vector per emitted token.
    pub attention: Vec<Vec<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    fn empty() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            attention: Vec::new(),
            finished: false,
        }
    }

    /// Length-normalized score `log_prob / len^exponent` (length ≥ 1).
    pub fn score(&self, exponent: f64) -> f64 {
        let len = self.tokens.len().max(1) as f64;
        self.log_prob / len.powf(exponent)
    }
}

/// Runs beam search. `max_len` caps the number of emitted tokens; any
/// hypothesis still active there is forced-finished. Returns up to
/// `beam_size` hypotheses sorted by normalized score, best first.
pub fn beam_search<S: Scalar, M: Scorer<S>>(
    scorer: &M,
    beam_size: usize,
    max_len: usize,
    length_norm: f64,
    bos: u32,
    eos: u32,
) -> Result<Vec<Hypothesis>, TensorError> {
    assert!(beam_size >= 1 && max_len >= 1);
    let mut active: Vec<(M::State, Hypothesis)> =
        alloc::vec![(scorer.start()?, Hypothesis::empty())];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        // Advance every active hypothesis by consuming its last token.
        let mut steps: Vec<(Vec<S>, Vec<f64>)> = Vec::with_capacity(active.len());
        for (state, hyp) in active.iter_mut() {
            let consume = hyp.tokens.last().copied().unwrap_or(bos);
            let (log_probs, attention) = scorer.step(state, consume)?;
            let attention = attention.iter().map(|a| a.as_f64()).collect();
            steps.push((log_probs, attention));
        }

        // All (hypothesis × token) extensions, best cumulative first; ties
        // break towards the lower token id, then the lower beam index.
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (idx, (log_probs, _)) in steps.iter().enumerate() {
            let base = active[idx].1.log_prob;
            for (token, lp) in log_probs.iter().enumerate() {
                candidates.push((idx, token as u32, base + lp.as_f64()));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.0.cmp(&b.0))
        });

        let mut next_active: Vec<(M::State, Hypothesis)> = Vec::with_capacity(beam_size);
        for &(idx, token, log_prob) in candidates.iter().take(beam_size) {
            let (state, hyp) = &active[idx];
            let mut extended = hyp.clone();
            extended.tokens.push(token);
            extended.log_prob = log_prob;
            extended.attention.push(steps[idx].1.clone());
            if token == eos {
                extended.finished = true;
                finished.push(extended);
            } else {
                next_active.push((state.clone(), extended));
            }
        }
        active = next_active;
        if active.is_empty() {
            break;
        }
    }

    // Forced finish at max_len.
    for (_, mut hyp) in active {
        hyp.finished = true;
        finished.push(hyp);
    }

    finished.sort_by(|a, b| {
        b.score(length_norm)
            .partial_cmp(&a.score(length_norm))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.tokens.cmp(&b.tokens))
    });
    finished.truncate(beam_size);
    Ok(finished)
}

/// One substitution made by the copy mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyRecord {
    /// Index into the hypothesis' token sequence.
    pub target_position: usize,
    /// Graph node whose label was copied.
    pub source_node: usize,
    pub substituted: String,
}

/// Final text plus the substitutions that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyOutcome {
    pub text: String,
    pub copies: Vec<CopyRecord>,
}

/// Surface text of a hypothesis without copy substitution.
pub fn plain_text(hyp: &Hypothesis, vocab: &Vocabulary) -> String {
    let kept: Vec<u32> = hyp
        .tokens
        .iter()
        .copied()
        .filter(|&t| t != BOS && t != EOS && t != PAD)
        .collect();
    vocab.decode(&kept)
}

/// Resolves every UNK in the hypothesis through the attention-aligned
/// source node. `source_map` maps memory rows to graph node indices (rows
/// without one, such as separator positions, are skipped).
pub fn apply_copy(
    hyp: &Hypothesis,
    graph: &ReifiedGraph,
    vocab: &Vocabulary,
    source_map: &[Option<usize>],
) -> CopyOutcome {
    let features = node_feature_labels(graph);
    let mut text = plain_text(hyp, vocab);
    let mut copies = Vec::new();

    for (pos, &token) in hyp.tokens.iter().enumerate() {
        if token != UNK {
            continue;
        }
        let attention = &hyp.attention[pos];
        let mut best: Option<(usize, f64)> = None;
        for (row, weight) in attention.iter().enumerate() {
            let Some(node) = source_map.get(row).copied().flatten() else {
                continue;
            };
            // Strictly-greater keeps ties on the lowest node index.
            if best.map_or(true, |(_, w)| *weight > w) {
                best = Some((node, *weight));
            }
        }
        let Some((node, _)) = best else {
            continue;
        };

        let tokens = &features[node];
        let all_known = tokens
            .iter()
            .all(|t| vocab.id_of(&alloc::format!("{MARKER}{t}")).is_some());
        let substituted = if all_known {
            tokens.join(" ")
        } else {
            raw_label_surface(graph, node)
        };

        if let Some(at) = text.find("⟨UNK⟩") {
            text = alloc::format!(
                "{}{}{}",
                &text[..at],
                substituted,
                &text[at + "⟨UNK⟩".len()..]
            );
        }
        copies.push(CopyRecord {
            target_position: pos,
            source_node: node,
            substituted,
        });
    }
    CopyOutcome { text, copies }
}

/// Verbatim label copy: occurrence suffix stripped, underscores to spaces.
fn raw_label_surface(graph: &ReifiedGraph, node: usize) -> String {
    let label = &graph.nodes[node];
    let base = match graph.kinds[node] {
        NodeKind::Predicate { .. } => label.split('#').next().unwrap_or(label),
        _ => label.as_str(),
    };
    base.replace('_', " ").to_string()
}
