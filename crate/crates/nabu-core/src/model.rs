//! The full verbalizer: shared embeddings, either encoder (graph attention
//! or linearized-baseline), and the Transformer decoder, wired for training
//! forwards and incremental generation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::{EncoderKind, ModelConfig, SessionConfig};
use crate::decoding::{self, CopyOutcome, Hypothesis, Scorer};
use crate::gat;
use crate::graph::{NodeKind, ReifiedGraph};
use crate::params::{glorot, Binder, ParameterStore};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};
use crate::tokenizer::{lang_token_id, Vocabulary, BOS, EOS, PAD, SEP};
use crate::transformer::{
    self, AttentionTrace, DecodeContext, DecoderForward, LayerState,
};

/// Creates every trainable weight for the configured architecture, drawing
/// in a fixed order so identical seeds give identical stores.
pub fn init_store<S: Scalar>(session: &SessionConfig, seed: u64) -> ParameterStore<S> {
    let cfg = &session.model;
    let mut rng = stream(seed, "init", 0);
    let mut store = ParameterStore::new();
    store.insert("emb", glorot(&[cfg.vocab_size, cfg.embed_dim], &mut rng));
    match session.encoder {
        EncoderKind::Gat => gat::init_params(&mut store, cfg, &mut rng),
        EncoderKind::LinearizedTransformer => {
            transformer::init_linearized_params(&mut store, cfg, &mut rng)
        }
    }
    transformer::init_decoder_params(&mut store, cfg, &mut rng);
    store
}

/// Node indices of each triple's (subject, predicate, object), recovering
/// occurrence-indexed predicate nodes in input order.
pub fn triple_node_indices(graph: &ReifiedGraph) -> Vec<(usize, usize, usize)> {
    let by_label = |label: &str| graph.nodes.iter().position(|n| n == label);
    let mut seen: Vec<(&str, usize)> = Vec::new();
    graph
        .triples
        .iter()
        .map(|t| {
            let s = by_label(&t.subject).expect("subject node");
            let o = by_label(&t.object).expect("object node");
            let occurrence = match seen.iter_mut().find(|(p, _)| *p == t.predicate) {
                Some((_, count)) => {
                    *count += 1;
                    *count - 1
                }
                None => {
                    seen.push((&t.predicate, 1));
                    0
                }
            };
            let p = graph
                .nodes
                .iter()
                .zip(graph.kinds.iter())
                .position(|(n, k)| match k {
                    NodeKind::Predicate { occurrence: o } => {
                        (n == &alloc::format!("{}#{}", t.predicate, occurrence) && *o == occurrence)
                            || (n == &t.predicate && *o == 0)
                    }
                    _ => false,
                })
                .expect("predicate node");
            (s, p, o)
        })
        .collect()
}

/// Token ids of the linearized baseline input (language token first, one
/// separator between triples) plus the memory-row → graph-node map used by
/// the copy mechanism.
pub fn linearized_ids(
    graph: &ReifiedGraph,
    vocab: &Vocabulary,
) -> (Vec<usize>, Vec<Option<usize>>) {
    let features = crate::graph::node_feature_labels(graph);
    let nodes = triple_node_indices(graph);
    let mut ids: Vec<usize> = alloc::vec![lang_token_id(graph.lang) as usize];
    let mut map: Vec<Option<usize>> = alloc::vec![Some(0)];
    for (k, &(s, p, o)) in nodes.iter().enumerate() {
        if k > 0 {
            ids.push(SEP as usize);
            map.push(None);
        }
        for node in [s, p, o] {
            for feature in &features[node] {
                for id in vocab.encode(feature) {
                    ids.push(id as usize);
                    map.push(Some(node));
                }
            }
        }
    }
    (ids, map)
}

/// Encoder output in either mode.
pub struct EncodedInput<S> {
    pub memory: Tensor<S>,
    /// Memory row → graph node (identity for the graph encoder).
    pub source_map: Vec<Option<usize>>,
    /// Graph-attention coefficients per layer (graph encoder only).
    pub encoder_attention: Vec<gat::AttentionCoefficients>,
    pub traces: Vec<AttentionTrace>,
}

/// Runs the configured encoder over one graph.
#[allow(clippy::too_many_arguments)]
pub fn encode_input<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    vocab: &Vocabulary,
    graph: &ReifiedGraph,
    session: &SessionConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<EncodedInput<S>, TensorError> {
    let cfg = &session.model;
    match session.encoder {
        EncoderKind::Gat => {
            let out = gat::encode(tape, binder, store, vocab, graph, cfg, dropout, rng)?;
            Ok(EncodedInput {
                memory: out.memory,
                source_map: (0..graph.node_count()).map(Some).collect(),
                encoder_attention: out.attention,
                traces: Vec::new(),
            })
        }
        EncoderKind::LinearizedTransformer => {
            let (ids, map) = linearized_ids(graph, vocab);
            let mut traces = Vec::new();
            let memory = transformer::encode_linearized(
                tape,
                Some(binder),
                store,
                &ids,
                cfg,
                dropout,
                rng,
                &mut traces,
            )?;
            Ok(EncodedInput {
                memory,
                source_map: map,
                encoder_attention: Vec::new(),
                traces,
            })
        }
    }
}

/// Splits a framed target `[BOS, y₁.., EOS, PAD..]` into the decoder input
/// (everything but the last position) and the shifted prediction targets.
pub fn next_token_split(target: &[u32]) -> (Vec<usize>, Vec<u32>) {
    debug_assert!(target.len() >= 2 && target[0] == BOS);
    let input = target[..target.len() - 1]
        .iter()
        .map(|&t| t as usize)
        .collect();
    let expected = target[1..].to_vec();
    (input, expected)
}

pub struct ForwardStats {
    pub loss_sum: f64,
    pub tokens: usize,
    pub correct: usize,
}

pub struct TeacherForced<S> {
    /// Summed (not mean) cross-entropy over non-PAD positions.
    pub loss: Tensor<S>,
    pub stats: ForwardStats,
    pub decoder: DecoderForward<S>,
}

/// Teacher-forcing forward pass for one example.
#[allow(clippy::too_many_arguments)]
pub fn teacher_forced<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    vocab: &Vocabulary,
    graph: &ReifiedGraph,
    target: &[u32],
    session: &SessionConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<TeacherForced<S>, TensorError> {
    let encoded = encode_input(tape, binder, store, vocab, graph, session, dropout, rng)?;
    let (input_ids, expected) = next_token_split(target);
    let decoder = transformer::decoder_forward(
        tape,
        Some(binder),
        store,
        &encoded.memory,
        &input_ids,
        &session.model,
        dropout,
        rng,
    )?;
    let loss = tape.cross_entropy_sum(&decoder.logits, &expected, PAD)?;

    let mut tokens = 0usize;
    let mut correct = 0usize;
    for (pos, &want) in expected.iter().enumerate() {
        if want == PAD {
            continue;
        }
        tokens += 1;
        let row = decoder.logits.row(pos);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
            .map(|(i, _)| i as u32)
            .unwrap_or(0);
        if argmax == want {
            correct += 1;
        }
    }
    Ok(TeacherForced {
        stats: ForwardStats {
            loss_sum: loss.item().as_f64(),
            tokens,
            correct,
        },
        loss,
        decoder,
    })
}

/// Incremental scorer over a fixed encoded input; drives the beam search.
pub struct ModelScorer<'a, S: Scalar> {
    store: &'a ParameterStore<S>,
    cfg: &'a ModelConfig,
    ctx: DecodeContext<S>,
}

impl<'a, S: Scalar> ModelScorer<'a, S> {
    pub fn new(
        store: &'a ParameterStore<S>,
        cfg: &'a ModelConfig,
        memory: Tensor<S>,
    ) -> Result<Self, TensorError> {
        Ok(ModelScorer {
            store,
            cfg,
            ctx: DecodeContext::new(store, memory, cfg)?,
        })
    }
}

impl<'a, S: Scalar> Scorer<S> for ModelScorer<'a, S> {
    type State = LayerState<S>;

    fn start(&self) -> Result<LayerState<S>, TensorError> {
        Ok(LayerState::new(self.cfg))
    }

    fn step(
        &self,
        state: &mut LayerState<S>,
        token: u32,
    ) -> Result<(Vec<S>, Vec<S>), TensorError> {
        transformer::decode_step(self.store, &self.ctx, state, token, self.cfg)
    }
}

pub struct Generation {
    pub text: String,
    /// Length-normalized score of the best hypothesis.
    pub score: f64,
    pub hypothesis: Hypothesis,
    pub copies: Vec<decoding::CopyRecord>,
    /// Graph-attention dump text, when the graph encoder ran.
    pub attention_dump: Option<String>,
}

/// Encodes the graph and beam-decodes the best hypothesis, applying the
/// copy mechanism when configured.
pub fn generate<S: Scalar>(
    store: &ParameterStore<S>,
    vocab: &Vocabulary,
    graph: &ReifiedGraph,
    session: &SessionConfig,
) -> Result<Generation, TensorError> {
    let cfg = &session.model;
    let mut tape = Tape::inference();
    let mut binder = Binder::new();
    let mut rng = stream(0, "generate", 0);
    let encoded = encode_input(
        &mut tape, &mut binder, store, vocab, graph, session, 0.0, &mut rng,
    )?;

    let attention_dump = (!encoded.encoder_attention.is_empty()).then(|| {
        let mut out = String::new();
        for (layer, coeff) in encoded.encoder_attention.iter().enumerate() {
            out.push_str(&coeff.dump(layer));
        }
        out
    });

    let scorer = ModelScorer::new(store, cfg, encoded.memory)?;
    let hypotheses = decoding::beam_search(
        &scorer,
        cfg.beam_size,
        cfg.max_decode_len,
        cfg.length_norm,
        BOS,
        EOS,
    )?;
    let best = hypotheses.into_iter().next().expect("beam returns at least one");
    let score = best.score(cfg.length_norm);
    let (text, copies) = if cfg.copy_mechanism {
        let CopyOutcome { text, copies } =
            decoding::apply_copy(&best, graph, vocab, &encoded.source_map);
        (text, copies)
    } else {
        (decoding::plain_text(&best, vocab), Vec::new())
    };
    Ok(Generation {
        text,
        score,
        hypothesis: best,
        copies,
        attention_dump,
    })
}
