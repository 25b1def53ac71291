//! Graph-attention encoder over the reified graph.
//!
//! One forward pass starts from four dense inputs: the node vectors `H`
//! (mean of each node's subword embeddings), per-edge source/destination
//! vectors `S`/`D`, and label vectors `L` (relation-type embeddings pooled
//! per destination node). `S` and `D` fuse into the edge vector
//! `E = ReLU([S ‖ D]·W + b)`, pooled per destination; the encoder stack then
//! runs multi-head graph attention over `H + L + E`, each layer wrapped in a
//! residual connection and layer norm.
//!
//! Message passing follows edge direction: node `i` attends over its
//! in-neighbors plus itself (self-loops guarantee every node an update).
//! Attention scores use LeakyReLU (slope 0.2) and the aggregation
//! nonlinearity is ELU, adopted from the cited graph-attention design.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::{AttentionMode, EdgeAggregation, ModelConfig};
use crate::graph::{NodeKind, ReifiedGraph};
use crate::params::{glorot, Binder, ParameterStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::tokenizer::{lang_token_id, Vocabulary};

/// The four dense encoder inputs plus the adjacency they were built from.
pub struct EncoderInputs<S> {
    /// `H`: one row per node.
    pub node_vectors: Tensor<S>,
    /// `S`: one row per edge (source endpoint embedding).
    pub source_vectors: Tensor<S>,
    /// `D`: one row per edge (destination endpoint embedding).
    pub destination_vectors: Tensor<S>,
    /// `L`: relation-type embeddings pooled onto destination nodes.
    pub label_vectors: Tensor<S>,
    /// In-neighbor lists, self-loop first.
    pub neighbors: Vec<Vec<usize>>,
    /// Destination node per edge, in edge order.
    pub edge_destinations: Vec<usize>,
}

/// Per-head attention coefficients of one layer, recorded as plain floats
/// for diagnostics and the error-analysis dump.
pub struct AttentionCoefficients {
    /// `(node, neighbor)` in evaluation order.
    pub pairs: Vec<(usize, usize)>,
    /// One coefficient vector per head, aligned with `pairs`.
    pub per_head: Vec<Vec<f64>>,
}

impl AttentionCoefficients {
    /// Σ_j α_ij per node for one head.
    pub fn row_sums(&self, head: usize, node_count: usize) -> Vec<f64> {
        let mut sums = alloc::vec![0.0; node_count];
        for (k, &(i, _)) in self.pairs.iter().enumerate() {
            sums[i] += self.per_head[head][k];
        }
        sums
    }

    pub fn coefficient(&self, head: usize, node: usize, neighbor: usize) -> Option<f64> {
        self.pairs
            .iter()
            .position(|&(i, j)| i == node && j == neighbor)
            .map(|k| self.per_head[head][k])
    }

    /// Text matrix per head, one `node <- neighbor: α` line per pair.
    pub fn dump(&self, layer: usize) -> String {
        let mut out = String::new();
        for head in 0..self.per_head.len() {
            out.push_str(&format!("layer {layer} head {head}\n"));
            for (k, &(i, j)) in self.pairs.iter().enumerate() {
                out.push_str(&format!("  {i} <- {j}: {:.6}\n", self.per_head[head][k]));
            }
        }
        out
    }
}

pub struct EncodeOutput<S> {
    /// `(z × n)` contextual node representations; cross-attention memory.
    pub memory: Tensor<S>,
    pub inputs: EncoderInputs<S>,
    /// Attention coefficients per layer.
    pub attention: Vec<AttentionCoefficients>,
}

/// Registers the encoder's trainable weights. The shared embedding matrix
/// `emb` is created by the model, not here.
pub fn init_params<S: Scalar, R: rand::Rng>(
    store: &mut ParameterStore<S>,
    cfg: &ModelConfig,
    rng: &mut R,
) {
    let (m, n) = (cfg.embed_dim, cfg.hidden_dim);
    store.insert("enc.label_emb", glorot(&[3, m], rng));
    store.insert("enc.edge.w", glorot(&[2 * m, m], rng));
    store.insert("enc.edge.b", Tensor::zeros(alloc::vec![m]));
    for layer in 0..cfg.layers {
        store.insert(&format!("enc.l{layer}.w"), glorot(&[m, n], rng));
        store.insert(&format!("enc.l{layer}.a_src"), glorot(&[1, n], rng));
        store.insert(&format!("enc.l{layer}.a_dst"), glorot(&[1, n], rng));
        store.insert(&format!("enc.l{layer}.w_o"), glorot(&[n, n], rng));
        store.insert(&format!("enc.l{layer}.b_o"), Tensor::zeros(alloc::vec![n]));
        store.insert(
            &format!("enc.l{layer}.ln_g"),
            Tensor::from_vec(alloc::vec![n], alloc::vec![S::one(); n]),
        );
        store.insert(&format!("enc.l{layer}.ln_b"), Tensor::zeros(alloc::vec![n]));
    }
}

/// Subword ids for every node, flattened, with the owning node per piece.
/// The language node embeds through its control token.
pub fn node_piece_ids(graph: &ReifiedGraph, vocab: &Vocabulary) -> (Vec<usize>, Vec<usize>) {
    let features = crate::graph::node_feature_labels(graph);
    let mut ids = Vec::new();
    let mut owners = Vec::new();
    for (node, kind) in graph.kinds.iter().enumerate() {
        match kind {
            NodeKind::Language(tag) => {
                ids.push(lang_token_id(*tag) as usize);
                owners.push(node);
            }
            _ => {
                for feature in &features[node] {
                    for id in vocab.encode(feature) {
                        ids.push(id as usize);
                        owners.push(node);
                    }
                }
            }
        }
    }
    (ids, owners)
}

/// Builds `H`, `S`, `D`, `L` and the adjacency for one graph.
pub fn build_inputs<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    vocab: &Vocabulary,
    graph: &ReifiedGraph,
) -> Result<EncoderInputs<S>, TensorError> {
    let z = graph.node_count();
    let emb = binder.bind(tape, store, "emb");
    let label_emb = binder.bind(tape, store, "enc.label_emb");

    let (piece_ids, owners) = node_piece_ids(graph, vocab);
    let piece_rows = tape.gather_rows(&emb, &piece_ids)?;
    let node_vectors = tape.segment_mean_rows(&piece_rows, &owners, z)?;

    let sources: Vec<usize> = graph.edges.iter().map(|e| e.0).collect();
    let destinations: Vec<usize> = graph.edges.iter().map(|e| e.2).collect();
    let relations: Vec<usize> = graph.edges.iter().map(|e| e.1.index()).collect();

    let source_vectors = tape.gather_rows(&node_vectors, &sources)?;
    let destination_vectors = tape.gather_rows(&node_vectors, &destinations)?;
    let edge_labels = tape.gather_rows(&label_emb, &relations)?;
    let label_vectors = tape.segment_mean_rows(&edge_labels, &destinations, z)?;

    Ok(EncoderInputs {
        node_vectors,
        source_vectors,
        destination_vectors,
        label_vectors,
        neighbors: graph.in_neighbors(),
        edge_destinations: destinations,
    })
}

/// `E = ReLU([S ‖ D]·W + b)`, one row per edge.
pub fn edge_fuse<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    source_vectors: &Tensor<S>,
    destination_vectors: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let w = binder.bind(tape, store, "enc.edge.w");
    let b = binder.bind(tape, store, "enc.edge.b");
    let fused = tape.concat_cols(source_vectors, destination_vectors)?;
    let projected = tape.matmul(&fused, &w)?;
    let shifted = tape.add_row(&projected, &b)?;
    Ok(tape.relu(&shifted))
}

/// The stack input `H + L + E_agg` (edge vectors pooled per destination).
pub fn combined_input<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    inputs: &EncoderInputs<S>,
    cfg: &ModelConfig,
) -> Result<Tensor<S>, TensorError> {
    let z = inputs.node_vectors.rows();
    let edge_vectors = edge_fuse(
        tape,
        binder,
        store,
        &inputs.source_vectors,
        &inputs.destination_vectors,
    )?;
    let pooled = match cfg.edge_aggregation {
        EdgeAggregation::Mean => {
            tape.segment_mean_rows(&edge_vectors, &inputs.edge_destinations, z)?
        }
        EdgeAggregation::Sum => {
            tape.segment_sum_rows(&edge_vectors, &inputs.edge_destinations, z)?
        }
    };
    let hl = tape.add(&inputs.node_vectors, &inputs.label_vectors)?;
    tape.add(&hl, &pooled)
}

/// One multi-head graph-attention layer with residual and layer norm.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    layer: usize,
    x: &Tensor<S>,
    neighbors: &[Vec<usize>],
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<(Tensor<S>, AttentionCoefficients), TensorError> {
    let z = x.rows();
    let d = cfg.head_dim();
    let w = binder.bind(tape, store, &format!("enc.l{layer}.w"));
    let a_src = binder.bind(tape, store, &format!("enc.l{layer}.a_src"));
    let a_dst = binder.bind(tape, store, &format!("enc.l{layer}.a_dst"));
    let w_o = binder.bind(tape, store, &format!("enc.l{layer}.w_o"));
    let b_o = binder.bind(tape, store, &format!("enc.l{layer}.b_o"));
    let ln_g = binder.bind(tape, store, &format!("enc.l{layer}.ln_g"));
    let ln_b = binder.bind(tape, store, &format!("enc.l{layer}.ln_b"));

    // Flattened (node, neighbor) pairs in adjacency order, so the neighbor
    // summation order is stable under node permutations.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, ns) in neighbors.iter().enumerate() {
        for &j in ns {
            pairs.push((i, j));
        }
    }
    let centers: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let others: Vec<usize> = pairs.iter().map(|p| p.1).collect();

    let projected = tape.matmul(x, &w)?;
    let mut head_outputs: Vec<Tensor<S>> = Vec::with_capacity(cfg.heads);
    let mut coefficients = AttentionCoefficients {
        pairs: pairs.clone(),
        per_head: Vec::with_capacity(cfg.heads),
    };

    for head in 0..cfg.heads {
        let g = tape.col_slice(&projected, head * d, (head + 1) * d)?;
        let alpha = match cfg.attention_mode {
            AttentionMode::Gat => {
                let a_src_h = tape.col_slice(&a_src, head * d, (head + 1) * d)?;
                let a_dst_h = tape.col_slice(&a_dst, head * d, (head + 1) * d)?;
                let a_src_col = tape.transpose(&a_src_h);
                let a_dst_col = tape.transpose(&a_dst_h);
                let center_scores = tape.matmul(&g, &a_src_col)?;
                let other_scores = tape.matmul(&g, &a_dst_col)?;
                let e_center = tape.gather(&center_scores, &centers)?;
                let e_other = tape.gather(&other_scores, &others)?;
                let e_sum = tape.add(&e_center, &e_other)?;
                let e = tape.leaky_relu(&e_sum, lit(0.2));
                tape.segment_softmax(&e, &centers, z)?
            }
            AttentionMode::Gcn => {
                // Constant 1/|N_i| normalization: the degenerate case the
                // learned coefficients replace.
                let values: Vec<S> = pairs
                    .iter()
                    .map(|&(i, _)| S::one() / lit::<S>(neighbors[i].len() as f64))
                    .collect();
                Tensor::from_vec(alloc::vec![pairs.len()], values)
            }
        };
        coefficients
            .per_head
            .push(alpha.data().iter().map(|v| v.as_f64()).collect());

        let neighbor_rows = tape.gather_rows(&g, &others)?;
        let weighted = tape.scale_rows(&neighbor_rows, &alpha)?;
        let aggregated = tape.segment_sum_rows(&weighted, &centers, z)?;
        head_outputs.push(tape.elu(&aggregated));
    }

    let mut concat = head_outputs[0].clone();
    for head in &head_outputs[1..] {
        concat = tape.concat_cols(&concat, head)?;
    }
    let fused = tape.matmul(&concat, &w_o)?;
    let fused = tape.add_row(&fused, &b_o)?;
    let fused = tape.dropout(&fused, dropout, rng);
    let residual = tape.add(x, &fused)?;
    let out = tape.layer_norm(&residual, &ln_g, &ln_b)?;
    Ok((out, coefficients))
}

/// Full encoder: builds inputs and stacks `cfg.layers` attention layers.
/// Memory rows follow graph node order.
#[allow(clippy::too_many_arguments)]
pub fn encode<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    binder: &mut Binder<S>,
    store: &ParameterStore<S>,
    vocab: &Vocabulary,
    graph: &ReifiedGraph,
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<EncodeOutput<S>, TensorError> {
    let inputs = build_inputs(tape, binder, store, vocab, graph)?;
    let mut x = combined_input(tape, binder, store, &inputs, cfg)?;
    let mut attention = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let (next, coeff) = gat_layer(
            tape,
            binder,
            store,
            layer,
            &x,
            &inputs.neighbors,
            cfg,
            dropout,
            rng,
        )?;
        x = next;
        attention.push(coeff);
    }
    Ok(EncodeOutput {
        memory: x,
        inputs,
        attention,
    })
}
