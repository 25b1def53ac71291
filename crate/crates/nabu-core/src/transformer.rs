//! Autoregressive Transformer decoder with masked self-attention and
//! cross-attention over the encoder memory, plus the self-attention encoder
//! used by the linearized-input baseline.
//!
//! Layer form, following the residual equation with the feed-forward/norm
//! block inside the branch: `u = x + LN₁(FFN(SelfAttn(x)))`, then the
//! cross-attention sublayer with its own residual
//! `h = u + LN₂(CrossAttn(u, memory))`. Attention logits scale by
//! `1/√d_head`; positions are fixed sinusoidal.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Needed by the no_std build; std test builds resolve these inherently.
#[allow(unused_imports)]
use num_traits::Float;

use crate::config::ModelConfig;
use crate::params::{glorot, Binder, ParameterStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, Tensor, TensorError};

/// Fixed sinusoidal position table: `sin` on even columns, `cos` on odd,
/// so row 0 is `[0, 1, 0, 1, ...]`.
pub fn positional_table<S: Scalar>(len: usize, dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let rate = (pos as f64) / 10000f64.powf(2.0 * pair / dim as f64);
            data.push(lit::<S>(if j % 2 == 0 { rate.sin() } else { rate.cos() }));
        }
    }
    Tensor::from_vec(alloc::vec![len, dim], data)
}

fn fetch<'s, S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Option<&mut Binder<S>>,
    store: &'s ParameterStore<S>,
    name: &str,
) -> Cow<'s, Tensor<S>> {
    match binder {
        Some(b) => Cow::Owned(b.bind(tape, store, name)),
        None => Cow::Borrowed(
            store
                .get(name)
                .unwrap_or_else(|| panic!("unknown parameter {name}")),
        ),
    }
}

/// Registers the decoder's trainable weights (shared `emb` excluded).
pub fn init_decoder_params<S: Scalar, R: rand::Rng>(
    store: &mut ParameterStore<S>,
    cfg: &ModelConfig,
    rng: &mut R,
) {
    let (m, n, ff) = (cfg.embed_dim, cfg.hidden_dim, cfg.ffn_dim);
    store.insert("dec.w_in", glorot(&[m, n], rng));
    for layer in 0..cfg.layers {
        for block in ["self", "cross"] {
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert(&format!("dec.l{layer}.{block}.{w}"), glorot(&[n, n], rng));
            }
        }
        store.insert(&format!("dec.l{layer}.ffn.w1"), glorot(&[n, ff], rng));
        store.insert(&format!("dec.l{layer}.ffn.b1"), Tensor::zeros(alloc::vec![ff]));
        store.insert(&format!("dec.l{layer}.ffn.w2"), glorot(&[ff, n], rng));
        store.insert(&format!("dec.l{layer}.ffn.b2"), Tensor::zeros(alloc::vec![n]));
        for ln in ["ln1", "ln2"] {
            store.insert(
                &format!("dec.l{layer}.{ln}_g"),
                Tensor::from_vec(alloc::vec![n], alloc::vec![S::one(); n]),
            );
            store.insert(&format!("dec.l{layer}.{ln}_b"), Tensor::zeros(alloc::vec![n]));
        }
    }
    store.insert("dec.out_b", Tensor::zeros(alloc::vec![cfg.vocab_size]));
}

/// Registers the baseline encoder's weights: the same blocks minus
/// cross-attention, applied to the linearized token sequence.
pub fn init_linearized_params<S: Scalar, R: rand::Rng>(
    store: &mut ParameterStore<S>,
    cfg: &ModelConfig,
    rng: &mut R,
) {
    let (m, n, ff) = (cfg.embed_dim, cfg.hidden_dim, cfg.ffn_dim);
    store.insert("benc.w_in", glorot(&[m, n], rng));
    for layer in 0..cfg.layers {
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("benc.l{layer}.self.{w}"), glorot(&[n, n], rng));
        }
        store.insert(&format!("benc.l{layer}.ffn.w1"), glorot(&[n, ff], rng));
        store.insert(&format!("benc.l{layer}.ffn.b1"), Tensor::zeros(alloc::vec![ff]));
        store.insert(&format!("benc.l{layer}.ffn.w2"), glorot(&[ff, n], rng));
        store.insert(&format!("benc.l{layer}.ffn.b2"), Tensor::zeros(alloc::vec![n]));
        store.insert(
            &format!("benc.l{layer}.ln_g"),
            Tensor::from_vec(alloc::vec![n], alloc::vec![S::one(); n]),
        );
        store.insert(&format!("benc.l{layer}.ln_b"), Tensor::zeros(alloc::vec![n]));
    }
}

/// `h⁰ = E_ids · W_in + e_pos`, starting at position `offset`.
pub fn embed_positions<S: Scalar>(
    tape: &mut Tape<S>,
    mut binder: Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    w_in_name: &str,
    ids: &[usize],
    offset: usize,
    cfg: &ModelConfig,
) -> Result<Tensor<S>, TensorError> {
    let emb = fetch(tape, &mut binder, store, "emb");
    let w_in = fetch(tape, &mut binder, store, w_in_name);
    let rows = tape.gather_rows(&emb, ids)?;
    let projected = tape.matmul(&rows, &w_in)?;
    let table = positional_table::<S>(offset + ids.len(), cfg.hidden_dim);
    let mut pos_data = Vec::with_capacity(ids.len() * cfg.hidden_dim);
    for p in 0..ids.len() {
        pos_data.extend_from_slice(table.row(offset + p));
    }
    let positions = Tensor::from_vec(alloc::vec![ids.len(), cfg.hidden_dim], pos_data);
    tape.add(&projected, &positions)
}

/// One recorded attention pattern (softmax rows as plain floats).
pub struct AttentionTrace {
    pub label: String,
    pub rows: Vec<Vec<f64>>,
}

fn causal_mask<S: Scalar>(t: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            data.push(if j <= i { S::zero() } else { S::neg_infinity() });
        }
    }
    Tensor::from_vec(alloc::vec![t, t], data)
}

/// Multi-head scaled dot-product attention; returns the block output and the
/// head-averaged attention rows.
#[allow(clippy::too_many_arguments)]
fn multi_head_attention<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    prefix: &str,
    x_q: &Tensor<S>,
    x_kv: &Tensor<S>,
    cfg: &ModelConfig,
    causal: bool,
    traces: &mut Vec<AttentionTrace>,
) -> Result<(Tensor<S>, Vec<Vec<f64>>), TensorError> {
    let d = cfg.head_dim();
    let scale = S::one() / lit::<S>(d as f64).sqrt();
    let (tq, tk) = (x_q.rows(), x_kv.rows());

    let wq = fetch(tape, binder, store, &format!("{prefix}.wq"));
    let wk = fetch(tape, binder, store, &format!("{prefix}.wk"));
    let wv = fetch(tape, binder, store, &format!("{prefix}.wv"));
    let wo = fetch(tape, binder, store, &format!("{prefix}.wo"));

    let q_full = tape.matmul(x_q, &wq)?;
    let k_full = tape.matmul(x_kv, &wk)?;
    let v_full = tape.matmul(x_kv, &wv)?;
    let mask = causal.then(|| causal_mask::<S>(tq));

    let mut merged: Option<Tensor<S>> = None;
    let mut average = alloc::vec![alloc::vec![0.0f64; tk]; tq];
    for head in 0..cfg.heads {
        let q = tape.col_slice(&q_full, head * d, (head + 1) * d)?;
        let k = tape.col_slice(&k_full, head * d, (head + 1) * d)?;
        let v = tape.col_slice(&v_full, head * d, (head + 1) * d)?;
        let k_t = tape.transpose(&k);
        let logits = tape.matmul(&q, &k_t)?;
        let scaled = tape.scale(&logits, scale);
        let masked = match &mask {
            Some(m) => tape.add(&scaled, m)?,
            None => scaled,
        };
        let alpha = tape.softmax_rows(&masked)?;
        traces.push(AttentionTrace {
            label: format!("{prefix}.h{head}"),
            rows: (0..tq)
                .map(|i| alpha.row(i).iter().map(|v| v.as_f64()).collect())
                .collect(),
        });
        for i in 0..tq {
            for j in 0..tk {
                average[i][j] += alpha.at(i, j).as_f64() / cfg.heads as f64;
            }
        }
        let ctx = tape.matmul(&alpha, &v)?;
        merged = Some(match merged {
            Some(acc) => tape.concat_cols(&acc, &ctx)?,
            None => ctx,
        });
    }
    let out = tape.matmul(&merged.unwrap(), &wo)?;
    Ok((out, average))
}

fn feed_forward<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    prefix: &str,
    x: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let w1 = fetch(tape, binder, store, &format!("{prefix}.w1"));
    let b1 = fetch(tape, binder, store, &format!("{prefix}.b1"));
    let w2 = fetch(tape, binder, store, &format!("{prefix}.w2"));
    let b2 = fetch(tape, binder, store, &format!("{prefix}.b2"));
    let hidden = tape.matmul(x, &w1)?;
    let hidden = tape.add_row(&hidden, &b1)?;
    let hidden = tape.relu(&hidden);
    let out = tape.matmul(&hidden, &w2)?;
    tape.add_row(&out, &b2)
}

fn layer_norm_named<S: Scalar>(
    tape: &mut Tape<S>,
    binder: &mut Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    gain: &str,
    bias: &str,
    x: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let g = fetch(tape, binder, store, gain);
    let b = fetch(tape, binder, store, bias);
    tape.layer_norm(x, &g, &b)
}

/// One decoder layer. Returns the new hidden states plus the head-averaged
/// cross-attention rows (`t × z`).
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    mut binder: Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    layer: usize,
    x: &Tensor<S>,
    memory: &Tensor<S>,
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
    traces: &mut Vec<AttentionTrace>,
) -> Result<(Tensor<S>, Vec<Vec<f64>>), TensorError> {
    if x.cols() != cfg.hidden_dim || memory.cols() != cfg.hidden_dim {
        return Err(TensorError::ShapeMismatch {
            op: "decoder_layer",
            lhs: x.shape().to_vec(),
            rhs: memory.shape().to_vec(),
        });
    }
    let (attended, _) = multi_head_attention(
        tape,
        &mut binder,
        store,
        &format!("dec.l{layer}.self"),
        x,
        x,
        cfg,
        true,
        traces,
    )?;
    let transformed = feed_forward(tape, &mut binder, store, &format!("dec.l{layer}.ffn"), &attended)?;
    let normed = layer_norm_named(
        tape,
        &mut binder,
        store,
        &format!("dec.l{layer}.ln1_g"),
        &format!("dec.l{layer}.ln1_b"),
        &transformed,
    )?;
    let branch = tape.dropout(&normed, dropout, rng);
    let u = tape.add(x, &branch)?;

    let (cross, cross_avg) = multi_head_attention(
        tape,
        &mut binder,
        store,
        &format!("dec.l{layer}.cross"),
        &u,
        memory,
        cfg,
        false,
        traces,
    )?;
    let cross_normed = layer_norm_named(
        tape,
        &mut binder,
        store,
        &format!("dec.l{layer}.ln2_g"),
        &format!("dec.l{layer}.ln2_b"),
        &cross,
    )?;
    let cross_branch = tape.dropout(&cross_normed, dropout, rng);
    let h = tape.add(&u, &cross_branch)?;
    Ok((h, cross_avg))
}

pub struct DecoderForward<S> {
    /// `(t × K)` next-token logits.
    pub logits: Tensor<S>,
    /// Final layer's head-averaged cross-attention, one row per position.
    pub cross_attention: Vec<Vec<f64>>,
    pub traces: Vec<AttentionTrace>,
}

/// Full teacher-forcing pass over `input_ids` (BOS-led decoder input).
/// Output logits are tied to the embedding matrix transpose plus a bias.
#[allow(clippy::too_many_arguments)]
pub fn decoder_forward<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    mut binder: Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    memory: &Tensor<S>,
    input_ids: &[usize],
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<DecoderForward<S>, TensorError> {
    let mut traces = Vec::new();
    let mut x = embed_positions(tape, binder.as_deref_mut(), store, "dec.w_in", input_ids, 0, cfg)?;
    let mut cross_attention = Vec::new();
    for layer in 0..cfg.layers {
        let (next, cross) = decoder_layer(
            tape,
            binder.as_deref_mut(),
            store,
            layer,
            &x,
            memory,
            cfg,
            dropout,
            rng,
            &mut traces,
        )?;
        x = next;
        cross_attention = cross;
    }
    let emb = fetch(tape, &mut binder, store, "emb");
    let out_b = fetch(tape, &mut binder, store, "dec.out_b");
    let emb_t = tape.transpose(&emb);
    let logits = tape.matmul(&x, &emb_t)?;
    let logits = tape.add_row(&logits, &out_b)?;
    Ok(DecoderForward {
        logits,
        cross_attention,
        traces,
    })
}

/// Baseline encoder: Eq.-style self-attention blocks (no mask, no cross)
/// over the linearized token sequence.
#[allow(clippy::too_many_arguments)]
pub fn encode_linearized<S: Scalar, R: rand::Rng>(
    tape: &mut Tape<S>,
    mut binder: Option<&mut Binder<S>>,
    store: &ParameterStore<S>,
    input_ids: &[usize],
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
    traces: &mut Vec<AttentionTrace>,
) -> Result<Tensor<S>, TensorError> {
    let mut x = embed_positions(tape, binder.as_deref_mut(), store, "benc.w_in", input_ids, 0, cfg)?;
    for layer in 0..cfg.layers {
        let (attended, _) = multi_head_attention(
            tape,
            &mut binder,
            store,
            &format!("benc.l{layer}.self"),
            &x,
            &x,
            cfg,
            false,
            traces,
        )?;
        let transformed =
            feed_forward(tape, &mut binder, store, &format!("benc.l{layer}.ffn"), &attended)?;
        let normed = layer_norm_named(
            tape,
            &mut binder,
            store,
            &format!("benc.l{layer}.ln_g"),
            &format!("benc.l{layer}.ln_b"),
            &transformed,
        )?;
        let branch = tape.dropout(&normed, dropout, rng);
        x = tape.add(&x, &branch)?;
    }
    Ok(x)
}

/// Immutable per-generation context: encoder memory and its per-layer
/// cross-attention keys/values.
pub struct DecodeContext<S> {
    pub memory: Tensor<S>,
    cross_k: Vec<Tensor<S>>,
    cross_v: Vec<Tensor<S>>,
}

impl<S: Scalar> DecodeContext<S> {
    pub fn new(
        store: &ParameterStore<S>,
        memory: Tensor<S>,
        cfg: &ModelConfig,
    ) -> Result<Self, TensorError> {
        let mut tape = Tape::inference();
        let mut none = None;
        let mut cross_k = Vec::with_capacity(cfg.layers);
        let mut cross_v = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let wk = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.cross.wk"));
            let wv = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.cross.wv"));
            cross_k.push(tape.matmul(&memory, &wk)?);
            cross_v.push(tape.matmul(&memory, &wv)?);
        }
        Ok(DecodeContext {
            memory,
            cross_k,
            cross_v,
        })
    }
}

/// Mutable per-hypothesis cache: consumed positions and per-layer
/// self-attention keys/values. Cache length always equals the number of
/// consumed tokens.
#[derive(Clone)]
pub struct LayerState<S> {
    pub position: usize,
    hidden: usize,
    self_k: Vec<Vec<S>>,
    self_v: Vec<Vec<S>>,
}

impl<S: Scalar> LayerState<S> {
    pub fn new(cfg: &ModelConfig) -> Self {
        LayerState {
            position: 0,
            hidden: cfg.hidden_dim,
            self_k: alloc::vec![Vec::new(); cfg.layers],
            self_v: alloc::vec![Vec::new(); cfg.layers],
        }
    }

    /// Cached rows for one layer; always equals the consumed token count.
    pub fn cached_len(&self, layer: usize) -> usize {
        self.self_k[layer].len() / self.hidden
    }
}

/// One incremental decode step: consumes `token` at the state's position and
/// returns log-probabilities over the vocabulary plus the final layer's
/// head-averaged cross-attention weights.
pub fn decode_step<S: Scalar>(
    store: &ParameterStore<S>,
    ctx: &DecodeContext<S>,
    state: &mut LayerState<S>,
    token: u32,
    cfg: &ModelConfig,
) -> Result<(Vec<S>, Vec<S>), TensorError> {
    let mut tape = Tape::inference();
    let mut none: Option<&mut Binder<S>> = None;
    let n = cfg.hidden_dim;
    let d = cfg.head_dim();
    let scale = S::one() / lit::<S>(d as f64).sqrt();
    let mut rng = crate::rng::stream(0, "decode-inference", 0);

    let mut x = embed_positions(
        &mut tape,
        None,
        store,
        "dec.w_in",
        &[token as usize],
        state.position,
        cfg,
    )?;
    state.position += 1;

    let mut cross_avg: Vec<S> = Vec::new();
    for layer in 0..cfg.layers {
        let wq = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.self.wq"));
        let wk = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.self.wk"));
        let wv = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.self.wv"));
        let wo = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.self.wo"));
        let q_full = tape.matmul(&x, &wq)?;
        let k_new = tape.matmul(&x, &wk)?;
        let v_new = tape.matmul(&x, &wv)?;
        state.self_k[layer].extend_from_slice(k_new.data());
        state.self_v[layer].extend_from_slice(v_new.data());
        let t = state.self_k[layer].len() / n;
        let k_all = Tensor::from_vec(alloc::vec![t, n], state.self_k[layer].clone());
        let v_all = Tensor::from_vec(alloc::vec![t, n], state.self_v[layer].clone());

        let mut merged: Option<Tensor<S>> = None;
        for head in 0..cfg.heads {
            let q = tape.col_slice(&q_full, head * d, (head + 1) * d)?;
            let k = tape.col_slice(&k_all, head * d, (head + 1) * d)?;
            let v = tape.col_slice(&v_all, head * d, (head + 1) * d)?;
            let k_t = tape.transpose(&k);
            let logits = tape.matmul(&q, &k_t)?;
            let scaled = tape.scale(&logits, scale);
            let alpha = tape.softmax_rows(&scaled)?;
            let head_ctx = tape.matmul(&alpha, &v)?;
            merged = Some(match merged {
                Some(acc) => tape.concat_cols(&acc, &head_ctx)?,
                None => head_ctx,
            });
        }
        let attended = tape.matmul(&merged.unwrap(), &wo)?;
        let transformed = feed_forward(
            &mut tape,
            &mut none,
            store,
            &format!("dec.l{layer}.ffn"),
            &attended,
        )?;
        let normed = layer_norm_named(
            &mut tape,
            &mut none,
            store,
            &format!("dec.l{layer}.ln1_g"),
            &format!("dec.l{layer}.ln1_b"),
            &transformed,
        )?;
        let branch = tape.dropout(&normed, 0.0, &mut rng);
        let u = tape.add(&x, &branch)?;

        // Cross-attention against the precomputed memory keys/values.
        let wq_c = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.cross.wq"));
        let wo_c = fetch(&mut tape, &mut none, store, &format!("dec.l{layer}.cross.wo"));
        let q_full_c = tape.matmul(&u, &wq_c)?;
        let z = ctx.memory.rows();
        let mut merged_c: Option<Tensor<S>> = None;
        let mut avg = alloc::vec![S::zero(); z];
        for head in 0..cfg.heads {
            let q = tape.col_slice(&q_full_c, head * d, (head + 1) * d)?;
            let k = tape.col_slice(&ctx.cross_k[layer], head * d, (head + 1) * d)?;
            let v = tape.col_slice(&ctx.cross_v[layer], head * d, (head + 1) * d)?;
            let k_t = tape.transpose(&k);
            let logits = tape.matmul(&q, &k_t)?;
            let scaled = tape.scale(&logits, scale);
            let alpha = tape.softmax_rows(&scaled)?;
            for j in 0..z {
                avg[j] = avg[j] + alpha.at(0, j) / lit::<S>(cfg.heads as f64);
            }
            let head_ctx = tape.matmul(&alpha, &v)?;
            merged_c = Some(match merged_c {
                Some(acc) => tape.concat_cols(&acc, &head_ctx)?,
                None => head_ctx,
            });
        }
        let cross = tape.matmul(&merged_c.unwrap(), &wo_c)?;
        let cross_normed = layer_norm_named(
            &mut tape,
            &mut none,
            store,
            &format!("dec.l{layer}.ln2_g"),
            &format!("dec.l{layer}.ln2_b"),
            &cross,
        )?;
        x = tape.add(&u, &cross_normed)?;
        cross_avg = avg;
    }

    let emb = fetch(&mut tape, &mut none, store, "emb");
    let out_b = fetch(&mut tape, &mut none, store, "dec.out_b");
    let emb_t = tape.transpose(&emb);
    let logits = tape.matmul(&x, &emb_t)?;
    let logits = tape.add_row(&logits, &out_b)?;
    let log_probs = tape.log_softmax_rows(&logits)?;
    Ok((log_probs.row(0).to_vec(), cross_avg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::glorot;
    use crate::rng::stream;
    use crate::tensor::gradcheck::max_rel_err;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            vocab_size: 16,
            heads: 2,
            layers: 2,
            ffn_dim: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn init_store(cfg: &ModelConfig, seed: u64) -> ParameterStore<f64> {
        let mut rng = stream(seed, "init", 0);
        let mut store = ParameterStore::new();
        store.insert("emb", glorot(&[cfg.vocab_size, cfg.embed_dim], &mut rng));
        init_decoder_params(&mut store, cfg, &mut rng);
        store
    }

    fn random_memory(cfg: &ModelConfig, z: usize, seed: u64) -> Tensor<f64> {
        Tensor::uniform(vec![z, cfg.hidden_dim], -1.0, 1.0, &mut stream(seed, "mem", 0))
    }

    #[test]
    fn positional_row_zero_alternates_zero_one() {
        let table = positional_table::<f64>(4, 6);
        assert_eq!(table.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // Rows are pairwise distinct below max_len.
        for p in 0..4 {
            for q in (p + 1)..4 {
                assert_ne!(table.row(p), table.row(q));
            }
        }
    }

    #[test]
    fn same_token_at_different_positions_differs() {
        let cfg = small_cfg();
        let store = init_store(&cfg, 1);
        let mut tape = Tape::inference();
        let h0 = embed_positions(&mut tape, None, &store, "dec.w_in", &[3, 3], 0, &cfg).unwrap();
        assert_ne!(h0.row(0), h0.row(1));
    }

    #[test]
    fn zero_embeddings_leave_pure_positions() {
        let cfg = small_cfg();
        let mut store = init_store(&cfg, 2);
        *store.get_mut("emb").unwrap() = Tensor::zeros(vec![cfg.vocab_size, cfg.embed_dim]);
        let mut tape = Tape::inference();
        let h0 = embed_positions(&mut tape, None, &store, "dec.w_in", &[3, 5], 0, &cfg).unwrap();
        let table = positional_table::<f64>(2, cfg.hidden_dim);
        assert_eq!(h0.data(), table.data());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let cfg = small_cfg();
        let store = init_store(&cfg, 3);
        let mut tape = Tape::inference();
        let err = embed_positions(&mut tape, None, &store, "dec.w_in", &[999], 0, &cfg)
            .unwrap_err();
        assert!(matches!(err, TensorError::IdOutOfRange { .. }));
    }

    #[test]
    fn causality_is_exact() {
        let cfg = small_cfg();
        let store = init_store(&cfg, 4);
        let memory = random_memory(&cfg, 3, 4);
        let run = |ids: &[usize]| {
            let mut tape = Tape::inference();
            let mut rng = stream(4, "drop", 0);
            decoder_forward(&mut tape, None, &store, &memory, ids, &cfg, 0.0, &mut rng)
                .unwrap()
                .logits
        };
        let base = run(&[1, 2, 3, 4]);
        let perturbed = run(&[1, 2, 3, 9]);
        for t in 0..3 {
            assert_eq!(base.row(t), perturbed.row(t), "position {t} leaked");
        }
        assert_ne!(base.row(3), perturbed.row(3));
    }

    #[test]
    fn zeroed_output_projections_make_the_layer_an_identity() {
        let cfg = ModelConfig {
            layers: 1,
            ..small_cfg()
        };
        let mut store = init_store(&cfg, 5);
        // Zero the FFN second matrix and both attention output projections:
        // both branches collapse to LN(0) = bias = 0.
        *store.get_mut("dec.l0.ffn.w2").unwrap() = Tensor::zeros(vec![cfg.ffn_dim, 8]);
        *store.get_mut("dec.l0.self.wo").unwrap() = Tensor::zeros(vec![8, 8]);
        *store.get_mut("dec.l0.cross.wo").unwrap() = Tensor::zeros(vec![8, 8]);
        let memory = random_memory(&cfg, 3, 5);
        let x = Tensor::uniform(vec![4, 8], -1.0, 1.0, &mut stream(5, "x", 0));
        let mut tape = Tape::inference();
        let mut rng = stream(5, "drop", 0);
        let mut traces = Vec::new();
        let (h, _) = decoder_layer(
            &mut tape, None, &store, 0, &x, &memory, &cfg, 0.0, &mut rng, &mut traces,
        )
        .unwrap();
        for (a, b) in h.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_layer_passes_gradient_checks() {
        // 2-position, 8-dim instance: gradients through the full layer.
        let cfg = ModelConfig {
            layers: 1,
            ..small_cfg()
        };
        let store = init_store(&cfg, 6);
        let weights = Tensor::uniform(vec![2, 8], -1.0, 1.0, &mut stream(6, "w", 0));
        for seed in 0..5u64 {
            let x = Tensor::uniform(vec![2, 8], -1.0, 1.0, &mut stream(seed, "gx", 0));
            let memory = random_memory(&cfg, 3, seed + 100);
            let err = max_rel_err(&[x, memory], |t, xs| {
                let mut rng = stream(0, "drop", 0);
                let mut traces = Vec::new();
                let mut binder = Binder::new();
                // Bind store params as constants by using them directly:
                // inputs under test are x and memory only.
                let (h, _) = decoder_layer(
                    t,
                    Some(&mut binder),
                    &store,
                    0,
                    &xs[0],
                    &xs[1],
                    &cfg,
                    0.0,
                    &mut rng,
                    &mut traces,
                )?;
                t.weighted_sum(&h, &weights)
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: err {err}");
        }
    }

    #[test]
    fn log_probs_normalize_and_start_near_uniform() {
        // Desk-scale shape; tiny vocabularies skew the entropy ratio.
        let cfg = ModelConfig {
            embed_dim: 64,
            hidden_dim: 64,
            vocab_size: 800,
            heads: 2,
            layers: 2,
            ffn_dim: 256,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let store = init_store(&cfg, 7);
        let memory = random_memory(&cfg, 4, 7);
        let ctx = DecodeContext::new(&store, memory, &cfg).unwrap();
        let mut state = LayerState::new(&cfg);
        let (log_probs, cross) = decode_step(&store, &ctx, &mut state, 1, &cfg).unwrap();

        let sum: f64 = log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-6);

        // Untrained model with zero output bias stays near uniform. The
        // measured init entropy sits at 0.89–0.95·ln K across seeds (the
        // residual stream gives the tied-embedding logits some spread), so
        // the frozen bound is 0.85·ln K plus a per-token probability cap.
        let entropy: f64 = -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        assert!(entropy >= 0.85 * (cfg.vocab_size as f64).ln(), "{entropy}");
        let max_prob = log_probs.iter().fold(f64::MIN, |a, &b| a.max(b)).exp();
        assert!(max_prob < 20.0 / cfg.vocab_size as f64, "{max_prob}");

        let cross_sum: f64 = cross.iter().sum();
        assert!((cross_sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn incremental_decoding_matches_the_full_pass() {
        let cfg = small_cfg();
        let store = init_store(&cfg, 8);
        let memory = random_memory(&cfg, 5, 8);
        let ids = [1usize, 4, 9, 2];

        let mut tape = Tape::inference();
        let mut rng = stream(8, "drop", 0);
        let full = decoder_forward(&mut tape, None, &store, &memory, &ids, &cfg, 0.0, &mut rng)
            .unwrap();
        let full_log = tape.log_softmax_rows(&full.logits).unwrap();

        let ctx = DecodeContext::new(&store, memory, &cfg).unwrap();
        let mut state = LayerState::new(&cfg);
        for (t, &id) in ids.iter().enumerate() {
            let (log_probs, cross) = decode_step(&store, &ctx, &mut state, id as u32, &cfg).unwrap();
            for k in 0..cfg.vocab_size {
                assert!(
                    (log_probs[k] - full_log.at(t, k)).abs() < 1e-5,
                    "position {t} vocab {k}"
                );
            }
            for (j, &a) in cross.iter().enumerate() {
                assert!((a - full.cross_attention[t][j]).abs() < 1e-5);
            }
        }
        assert_eq!(state.position, ids.len());
    }

    #[test]
    fn attention_trace_rows_sum_to_one() {
        let cfg = small_cfg();
        let store = init_store(&cfg, 9);
        let memory = random_memory(&cfg, 4, 9);
        let mut tape = Tape::inference();
        let mut rng = stream(9, "drop", 0);
        let out = decoder_forward(
            &mut tape,
            None,
            &store,
            &memory,
            &[1, 2, 3],
            &cfg,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(!out.traces.is_empty());
        for trace in &out.traces {
            for row in &trace.rows {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5, "{}: {sum}", trace.label);
            }
        }
        for row in &out.cross_attention {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn linearized_encoder_produces_memory_and_gradients() {
        let cfg = small_cfg();
        let mut rng_init = stream(10, "init", 0);
        let mut store = ParameterStore::<f64>::new();
        store.insert("emb", glorot(&[cfg.vocab_size, cfg.embed_dim], &mut rng_init));
        init_linearized_params(&mut store, &cfg, &mut rng_init);

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let mut rng = stream(10, "drop", 0);
        let mut traces = Vec::new();
        let memory = encode_linearized(
            &mut tape,
            Some(&mut binder),
            &store,
            &[5, 9, 10, 11],
            &cfg,
            0.0,
            &mut rng,
            &mut traces,
        )
        .unwrap();
        assert_eq!(memory.shape(), &[4, 8]);

        let weights = Tensor::uniform(vec![4, 8], -1.0, 1.0, &mut stream(10, "w", 0));
        let loss = tape.weighted_sum(&memory, &weights).unwrap();
        let mut grads = tape.backward(&loss).unwrap();
        let named = binder.grads(&mut grads);
        for name in store.names() {
            assert!(named.contains_key(name), "no gradient for {name}");
        }
    }
}
