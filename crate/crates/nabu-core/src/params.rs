//! Named trainable parameters, forward-pass binding, and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

// Needed by the no_std build; std test builds resolve these inherently.
#[allow(unused_imports)]
use num_traits::Float;

use crate::scalar::{lit, Scalar};
use crate::tensor::{Gradients, Tape, Tensor, TensorError};

/// Name → tensor map of every trainable weight. BTreeMap keeps iteration
/// (and therefore optimizer updates and checkpoint bytes) deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<S> {
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) {
        let previous = self.params.insert(name.to_string(), tensor);
        assert!(previous.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }
}

/// Ties parameters used in one forward pass to their tape leaves so the
/// gradients can be collected by name afterwards. Binding the same name
/// twice reuses the first leaf, which makes shared parameters (for example
/// a tied embedding matrix) accumulate gradients on a single node.
pub struct Binder<S> {
    bound: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for Binder<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Binder<S> {
    pub fn new() -> Self {
        Binder { bound: Vec::new() }
    }

    pub fn bind(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        name: &str,
    ) -> Tensor<S> {
        if let Some((_, t)) = self.bound.iter().find(|(n, _)| n == name) {
            return t.clone();
        }
        let param = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let leaf = tape.leaf(param);
        self.bound.push((name.to_string(), leaf.clone()));
        leaf
    }

    /// Collects the gradients of every bound parameter. Parameters the
    /// backward pass never reached are omitted (they have zero gradient).
    pub fn grads(&self, grads: &mut Gradients<S>) -> BTreeMap<String, Tensor<S>> {
        let mut out = BTreeMap::new();
        for (name, tensor) in &self.bound {
            if let Some(node) = tensor.node() {
                if let Some(g) = grads.take_node(node) {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}

/// Accumulates per-parameter gradients across the examples of a batch.
pub fn merge_grads<S: Scalar>(
    into: &mut BTreeMap<String, Tensor<S>>,
    from: BTreeMap<String, Tensor<S>>,
) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data().iter()) {
                    *a = *a + *b;
                }
            }
            None => {
                into.insert(name, g);
            }
        }
    }
}

pub fn scale_grads<S: Scalar>(grads: &mut BTreeMap<String, Tensor<S>>, factor: S) {
    for g in grads.values_mut() {
        for v in g.data_mut() {
            *v = *v * factor;
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<S: Scalar>(grads: &mut BTreeMap<String, Tensor<S>>, max_norm: S) -> S {
    let mut sq = S::zero();
    for g in grads.values() {
        for &v in g.data() {
            sq = sq + v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > S::zero() {
        let factor = max_norm / norm;
        scale_grads(grads, factor);
    }
    norm
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> AdamConfig<S> {
    pub fn with_lr(lr: S) -> Self {
        AdamConfig {
            lr,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: BTreeMap<String, Vec<S>>,
    v: BTreeMap<String, Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> Default for AdamState<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Parameters without a gradient
/// entry are treated as zero-gradient (their moments still decay).
pub fn adam_step<S: Scalar>(
    store: &mut ParameterStore<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig<S>,
) -> Result<(), TensorError> {
    for g in grads.values() {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient);
        }
    }
    state.step += 1;
    let t = lit::<S>(state.step as f64);
    let bc1 = S::one() - cfg.beta1.powf(t);
    let bc2 = S::one() - cfg.beta2.powf(t);

    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let param = store.get_mut(&name).unwrap();
        let len = param.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); len]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); len]);
        let zero = S::zero();
        let grad = grads.get(&name);
        for i in 0..len {
            let g = grad.map_or(zero, |g| g.data()[i]);
            m[i] = cfg.beta1 * m[i] + (S::one() - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (S::one() - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let p = &mut param.data_mut()[i];
            *p = *p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Uniform ±√(6/(fan_in + fan_out)) for matrices; biases start at zero.
pub fn glorot<S: Scalar, R: rand::Rng>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let (fan_in, fan_out) = match shape {
        [rows, cols] => (*rows, *cols),
        [n] => (*n, 1),
        _ => panic!("glorot expects rank 1 or 2"),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}
