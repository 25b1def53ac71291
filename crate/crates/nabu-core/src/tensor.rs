//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation as it runs; calling
//! [`Tape::backward`] walks the record once in strict reverse insertion
//! order and accumulates gradients. Tensors are flat row-major buffers; the
//! op set is exactly what the graph-attention encoder and Transformer
//! decoder need, each with an analytic backward rule that is finite-difference
//! checked in the tests (and again in the acceptance suite).

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::scalar::{lit, Scalar};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A softmax slice was entirely masked (all `-inf`); a uniform fallback
    /// is forbidden, the caller's mask is broken.
    MaskedAll,
    IdOutOfRange {
        id: usize,
        limit: usize,
    },
    /// A gradient contained NaN or infinity; the run is divergent.
    NonFiniteGradient,
    /// `backward` was called on a tensor that is not on the tape.
    NotOnTape,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            TensorError::MaskedAll => f.write_str("softmax slice is entirely masked"),
            TensorError::IdOutOfRange { id, limit } => {
                write!(f, "index {id} out of range (limit {limit})")
            }
            TensorError::NonFiniteGradient => f.write_str("non-finite gradient"),
            TensorError::NotOnTape => f.write_str("tensor has no tape node"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Dense row-major tensor. `node` ties the value to a tape position when it
/// was produced by (or registered with) a recording tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length disagree"
        );
        assert!(shape.iter().all(|&d| d >= 1), "zero-sized dims are invalid");
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor::from_vec(shape, vec![S::zero(); len])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::from_vec(vec![1], vec![v])
    }

    pub fn uniform<R: rand::Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        // Draws happen in f64 so f32 and f64 runs see the same stream.
        let data = (0..len)
            .map(|_| lit::<S>(rng.gen_range(lo..=hi)))
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor<S>, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Elementwise in-place accumulate, used by the backward pass.
fn accumulate<S: Scalar>(into: &mut Tensor<S>, from: &Tensor<S>) {
    debug_assert_eq!(into.shape, from.shape);
    for (a, b) in into.data.iter_mut().zip(from.data.iter()) {
        *a = *a + *b;
    }
}

type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Vec<Tensor<S>>>;

struct Node<S> {
    parents: Vec<Option<NodeId>>,
    backward: BackwardFn<S>,
}

/// Gradients produced by [`Tape::backward`], indexed by tape node.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `t`, if `t` is on the tape and was reached.
    pub fn wrt(&self, t: &Tensor<S>) -> Option<&Tensor<S>> {
        t.node.and_then(|id| self.grads.get(id)?.as_ref())
    }

    pub fn take_node(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.get_mut(id)?.take()
    }
}

/// Operation record for one forward pass. Create with [`Tape::new`] for
/// training or [`Tape::inference`] to skip recording entirely.
///
/// A tape and its tensors form a single-threaded unit of work; run
/// independent tapes on independent threads.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    recording: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `t` as a differentiable leaf and returns the tracked copy.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Tensor<S> {
        let mut out = t.clone();
        if self.recording {
            self.nodes.push(Node {
                parents: Vec::new(),
                backward: Box::new(|_| Vec::new()),
            });
            out.node = Some(self.nodes.len() - 1);
        } else {
            out.node = None;
        }
        out
    }

    fn record<F>(&mut self, parents: &[Option<NodeId>], backward: F) -> Option<NodeId>
    where
        F: Fn(&Tensor<S>) -> Vec<Tensor<S>> + 'static,
    {
        if !self.recording || parents.iter().all(Option::is_none) {
            return None;
        }
        self.nodes.push(Node {
            parents: parents.to_vec(),
            backward: Box::new(backward),
        });
        Some(self.nodes.len() - 1)
    }

    /// Reverse pass seeded with ones at `output` (sum semantics for
    /// non-scalar outputs). Visits nodes exactly once, in strict reverse
    /// insertion order.
    pub fn backward(&self, output: &Tensor<S>) -> Result<Gradients<S>, TensorError> {
        let root = output.node.ok_or(TensorError::NotOnTape)?;
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::from_vec(
            output.shape.clone(),
            vec![S::one(); output.data.len()],
        ));

        for id in (0..=root).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.parents.is_empty() {
                let parent_grads = (node.backward)(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, contribution) in node.parents.iter().zip(parent_grads) {
                    if let Some(pid) = parent {
                        match &mut grads[*pid] {
                            Some(acc) => accumulate(acc, &contribution),
                            slot => *slot = Some(contribution),
                        }
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    // ------------------------------------------------------------------
    // Ops
    // ------------------------------------------------------------------

    /// `a (r×k) · b (k×c)`.
    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (r, k, c) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = Tensor::from_vec(vec![r, c], matmul_nn(&a.data, &b.data, r, k, c));
        let (ad, bd) = (a.data.clone(), b.data.clone());
        out.node = self.record(&[a.node, b.node], move |g| {
            vec![
                Tensor::from_vec(vec![r, k], matmul_nt(&g.data, &bd, r, c, k)),
                Tensor::from_vec(vec![k, c], matmul_tn(&ad, &g.data, r, k, c)),
            ]
        });
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        a.same_shape(b, "add")?;
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        out.node = self.record(&[a.node, b.node], |g| vec![g.clone(), g.clone()]);
        Ok(out)
    }

    /// Adds a length-`c` bias row to every row of `a (r×c)`.
    pub fn add_row(&mut self, a: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let c = a.cols();
        if bias.shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: a.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let data = a
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias.data[i % c])
            .collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        out.node = self.record(&[a.node, bias.node], move |g| {
            let mut db = vec![S::zero(); c];
            for (i, &gv) in g.data.iter().enumerate() {
                db[i % c] = db[i % c] + gv;
            }
            vec![g.clone(), Tensor::from_vec(vec![c], db)]
        });
        Ok(out)
    }

    pub fn scale(&mut self, a: &Tensor<S>, factor: S) -> Tensor<S> {
        let data = a.data.iter().map(|&x| x * factor).collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        out.node = self.record(&[a.node], move |g| {
            vec![Tensor::from_vec(
                g.shape.clone(),
                g.data.iter().map(|&x| x * factor).collect(),
            )]
        });
        out
    }

    pub fn transpose(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let (r, c) = (a.shape[0], a.shape[1]);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data[i * c + j];
            }
        }
        let mut out = Tensor::from_vec(vec![c, r], data);
        out.node = self.record(&[a.node], move |g| {
            let mut back = vec![S::zero(); r * c];
            for j in 0..c {
                for i in 0..r {
                    back[i * c + j] = g.data[j * r + i];
                }
            }
            vec![Tensor::from_vec(vec![r, c], back)]
        });
        out
    }

    pub fn relu(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let data = a.data.iter().map(|&x| x.max(S::zero())).collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        let ad = a.data.clone();
        out.node = self.record(&[a.node], move |g| {
            let data = g
                .data
                .iter()
                .zip(ad.iter())
                .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() })
                .collect();
            vec![Tensor::from_vec(g.shape.clone(), data)]
        });
        out
    }

    pub fn leaky_relu(&mut self, a: &Tensor<S>, slope: S) -> Tensor<S> {
        let data = a
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { x * slope })
            .collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        let ad = a.data.clone();
        out.node = self.record(&[a.node], move |g| {
            let data = g
                .data
                .iter()
                .zip(ad.iter())
                .map(|(&gv, &x)| if x > S::zero() { gv } else { gv * slope })
                .collect();
            vec![Tensor::from_vec(g.shape.clone(), data)]
        });
        out
    }

    /// ELU with α = 1: `x` for `x > 0`, `exp(x) − 1` otherwise.
    pub fn elu(&mut self, a: &Tensor<S>) -> Tensor<S> {
        let data: Vec<S> = a
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { x.exp() - S::one() })
            .collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data.clone());
        let ad = a.data.clone();
        out.node = self.record(&[a.node], move |g| {
            let data = g
                .data
                .iter()
                .zip(ad.iter())
                .map(|(&gv, &x)| if x > S::zero() { gv } else { gv * x.exp() })
                .collect();
            vec![Tensor::from_vec(g.shape.clone(), data)]
        });
        out
    }

    /// Row-wise softmax with max-subtraction. Rows that are entirely `-inf`
    /// (fully masked) are an error.
    pub fn softmax_rows(&mut self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (r, c) = (a.shape[0], a.cols());
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &a.data[i * c..(i + 1) * c];
            softmax_slice(row, &mut data[i * c..(i + 1) * c])?;
        }
        let mut out = Tensor::from_vec(a.shape.clone(), data.clone());
        let probs = data;
        out.node = self.record(&[a.node], move |g| {
            let mut dx = vec![S::zero(); r * c];
            for i in 0..r {
                let p = &probs[i * c..(i + 1) * c];
                let gr = &g.data[i * c..(i + 1) * c];
                let dot = p
                    .iter()
                    .zip(gr.iter())
                    .fold(S::zero(), |acc, (&pv, &gv)| acc + pv * gv);
                for j in 0..c {
                    dx[i * c + j] = p[j] * (gr[j] - dot);
                }
            }
            vec![Tensor::from_vec(g.shape.clone(), dx)]
        });
        Ok(out)
    }

    /// Row-wise log-softmax (stabilized log-sum-exp).
    pub fn log_softmax_rows(&mut self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (r, c) = (a.shape[0], a.cols());
        let mut data = vec![S::zero(); r * c];
        let mut probs = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &a.data[i * c..(i + 1) * c];
            softmax_slice(row, &mut probs[i * c..(i + 1) * c])?;
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let lse = row
                .iter()
                .fold(S::zero(), |acc, &x| acc + (x - max).exp())
                .ln()
                + max;
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        out.node = self.record(&[a.node], move |g| {
            let mut dx = vec![S::zero(); r * c];
            for i in 0..r {
                let p = &probs[i * c..(i + 1) * c];
                let gr = &g.data[i * c..(i + 1) * c];
                let gsum = gr.iter().fold(S::zero(), |acc, &x| acc + x);
                for j in 0..c {
                    dx[i * c + j] = gr[j] - p[j] * gsum;
                }
            }
            vec![Tensor::from_vec(g.shape.clone(), dx)]
        });
        Ok(out)
    }

    /// Layer normalization over the last axis, then `· gain + bias`.
    /// Epsilon 1e-5 inside the square root.
    pub fn layer_norm(
        &mut self,
        x: &Tensor<S>,
        gain: &Tensor<S>,
        bias: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        let c = x.cols();
        if gain.shape != [c] || bias.shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let r = x.data.len() / c;
        let eps = lit::<S>(1e-5);
        let inv_c = S::one() / lit::<S>(c as f64);

        let mut normalized = vec![S::zero(); r * c];
        let mut inv_std = vec![S::zero(); r];
        for i in 0..r {
            let row = &x.data[i * c..(i + 1) * c];
            let mean = row.iter().fold(S::zero(), |a, &v| a + v) * inv_c;
            let var = row
                .iter()
                .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_c;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..c {
                normalized[i * c + j] = (row[j] - mean) * istd;
            }
        }
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = normalized[i * c + j] * gain.data[j] + bias.data[j];
            }
        }
        let mut out = Tensor::from_vec(x.shape.clone(), data);
        let gd = gain.data.clone();
        let x_shape = x.shape.clone();
        out.node = self.record(&[x.node, gain.node, bias.node], move |g| {
            let mut dgain = vec![S::zero(); c];
            let mut dbias = vec![S::zero(); c];
            let mut dx = vec![S::zero(); r * c];
            for i in 0..r {
                let gr = &g.data[i * c..(i + 1) * c];
                let nr = &normalized[i * c..(i + 1) * c];
                let mut dy = vec![S::zero(); c];
                for j in 0..c {
                    dgain[j] = dgain[j] + gr[j] * nr[j];
                    dbias[j] = dbias[j] + gr[j];
                    dy[j] = gr[j] * gd[j];
                }
                let mean_dy = dy.iter().fold(S::zero(), |a, &v| a + v) * inv_c;
                let mean_dy_n = dy
                    .iter()
                    .zip(nr.iter())
                    .fold(S::zero(), |a, (&d, &n)| a + d * n)
                    * inv_c;
                for j in 0..c {
                    dx[i * c + j] = inv_std[i] * (dy[j] - mean_dy - nr[j] * mean_dy_n);
                }
            }
            vec![
                Tensor::from_vec(x_shape.clone(), dx),
                Tensor::from_vec(vec![c], dgain),
                Tensor::from_vec(vec![c], dbias),
            ]
        });
        Ok(out)
    }

    /// Row lookup: `table (k×m)` gathered at `ids` → `(|ids|×m)`.
    pub fn gather_rows(
        &mut self,
        table: &Tensor<S>,
        ids: &[usize],
    ) -> Result<Tensor<S>, TensorError> {
        let (k, m) = (table.shape[0], table.cols());
        let mut data = Vec::with_capacity(ids.len() * m);
        for &id in ids {
            if id >= k {
                return Err(TensorError::IdOutOfRange { id, limit: k });
            }
            data.extend_from_slice(&table.data[id * m..(id + 1) * m]);
        }
        let mut out = Tensor::from_vec(vec![ids.len(), m], data);
        let ids = ids.to_vec();
        out.node = self.record(&[table.node], move |g| {
            let mut dt = vec![S::zero(); k * m];
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..m {
                    dt[id * m + j] = dt[id * m + j] + g.data[row * m + j];
                }
            }
            vec![Tensor::from_vec(vec![k, m], dt)]
        });
        Ok(out)
    }

    /// Element lookup on a vector, with scatter-add backward.
    pub fn gather(&mut self, v: &Tensor<S>, ids: &[usize]) -> Result<Tensor<S>, TensorError> {
        let n = v.data.len();
        let mut data = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= n {
                return Err(TensorError::IdOutOfRange { id, limit: n });
            }
            data.push(v.data[id]);
        }
        let mut out = Tensor::from_vec(vec![ids.len()], data);
        let ids = ids.to_vec();
        out.node = self.record(&[v.node], move |g| {
            let mut dv = vec![S::zero(); n];
            for (i, &id) in ids.iter().enumerate() {
                dv[id] = dv[id] + g.data[i];
            }
            vec![Tensor::from_vec(vec![n], dv)]
        });
        Ok(out)
    }

    /// `[a ‖ b]` along columns.
    pub fn concat_cols(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if a.shape[0] != b.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (r, ca, cb) = (a.shape[0], a.cols(), b.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&a.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data[i * cb..(i + 1) * cb]);
        }
        let mut out = Tensor::from_vec(vec![r, ca + cb], data);
        out.node = self.record(&[a.node, b.node], move |g| {
            let mut da = vec![S::zero(); r * ca];
            let mut db = vec![S::zero(); r * cb];
            let c = ca + cb;
            for i in 0..r {
                da[i * ca..(i + 1) * ca].copy_from_slice(&g.data[i * c..i * c + ca]);
                db[i * cb..(i + 1) * cb].copy_from_slice(&g.data[i * c + ca..(i + 1) * c]);
            }
            vec![
                Tensor::from_vec(vec![r, ca], da),
                Tensor::from_vec(vec![r, cb], db),
            ]
        });
        Ok(out)
    }

    /// Column slice `[lo, hi)` of `a (r×c)`.
    pub fn col_slice(
        &mut self,
        a: &Tensor<S>,
        lo: usize,
        hi: usize,
    ) -> Result<Tensor<S>, TensorError> {
        let (r, c) = (a.shape[0], a.cols());
        if lo >= hi || hi > c {
            return Err(TensorError::IdOutOfRange { id: hi, limit: c });
        }
        let w = hi - lo;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&a.data[i * c + lo..i * c + hi]);
        }
        let mut out = Tensor::from_vec(vec![r, w], data);
        out.node = self.record(&[a.node], move |g| {
            let mut da = vec![S::zero(); r * c];
            for i in 0..r {
                da[i * c + lo..i * c + hi].copy_from_slice(&g.data[i * w..(i + 1) * w]);
            }
            vec![Tensor::from_vec(vec![r, c], da)]
        });
        Ok(out)
    }

    /// Mean of `rows (p×m)` grouped by `seg` into `z` output rows.
    /// Groups with no members stay zero.
    pub fn segment_mean_rows(
        &mut self,
        rows: &Tensor<S>,
        seg: &[usize],
        z: usize,
    ) -> Result<Tensor<S>, TensorError> {
        let (p, m) = (rows.shape[0], rows.cols());
        if seg.len() != p {
            return Err(TensorError::ShapeMismatch {
                op: "segment_mean_rows",
                lhs: rows.shape.clone(),
                rhs: vec![seg.len()],
            });
        }
        let mut counts = vec![0usize; z];
        for &s in seg {
            if s >= z {
                return Err(TensorError::IdOutOfRange { id: s, limit: z });
            }
            counts[s] += 1;
        }
        let mut data = vec![S::zero(); z * m];
        for (row, &s) in seg.iter().enumerate() {
            for j in 0..m {
                data[s * m + j] = data[s * m + j] + rows.data[row * m + j];
            }
        }
        for s in 0..z {
            if counts[s] > 0 {
                let inv = S::one() / lit::<S>(counts[s] as f64);
                for j in 0..m {
                    data[s * m + j] = data[s * m + j] * inv;
                }
            }
        }
        let mut out = Tensor::from_vec(vec![z, m], data);
        let seg = seg.to_vec();
        out.node = self.record(&[rows.node], move |g| {
            let mut dr = vec![S::zero(); p * m];
            for (row, &s) in seg.iter().enumerate() {
                let inv = S::one() / lit::<S>(counts[s] as f64);
                for j in 0..m {
                    dr[row * m + j] = g.data[s * m + j] * inv;
                }
            }
            vec![Tensor::from_vec(vec![p, m], dr)]
        });
        Ok(out)
    }

    /// Sum of `rows (p×m)` grouped by `seg` into `z` output rows.
    pub fn segment_sum_rows(
        &mut self,
        rows: &Tensor<S>,
        seg: &[usize],
        z: usize,
    ) -> Result<Tensor<S>, TensorError> {
        let (p, m) = (rows.shape[0], rows.cols());
        if seg.len() != p {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum_rows",
                lhs: rows.shape.clone(),
                rhs: vec![seg.len()],
            });
        }
        let mut data = vec![S::zero(); z * m];
        for (row, &s) in seg.iter().enumerate() {
            if s >= z {
                return Err(TensorError::IdOutOfRange { id: s, limit: z });
            }
            for j in 0..m {
                data[s * m + j] = data[s * m + j] + rows.data[row * m + j];
            }
        }
        let mut out = Tensor::from_vec(vec![z, m], data);
        let seg = seg.to_vec();
        out.node = self.record(&[rows.node], move |g| {
            let mut dr = vec![S::zero(); p * m];
            for (row, &s) in seg.iter().enumerate() {
                dr[row * m..(row + 1) * m].copy_from_slice(&g.data[s * m..(s + 1) * m]);
            }
            vec![Tensor::from_vec(vec![p, m], dr)]
        });
        Ok(out)
    }

    /// Softmax over vector entries grouped by `seg`: each group's entries are
    /// normalized among themselves. Entries are assumed contiguous per group
    /// is NOT required; any layout works.
    pub fn segment_softmax(
        &mut self,
        logits: &Tensor<S>,
        seg: &[usize],
        z: usize,
    ) -> Result<Tensor<S>, TensorError> {
        let p = logits.data.len();
        if seg.len() != p {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: logits.shape.clone(),
                rhs: vec![seg.len()],
            });
        }
        let mut maxes = vec![S::neg_infinity(); z];
        for (i, &s) in seg.iter().enumerate() {
            if s >= z {
                return Err(TensorError::IdOutOfRange { id: s, limit: z });
            }
            maxes[s] = maxes[s].max(logits.data[i]);
        }
        for (s, &m) in maxes.iter().enumerate() {
            let occupied = seg.iter().any(|&x| x == s);
            if occupied && m == S::neg_infinity() {
                return Err(TensorError::MaskedAll);
            }
        }
        let mut sums = vec![S::zero(); z];
        let mut exps = vec![S::zero(); p];
        for (i, &s) in seg.iter().enumerate() {
            let e = (logits.data[i] - maxes[s]).exp();
            exps[i] = e;
            sums[s] = sums[s] + e;
        }
        let data: Vec<S> = exps
            .iter()
            .zip(seg.iter())
            .map(|(&e, &s)| e / sums[s])
            .collect();
        let mut out = Tensor::from_vec(vec![p], data.clone());
        let seg_owned = seg.to_vec();
        let probs = data;
        out.node = self.record(&[logits.node], move |g| {
            let mut dots = vec![S::zero(); z];
            for (i, &s) in seg_owned.iter().enumerate() {
                dots[s] = dots[s] + g.data[i] * probs[i];
            }
            let dx: Vec<S> = (0..p)
                .map(|i| probs[i] * (g.data[i] - dots[seg_owned[i]]))
                .collect();
            vec![Tensor::from_vec(vec![p], dx)]
        });
        Ok(out)
    }

    /// Scales row `i` of `rows (p×m)` by `w[i]`.
    pub fn scale_rows(
        &mut self,
        rows: &Tensor<S>,
        w: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        let (p, m) = (rows.shape[0], rows.cols());
        if w.shape != [p] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: rows.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        let mut data = vec![S::zero(); p * m];
        for i in 0..p {
            for j in 0..m {
                data[i * m + j] = rows.data[i * m + j] * w.data[i];
            }
        }
        let mut out = Tensor::from_vec(rows.shape.clone(), data);
        let (rd, wd) = (rows.data.clone(), w.data.clone());
        out.node = self.record(&[rows.node, w.node], move |g| {
            let mut dr = vec![S::zero(); p * m];
            let mut dw = vec![S::zero(); p];
            for i in 0..p {
                for j in 0..m {
                    dr[i * m + j] = g.data[i * m + j] * wd[i];
                    dw[i] = dw[i] + g.data[i * m + j] * rd[i * m + j];
                }
            }
            vec![
                Tensor::from_vec(vec![p, m], dr),
                Tensor::from_vec(vec![p], dw),
            ]
        });
        Ok(out)
    }

    /// Summed next-token cross-entropy over `logits (t×k)` against `targets`,
    /// skipping positions whose target equals `pad_id`. Returns a scalar;
    /// divide by the non-pad count for the mean.
    pub fn cross_entropy_sum(
        &mut self,
        logits: &Tensor<S>,
        targets: &[u32],
        pad_id: u32,
    ) -> Result<Tensor<S>, TensorError> {
        let (t, k) = (logits.shape[0], logits.cols());
        if targets.len() != t {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_sum",
                lhs: logits.shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![S::zero(); t * k];
        let mut loss = S::zero();
        for i in 0..t {
            let row = &logits.data[i * k..(i + 1) * k];
            softmax_slice(row, &mut probs[i * k..(i + 1) * k])?;
            if targets[i] == pad_id {
                continue;
            }
            let target = targets[i] as usize;
            if target >= k {
                return Err(TensorError::IdOutOfRange {
                    id: target,
                    limit: k,
                });
            }
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let lse = row
                .iter()
                .fold(S::zero(), |acc, &x| acc + (x - max).exp())
                .ln()
                + max;
            loss = loss + (lse - row[target]);
        }
        let mut out = Tensor::scalar(loss);
        let targets = targets.to_vec();
        out.node = self.record(&[logits.node], move |g| {
            let gs = g.data[0];
            let mut dl = vec![S::zero(); t * k];
            for i in 0..t {
                if targets[i] == pad_id {
                    continue;
                }
                let target = targets[i] as usize;
                for j in 0..k {
                    let indicator = if j == target { S::one() } else { S::zero() };
                    dl[i * k + j] = gs * (probs[i * k + j] - indicator);
                }
            }
            vec![Tensor::from_vec(vec![t, k], dl)]
        });
        Ok(out)
    }

    /// Flattened dot product against fixed weights; the reduction used by
    /// gradient checks to get a scalar output from any op.
    pub fn weighted_sum(
        &mut self,
        a: &Tensor<S>,
        w: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        if a.data.len() != w.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                lhs: a.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        let value = a
            .data
            .iter()
            .zip(w.data.iter())
            .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
        let mut out = Tensor::scalar(value);
        let (ad, wd) = (a.data.clone(), w.data.clone());
        let (ashape, wshape) = (a.shape.clone(), w.shape.clone());
        out.node = self.record(&[a.node, w.node], move |g| {
            let gs = g.data[0];
            vec![
                Tensor::from_vec(ashape.clone(), wd.iter().map(|&x| x * gs).collect()),
                Tensor::from_vec(wshape.clone(), ad.iter().map(|&x| x * gs).collect()),
            ]
        });
        Ok(out)
    }

    /// Inverted dropout: keeps each element with probability `1 − p` and
    /// scales kept elements by `1/(1 − p)`. `p = 0` is the identity and
    /// draws nothing from the RNG.
    pub fn dropout<R: rand::Rng>(&mut self, a: &Tensor<S>, p: f64, rng: &mut R) -> Tensor<S> {
        if p == 0.0 {
            return a.clone();
        }
        let keep = S::one() / lit::<S>(1.0 - p);
        let mask: Vec<S> = (0..a.data.len())
            .map(|_| {
                if rng.gen_range(0.0..1.0) < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = a
            .data
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        let mut out = Tensor::from_vec(a.shape.clone(), data);
        out.node = self.record(&[a.node], move |g| {
            let data = g
                .data
                .iter()
                .zip(mask.iter())
                .map(|(&gv, &m)| gv * m)
                .collect();
            vec![Tensor::from_vec(g.shape.clone(), data)]
        });
        out
    }
}

fn softmax_slice<S: Scalar>(row: &[S], out: &mut [S]) -> Result<(), TensorError> {
    let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    if max == S::neg_infinity() {
        return Err(TensorError::MaskedAll);
    }
    let mut sum = S::zero();
    for (o, &x) in out.iter_mut().zip(row.iter()) {
        let e = (x - max).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
    Ok(())
}

fn matmul_nn<S: Scalar>(a: &[S], b: &[S], r: usize, k: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == S::zero() {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            let orow = &mut out[i * c..(i + 1) * c];
            for j in 0..c {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

/// `a (r×c) · bᵀ` where `b` is `(k×c)`; result `(r×k)`.
fn matmul_nt<S: Scalar>(a: &[S], b: &[S], r: usize, c: usize, k: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * k];
    for i in 0..r {
        let arow = &a[i * c..(i + 1) * c];
        for kk in 0..k {
            let brow = &b[kk * c..(kk + 1) * c];
            let mut acc = S::zero();
            for j in 0..c {
                acc = acc + arow[j] * brow[j];
            }
            out[i * k + kk] = acc;
        }
    }
    out
}

/// `aᵀ · b` where `a` is `(r×k)` and `b` is `(r×c)`; result `(k×c)`.
fn matmul_tn<S: Scalar>(a: &[S], b: &[S], r: usize, k: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * c];
    for i in 0..r {
        let brow = &b[i * c..(i + 1) * c];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[kk * c..(kk + 1) * c];
            for j in 0..c {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

pub mod gradcheck {
    //! Finite-difference gradient oracle. Uses only forward evaluations, so
    //! it stays independent of the backward rules it checks.

    use super::{Tape, Tensor, TensorError};
    use alloc::vec::Vec;

    pub const EPSILON: f64 = 1e-3;

    /// Compares analytic gradients of a scalar-valued function against
    /// central finite differences at step [`EPSILON`]. Returns the worst
    /// hybrid error `|a − n| / max(1, |a|, |n|)` over all input elements.
    pub fn max_rel_err<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64, TensorError>
    where
        F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
    {
        max_rel_err_eps(inputs, EPSILON, f)
    }

    /// As [`max_rel_err`] with an explicit difference step; high-curvature
    /// functions need a finer step for the numeric side to be trustworthy.
    pub fn max_rel_err_eps<F>(
        inputs: &[Tensor<f64>],
        eps: f64,
        f: F,
    ) -> Result<f64, TensorError>
    where
        F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
    {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &leaves)?;
        assert_eq!(out.len(), 1, "gradcheck needs a scalar output");
        let grads = tape.backward(&out)?;

        let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
            let mut t = Tape::inference();
            let leaves: Vec<Tensor<f64>> = xs.iter().map(|x| t.leaf(x)).collect();
            Ok(f(&mut t, &leaves)?.item())
        };

        let mut worst = 0.0f64;
        for (idx, input) in inputs.iter().enumerate() {
            let analytic = grads
                .wrt(&leaves[idx])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
            for elem in 0..input.len() {
                let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
                plus[idx].data_mut()[elem] += eps;
                let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
                minus[idx].data_mut()[elem] -= eps;
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
                let a = analytic.data()[elem];
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                if err > worst {
                    worst = err;
                }
            }
        }
        Ok(worst)
    }
}
