//! Recurrent and feed-forward building blocks: GRU cell, MLP, inverted
//! dropout, seeded weight init, and the named parameter store they live in.
//!
//! All forward math is composed from graph primitives, so the adjoint suite
//! in [`crate::gradcheck`] covers these cells too. Weights are owned by a
//! [`ParamStore`] (sorted by name, so iteration — and therefore optimizer
//! updates and checkpoints — is deterministic) and bound into a graph per
//! forward pass, as trainable parameter leaves during training or plain
//! constants at inference.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Array;

// ---- parameter store -------------------------------------------------------

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Array>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        let prev = self.map.insert(name.to_string(), value);
        assert!(prev.is_none(), "param store: duplicate parameter `{name}`");
    }

    pub fn get(&self, name: &str) -> &Array {
        self.map.get(name).unwrap_or_else(|| panic!("param store: missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        self.map.get_mut(name).unwrap_or_else(|| panic!("param store: missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Name-sorted iteration; the one order used everywhere.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Name-sorted mutable iteration.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Absorb every parameter from `other`, keeping names disjoint.
    pub fn merge(&mut self, other: ParamStore) {
        for (name, value) in other.map {
            let prev = self.map.insert(name.clone(), value);
            assert!(prev.is_none(), "param store: duplicate parameter `{name}` in merge");
        }
    }

    /// Register every parameter in `g` and return the name → node binding.
    /// `trainable` decides whether backward will produce gradients for them.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut map = BTreeMap::new();
        for (name, value) in &self.map {
            let id =
                if trainable { g.param(value.clone()) } else { g.constant(value.clone()) };
            map.insert(name.clone(), id);
        }
        Bound { map }
    }
}

/// Graph-bound view of a [`ParamStore`]: parameter name → node.
pub struct Bound {
    map: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn node(&self, name: &str) -> NodeId {
        *self.map.get(name).unwrap_or_else(|| panic!("bound params: missing `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

// ---- init ------------------------------------------------------------------

/// Uniform init in ±1/√fan_in. `fan_in` is the input dimension of the matrix.
pub fn uniform_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array {
    let bound = 1.0 / (cols as f64).sqrt();
    Array::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

// ---- GRU -------------------------------------------------------------------

/// Graph-bound GRU cell weights: input-to-gates (3H×D), hidden-to-gates
/// (3H×H), gate biases (3H). Gate order within the stacked rows is
/// update `z`, reset `r`, candidate `n`.
#[derive(Clone, Copy)]
pub struct GruWeights {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub bias: NodeId,
}

/// Create GRU parameters under `prefix` in the store.
pub fn init_gru(store: &mut ParamStore, prefix: &str, hidden: usize, input: usize, rng: &mut ChaCha8Rng) {
    store.insert(&format!("{prefix}.w_ih"), uniform_init(3 * hidden, input, rng));
    store.insert(&format!("{prefix}.w_hh"), uniform_init(3 * hidden, hidden, rng));
    store.insert(&format!("{prefix}.bias"), Array::zeros(vec![3 * hidden]));
}

/// Look up the GRU weights created by [`init_gru`] in a bound store.
pub fn bind_gru(bound: &Bound, prefix: &str) -> GruWeights {
    GruWeights {
        w_ih: bound.node(&format!("{prefix}.w_ih")),
        w_hh: bound.node(&format!("{prefix}.w_hh")),
        bias: bound.node(&format!("{prefix}.bias")),
    }
}

/// One GRU update:
///   z = σ(Wz x + Uz h + bz)
///   r = σ(Wr x + Ur h + br)
///   n = tanh(Wn x + r ∘ (Un h) + bn)
///   h' = (1−z) ∘ n + z ∘ h
///
/// The reset gate multiplies only the recurrent contribution of the
/// candidate, not its bias.
pub fn gru_step(g: &mut Graph, x: NodeId, h: NodeId, w: &GruWeights) -> NodeId {
    let three_h = g.value(w.bias).len();
    assert_eq!(three_h % 3, 0, "gru_step: bias length must be 3H");
    let hs = three_h / 3;
    assert_eq!(g.value(h).len(), hs, "gru_step: hidden size mismatch");
    assert_eq!(
        g.value(w.w_ih).shape()[1],
        g.value(x).len(),
        "gru_step: input size mismatch"
    );

    let ai = g.matmul(w.w_ih, x); // 3H
    let ah = g.matmul(w.w_hh, h); // 3H

    let ai_z = g.slice(ai, 0, hs);
    let ah_z = g.slice(ah, 0, hs);
    let b_z = g.slice(w.bias, 0, hs);
    let pre_z = g.add(ai_z, ah_z);
    let pre_z = g.add(pre_z, b_z);
    let z = g.sigmoid(pre_z);

    let ai_r = g.slice(ai, hs, 2 * hs);
    let ah_r = g.slice(ah, hs, 2 * hs);
    let b_r = g.slice(w.bias, hs, 2 * hs);
    let pre_r = g.add(ai_r, ah_r);
    let pre_r = g.add(pre_r, b_r);
    let r = g.sigmoid(pre_r);

    let ai_n = g.slice(ai, 2 * hs, 3 * hs);
    let ah_n = g.slice(ah, 2 * hs, 3 * hs);
    let b_n = g.slice(w.bias, 2 * hs, 3 * hs);
    let gated = g.mul(r, ah_n);
    let pre_n = g.add(ai_n, gated);
    let pre_n = g.add(pre_n, b_n);
    let n = g.tanh(pre_n);

    let keep = g.mul(z, h);
    let one_minus_z = g.one_minus(z);
    let update = g.mul(one_minus_z, n);
    g.add(update, keep)
}

// ---- MLP -------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Copy)]
pub struct MlpLayer {
    pub w: NodeId,
    pub b: NodeId,
    pub act: Activation,
}

/// Graph-bound MLP: ordered affine layers with tanh or identity activations.
#[derive(Clone)]
pub struct MlpWeights {
    pub layers: Vec<MlpLayer>,
}

/// Create MLP parameters under `prefix`. `dims` chains layer sizes
/// (input, hidden..., output); `acts` has one entry per layer.
pub fn init_mlp(
    store: &mut ParamStore,
    prefix: &str,
    dims: &[usize],
    acts: &[Activation],
    rng: &mut ChaCha8Rng,
) {
    assert_eq!(dims.len(), acts.len() + 1, "init_mlp: need one activation per layer");
    for (i, win) in dims.windows(2).enumerate() {
        store.insert(&format!("{prefix}.{i}.w"), uniform_init(win[1], win[0], rng));
        store.insert(&format!("{prefix}.{i}.b"), Array::zeros(vec![win[1]]));
    }
}

/// Look up the MLP created by [`init_mlp`].
pub fn bind_mlp(bound: &Bound, prefix: &str, acts: &[Activation]) -> MlpWeights {
    let layers = acts
        .iter()
        .enumerate()
        .map(|(i, &act)| MlpLayer {
            w: bound.node(&format!("{prefix}.{i}.w")),
            b: bound.node(&format!("{prefix}.{i}.b")),
            act,
        })
        .collect();
    MlpWeights { layers }
}

/// Affine + activation per layer.
pub fn mlp_forward(g: &mut Graph, x: NodeId, w: &MlpWeights) -> NodeId {
    let mut cur = x;
    for layer in &w.layers {
        assert_eq!(
            g.value(layer.w).shape()[1],
            g.value(cur).len(),
            "mlp_forward: layer input size mismatch"
        );
        let lin = g.matmul(layer.w, cur);
        let lin = g.add(lin, layer.b);
        cur = match layer.act {
            Activation::Tanh => g.tanh(lin),
            Activation::Identity => lin,
        };
    }
    cur
}

// ---- dropout ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    /// Regularization during optimization: fresh mask per call.
    Train,
    /// Monte-Carlo sampling at inference: fresh mask per call.
    McSample,
    /// Identity map.
    Off,
}

/// Inverted dropout: kept coordinates are scaled by 1/(1−p) so the map is
/// expectation-preserving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: DropoutMode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: DropoutMode) -> Result<DropoutSpec> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} must be in [0, 1)")));
        }
        Ok(DropoutSpec { rate, mode })
    }

    pub fn off() -> DropoutSpec {
        DropoutSpec { rate: 0.0, mode: DropoutMode::Off }
    }

    pub fn is_active(&self) -> bool {
        self.mode != DropoutMode::Off && self.rate > 0.0
    }
}

/// Draw a mask of keep-scales, or `None` when the spec is an identity map.
/// An inactive spec consumes no randomness, so p=0 passes are bit-identical.
pub fn dropout_mask(n: usize, spec: &DropoutSpec, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    assert!(spec.rate < 1.0, "dropout: rate {} must be < 1", spec.rate);
    if !spec.is_active() {
        return None;
    }
    let keep_scale = 1.0 / (1.0 - spec.rate);
    Some(
        (0..n)
            .map(|_| if rng.gen::<f64>() < spec.rate { 0.0 } else { keep_scale })
            .collect(),
    )
}

/// Plain-vector inverted dropout.
pub fn dropout_apply(x: &[f64], spec: &DropoutSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match dropout_mask(x.len(), spec, rng) {
        None => x.to_vec(),
        Some(mask) => x.iter().zip(&mask).map(|(v, m)| v * m).collect(),
    }
}

/// In-graph dropout: multiplies by a constant mask so gradients flow through
/// kept coordinates only. Identity specs add no node at all.
pub fn dropout_node(g: &mut Graph, x: NodeId, spec: &DropoutSpec, rng: &mut ChaCha8Rng) -> NodeId {
    match dropout_mask(g.value(x).len(), spec, rng) {
        None => x,
        Some(mask) => {
            let m = g.constant(Array::vector(mask));
            g.mul(x, m)
        }
    }
}
