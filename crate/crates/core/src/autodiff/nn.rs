//! Transformer building blocks expressed as parameter handles plus graph calls.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{causal_spans, Graph, KeySpans, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn normal_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("consistent shape")
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), normal_tensor(rng, input, output, std));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, output));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::new(1, dim, vec![1.0; dim]).expect("shape"));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, dim));
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Two-layer position-wise network with a GELU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, out_std: f64, rng: &mut R) -> Self {
        let up = Linear::new(store, &format!("{name}.up"), dim, hidden, (1.0 / dim as f64).sqrt(), rng);
        let down = Linear::new(store, &format!("{name}.down"), hidden, dim, out_std, rng);
        Self { up, down }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, store, h)
    }
}

/// Multi-head attention with learned query/key/value/output projections.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        out_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        let std = (1.0 / dim as f64).sqrt();
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, std, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, std, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, std, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, out_std, rng),
            heads,
        })
    }

    /// Projects memory states into keys and values.
    pub fn project_kv(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        Ok((k, v))
    }

    /// Attends already-projected keys/values from queries built out of `x`.
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        keys: Var,
        values: Var,
        spans: Vec<KeySpans>,
    ) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let a = g.attention(q, keys, values, self.heads, spans)?;
        self.output.forward(g, store, a)
    }

    /// Full attention from `queries` over `memory`. With `causal`, query `i`
    /// sees memory positions `0..=i + kv_offset`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        memory: Var,
        causal: bool,
        kv_offset: usize,
    ) -> Result<Var> {
        let (k, v) = self.project_kv(g, store, memory)?;
        let nq = g.value(queries).rows();
        let nk = g.value(memory).rows();
        self.attend(g, store, queries, k, v, causal_spans(nq, nk, causal, kv_offset))
    }
}
