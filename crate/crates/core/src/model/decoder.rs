//! Incremental decoding with per-layer key/value caches.

use super::{body_spans, DecoderInputs, LayerKv, Memory, Seq2SeqSet};
use crate::autodiff::{kernels, Graph, KeySpans, Tensor};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, BOS, SEP};

/// Cached self-attention keys and values of one decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct KvCache {
    pub keys: Tensor,
    pub values: Tensor,
}

impl KvCache {
    fn empty(d: usize) -> Self {
        Self {
            keys: Tensor::zeros(0, d),
            values: Tensor::zeros(0, d),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }
}

/// Inputs fed so far to one decoder sequence and its per-layer caches.
#[derive(Clone, Debug, PartialEq)]
pub struct RowCache {
    pub inputs: Vec<TokenId>,
    pub layers: Vec<KvCache>,
}

impl RowCache {
    fn new(layers: usize, d: usize) -> Self {
        Self {
            inputs: Vec::new(),
            layers: (0..layers).map(|_| KvCache::empty(d)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn next_column(&self, max_cols: usize) -> usize {
        let seps = self.inputs.iter().filter(|&&t| t == SEP).count();
        seps.min(max_cols - 1)
    }
}

/// Header caches plus one cache per body-row slot (index `m - 1` for slot `m`).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub header: RowCache,
    pub rows: Vec<RowCache>,
}

impl DecoderState {
    pub fn new(model: &Seq2SeqSet) -> Self {
        let c = &model.config;
        Self {
            header: RowCache::new(c.decoder_layers, c.d_model),
            rows: (0..c.max_rows).map(|_| RowCache::new(c.decoder_layers, c.d_model)).collect(),
        }
    }

    /// State whose header was fed `inputs`, with the given per-layer caches.
    pub fn with_header(model: &Seq2SeqSet, inputs: Vec<TokenId>, layers: Vec<KvCache>) -> Result<Self> {
        let c = &model.config;
        if layers.len() != c.decoder_layers || layers.iter().any(|l| l.len() != inputs.len()) {
            return Err(Error::Index(format!(
                "header cache does not match {} inputs over {} layers",
                inputs.len(),
                c.decoder_layers
            )));
        }
        let mut state = Self::new(model);
        state.header = RowCache { inputs, layers };
        Ok(state)
    }

    /// Resets every body row, keeping the header.
    pub fn clear_rows(&mut self) {
        for r in &mut self.rows {
            *r = RowCache::new(r.layers.len(), r.layers[0].keys.cols());
        }
    }
}

/// Decoding context for one source: no-grad graph with all parameters and
/// the encoder memory loaded once.
pub struct Session<'m> {
    model: &'m Seq2SeqSet,
    graph: Graph,
    memory: Memory,
    mark: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Seq2SeqSet, source: &[TokenId]) -> Result<Self> {
        let mut graph = Graph::no_grad();
        for id in model.store.ids() {
            graph.param(&model.store, id);
        }
        let states = model.encode(&mut graph, source)?;
        let memory = model.memory(&mut graph, states)?;
        let mark = graph.len();
        Ok(Self {
            model,
            graph,
            memory,
            mark,
        })
    }

    /// Session over encoder states computed elsewhere (e.g. on a training graph).
    pub fn from_encoder_states(model: &'m Seq2SeqSet, states: Tensor) -> Result<Self> {
        let mut graph = Graph::no_grad();
        for id in model.store.ids() {
            graph.param(&model.store, id);
        }
        let states = graph.constant(states)?;
        let memory = model.memory(&mut graph, states)?;
        let mark = graph.len();
        Ok(Self {
            model,
            graph,
            memory,
            mark,
        })
    }

    pub fn model(&self) -> &Seq2SeqSet {
        self.model
    }

    pub fn encoder_states(&self) -> &Tensor {
        self.graph.value(self.memory.states)
    }

    /// Feeds `prev` to the header and returns logits for the next header token.
    pub fn header_step(&mut self, state: &mut DecoderState, prev: TokenId) -> Result<Vec<f64>> {
        let model = self.model;
        let c = &model.config;
        let pos = state.header.len();
        model.check_length(pos + 1)?;
        let mut di = DecoderInputs::new();
        di.push(prev, pos, 0, state.header.next_column(c.max_cols));
        let g = &mut self.graph;
        let x = model.embed(g, &di)?;
        let mut prefix = Vec::with_capacity(c.decoder_layers);
        for cache in &state.header.layers {
            prefix.push(LayerKv {
                keys: g.constant(cache.keys.clone())?,
                values: g.constant(cache.values.clone())?,
            });
        }
        let spans = vec![vec![0..pos, pos..pos + 1]];
        let (hidden, kv) = model.run_decoder(g, &self.memory, x, Some(&prefix), &spans)?;
        let logits = model.logits(g, hidden)?;
        let out = g.value(logits).data().to_vec();
        for (cache, new) in state.header.layers.iter_mut().zip(&kv) {
            cache.keys.append_rows(g.value(new.keys))?;
            cache.values.append_rows(g.value(new.values))?;
        }
        state.header.inputs.push(prev);
        self.graph.truncate(self.mark);
        Ok(out)
    }

    /// Advances one body row by `prev`; see [`Session::body_steps`].
    pub fn body_step(&mut self, state: &mut DecoderState, slot: usize, prev: TokenId) -> Result<Vec<f64>> {
        Ok(self.body_steps(state, &[(slot, prev)])?.remove(0))
    }

    /// Advances several body rows in one batched pass. Each entry pairs a row
    /// slot in `1..=max_rows` with the token it consumes; slots must be distinct.
    /// Returns next-token logits per entry.
    pub fn body_steps(&mut self, state: &mut DecoderState, steps: &[(usize, TokenId)]) -> Result<Vec<Vec<f64>>> {
        if steps.is_empty() {
            return Ok(Vec::new());
        }
        let model = self.model;
        let c = &model.config;
        let header_len = state.header.len();
        let mut seen = vec![false; c.max_rows + 1];
        let mut di = DecoderInputs::new();
        for &(slot, prev) in steps {
            model.check_slot(slot)?;
            if seen[slot] {
                return Err(Error::Index(format!("row slot {slot} stepped twice in one batch")));
            }
            seen[slot] = true;
            let row = &state.rows[slot - 1];
            model.check_length(row.len() + 1)?;
            di.push(prev, row.len(), slot, row.next_column(c.max_cols));
        }
        let past_total: usize = steps.iter().map(|&(s, _)| state.rows[s - 1].len()).sum();
        let mut spans: Vec<KeySpans> = Vec::with_capacity(steps.len());
        let mut offset = header_len;
        for (i, &(slot, _)) in steps.iter().enumerate() {
            let len = state.rows[slot - 1].len();
            let own = header_len + past_total + i;
            spans.push(body_spans(header_len, offset..offset + len, Some(own..own + 1)));
            offset += len;
        }
        let g = &mut self.graph;
        let x = model.embed(g, &di)?;
        let mut prefix = Vec::with_capacity(c.decoder_layers);
        for l in 0..c.decoder_layers {
            let mut keys = state.header.layers[l].keys.clone();
            let mut values = state.header.layers[l].values.clone();
            for &(slot, _) in steps {
                keys.append_rows(&state.rows[slot - 1].layers[l].keys)?;
                values.append_rows(&state.rows[slot - 1].layers[l].values)?;
            }
            prefix.push(LayerKv {
                keys: g.constant(keys)?,
                values: g.constant(values)?,
            });
        }
        let (hidden, kv) = model.run_decoder(g, &self.memory, x, Some(&prefix), &spans)?;
        let logits = model.logits(g, hidden)?;
        let lt = g.value(logits);
        let out: Vec<Vec<f64>> = (0..steps.len()).map(|i| lt.row_slice(i).to_vec()).collect();
        for (i, &(slot, prev)) in steps.iter().enumerate() {
            let row = &mut state.rows[slot - 1];
            for (cache, new) in row.layers.iter_mut().zip(&kv) {
                cache.keys.append_rows(&g.value(new.keys).slice_rows(i, i + 1))?;
                cache.values.append_rows(&g.value(new.values).slice_rows(i, i + 1))?;
            }
            row.inputs.push(prev);
        }
        self.graph.truncate(self.mark);
        Ok(out)
    }
}

/// Greedily decodes `steps` tokens for every body row from BOS and returns
/// the full next-token distribution at each step, per row.
///
/// Runs on a copy of `state`; nothing is recorded for gradients.
pub fn first_cell_rollout(session: &mut Session<'_>, state: &DecoderState, steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let rows = session.model().config.max_rows;
    let mut st = state.clone();
    st.clear_rows();
    let mut dists: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); rows];
    let mut prev: Vec<TokenId> = vec![BOS; rows];
    for _ in 0..steps {
        let batch: Vec<(usize, TokenId)> = (1..=rows).map(|m| (m, prev[m - 1])).collect();
        let logits = session.body_steps(&mut st, &batch)?;
        for (m, mut row) in logits.into_iter().enumerate() {
            kernels::softmax_in_place(&mut row);
            prev[m] = kernels::argmax(&row) as TokenId;
            dists[m].push(row);
        }
    }
    Ok(dists)
}
