//! Text encoder, table header generator and table body generator.
//!
//! The header and the body rows run through one shared decoder stack. A body
//! row's self-attention at layer `l` sees the header's layer-`l` keys followed
//! by its own prefix, never another row. Decoder inputs are the sum of word,
//! position, row and column embeddings; row slot 0 is the header.

mod config;
mod decoder;
mod params;

use std::ops::Range;

pub use config::ModelConfig;
pub use decoder::{first_cell_rollout, DecoderState, KvCache, RowCache, Session};
pub use params::{DecoderLayer, EncoderLayer, ModelParams};

use crate::autodiff::{checkpoint, Graph, KeySpans, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, BOS, SEP};

/// A complete model: configuration, parameter values and handles.
#[derive(Clone, Debug)]
pub struct Seq2SeqSet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

/// Encoder output plus the per-layer cross-attention keys and values derived from it.
#[derive(Clone, Debug)]
pub struct Memory {
    pub states: Var,
    pub cross: Vec<LayerKv>,
}

/// Self-attention keys and values of one decoder layer, as graph values.
#[derive(Clone, Copy, Debug)]
pub struct LayerKv {
    pub keys: Var,
    pub values: Var,
}

/// Column index of each input token: the number of SEP tokens before it,
/// saturating at `max_cols - 1`.
pub fn column_indices(inputs: &[TokenId], max_cols: usize) -> Vec<usize> {
    let mut seps = 0;
    inputs
        .iter()
        .map(|&t| {
            let c = seps.min(max_cols - 1);
            if t == SEP {
                seps += 1;
            }
            c
        })
        .collect()
}

/// Decoder inputs for a target sequence under teacher forcing: BOS followed
/// by every target token but the last.
pub fn teacher_inputs(targets: &[TokenId]) -> Vec<TokenId> {
    match targets.split_last() {
        Some((_, init)) => std::iter::once(BOS).chain(init.iter().copied()).collect(),
        None => Vec::new(),
    }
}

pub(crate) struct DecoderInputs {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl DecoderInputs {
    pub fn new() -> Self {
        Self {
            tokens: Vec::new(),
            positions: Vec::new(),
            rows: Vec::new(),
            cols: Vec::new(),
        }
    }

    pub fn push(&mut self, token: TokenId, position: usize, row: usize, col: usize) {
        self.tokens.push(token as usize);
        self.positions.push(position);
        self.rows.push(row);
        self.cols.push(col);
    }

    /// Appends a whole row of inputs starting at position 0.
    pub fn push_sequence(&mut self, inputs: &[TokenId], row: usize, max_cols: usize) {
        let cols = column_indices(inputs, max_cols);
        for (k, (&t, c)) in inputs.iter().zip(cols).enumerate() {
            self.push(t, k, row, c);
        }
    }
}

impl Seq2SeqSet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = ModelParams::init(&config, &mut store, seed)?;
        Ok(Self {
            config,
            store,
            params,
        })
    }

    /// Builds the model for `config` and fills it from a checkpoint file.
    pub fn from_checkpoint(config: ModelConfig, path: &std::path::Path) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        checkpoint::load_checkpoint(&mut model.store, path)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(&self.store, path)
    }

    /// Runs the encoder over source token ids.
    pub fn encode(&self, g: &mut Graph, ids: &[TokenId]) -> Result<Var> {
        if ids.len() > self.config.max_pos {
            return Err(Error::Index(format!(
                "source of {} tokens exceeds max_pos {}",
                ids.len(),
                self.config.max_pos
            )));
        }
        let s = &self.store;
        let p = &self.params;
        let word = g.param(s, p.word);
        let pos = g.param(s, p.pos);
        let tokens: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let w = g.embedding_lookup(word, &tokens)?;
        let q = g.embedding_lookup(pos, &positions)?;
        let mut x = g.add(w, q)?;
        for layer in &p.encoder {
            let h = layer.self_norm.forward(g, s, x)?;
            let a = layer.self_attn.forward(g, s, h, h, false, 0)?;
            x = g.residual(x, a)?;
            let h = layer.ffn_norm.forward(g, s, x)?;
            let f = layer.ffn.forward(g, s, h)?;
            x = g.residual(x, f)?;
        }
        p.encoder_norm.forward(g, s, x)
    }

    /// Cross-attention keys and values for every decoder layer.
    pub fn memory(&self, g: &mut Graph, states: Var) -> Result<Memory> {
        let mut cross = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (keys, values) = layer.cross_attn.project_kv(g, &self.store, states)?;
            cross.push(LayerKv { keys, values });
        }
        Ok(Memory { states, cross })
    }

    /// Word + position + row + column embedding of one decoder input.
    pub fn embed_decoder_input(&self, token: TokenId, position: usize, row: usize, col: usize) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let mut inputs = DecoderInputs::new();
        inputs.push(token, position, row, col);
        let x = self.embed(&mut g, &inputs)?;
        Ok(g.value(x).data().to_vec())
    }

    pub(crate) fn embed(&self, g: &mut Graph, inputs: &DecoderInputs) -> Result<Var> {
        let c = &self.config;
        let check = |what: &str, v: &[usize], limit: usize| -> Result<()> {
            match v.iter().find(|&&i| i >= limit) {
                Some(i) => Err(Error::Index(format!("{what} {i} outside 0..{limit}"))),
                None => Ok(()),
            }
        };
        check("token", &inputs.tokens, c.vocab_size)?;
        check("position", &inputs.positions, c.max_pos)?;
        check("row index", &inputs.rows, c.max_rows + 1)?;
        check("column index", &inputs.cols, c.max_cols)?;
        let s = &self.store;
        let p = &self.params;
        let (word, pos, row, col) = (g.param(s, p.word), g.param(s, p.pos), g.param(s, p.row), g.param(s, p.col));
        let w = g.embedding_lookup(word, &inputs.tokens)?;
        let q = g.embedding_lookup(pos, &inputs.positions)?;
        let r = g.embedding_lookup(row, &inputs.rows)?;
        let k = g.embedding_lookup(col, &inputs.cols)?;
        let x = g.add(w, q)?;
        let x = g.add(x, r)?;
        g.add(x, k)
    }

    /// Runs the shared decoder stack on the embedded inputs `x`.
    ///
    /// At each layer the self-attention keys are `prefix[l]` (if any) followed
    /// by the keys of `x`; `spans` index into that concatenation. Returns the
    /// final normalized states and the new keys/values of every layer.
    pub(crate) fn run_decoder(
        &self,
        g: &mut Graph,
        mem: &Memory,
        mut x: Var,
        prefix: Option<&[LayerKv]>,
        spans: &[KeySpans],
    ) -> Result<(Var, Vec<LayerKv>)> {
        let s = &self.store;
        let nq = g.value(x).rows();
        let n_mem = g.value(mem.states).rows();
        let mut new_kv = Vec::with_capacity(self.params.decoder.len());
        for (l, layer) in self.params.decoder.iter().enumerate() {
            let h = layer.self_norm.forward(g, s, x)?;
            let (k_new, v_new) = layer.self_attn.project_kv(g, s, h)?;
            let (keys, values) = match prefix {
                Some(pre) => (
                    g.concat_rows(&[pre[l].keys, k_new])?,
                    g.concat_rows(&[pre[l].values, v_new])?,
                ),
                None => (k_new, v_new),
            };
            let a = layer.self_attn.attend(g, s, h, keys, values, spans.to_vec())?;
            x = g.residual(x, a)?;
            let h = layer.cross_norm.forward(g, s, x)?;
            let cross_spans: Vec<KeySpans> = vec![vec![0..n_mem]; nq];
            let c = layer
                .cross_attn
                .attend(g, s, h, mem.cross[l].keys, mem.cross[l].values, cross_spans)?;
            x = g.residual(x, c)?;
            let h = layer.ffn_norm.forward(g, s, x)?;
            let f = layer.ffn.forward(g, s, h)?;
            x = g.residual(x, f)?;
            new_kv.push(LayerKv {
                keys: k_new,
                values: v_new,
            });
        }
        let out = self.params.decoder_norm.forward(g, s, x)?;
        Ok((out, new_kv))
    }

    /// Vocabulary logits through the tied output projection.
    pub fn logits(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let word = g.param(&self.store, self.params.word);
        g.matmul_bt(hidden, word)
    }

    /// Teacher-forced header pass. Returns one logit row per target token and
    /// the per-layer header keys/values that body rows attend to.
    pub fn header_forward(&self, g: &mut Graph, mem: &Memory, targets: &[TokenId]) -> Result<(Var, Vec<LayerKv>)> {
        if targets.is_empty() {
            return Err(Error::Index("header target is empty".into()));
        }
        let inputs = teacher_inputs(targets);
        self.check_length(inputs.len())?;
        let mut di = DecoderInputs::new();
        di.push_sequence(&inputs, 0, self.config.max_cols);
        let x = self.embed(g, &di)?;
        let spans: Vec<KeySpans> = (0..inputs.len()).map(|i| vec![0..i + 1]).collect();
        let (hidden, kv) = self.run_decoder(g, mem, x, None, &spans)?;
        Ok((self.logits(g, hidden)?, kv))
    }

    /// Teacher-forced pass over several body rows at once. `rows` pairs a row
    /// slot in `1..=max_rows` with that row's target tokens; the logits come
    /// back row after row, one per target token.
    pub fn body_forward(
        &self,
        g: &mut Graph,
        mem: &Memory,
        header: &[LayerKv],
        rows: &[(usize, &[TokenId])],
    ) -> Result<Var> {
        let header_len = g.value(header[0].keys).rows();
        let mut di = DecoderInputs::new();
        let mut spans: Vec<KeySpans> = Vec::new();
        let mut offset = 0;
        for &(slot, targets) in rows {
            self.check_slot(slot)?;
            let inputs = teacher_inputs(targets);
            self.check_length(inputs.len())?;
            di.push_sequence(&inputs, slot, self.config.max_cols);
            for i in 0..inputs.len() {
                spans.push(body_spans(header_len, header_len + offset..header_len + offset + i + 1, None));
            }
            offset += inputs.len();
        }
        let x = self.embed(g, &di)?;
        let (hidden, _) = self.run_decoder(g, mem, x, Some(header), &spans)?;
        self.logits(g, hidden)
    }

    pub(crate) fn check_slot(&self, slot: usize) -> Result<()> {
        if slot == 0 || slot > self.config.max_rows {
            return Err(Error::Index(format!(
                "row slot {slot} outside 1..={}",
                self.config.max_rows
            )));
        }
        Ok(())
    }

    pub(crate) fn check_length(&self, len: usize) -> Result<()> {
        if len > self.config.max_pos {
            return Err(Error::Index(format!(
                "decoder sequence of {len} tokens exceeds max_pos {}",
                self.config.max_pos
            )));
        }
        Ok(())
    }

    pub fn param_tensor(&self, name: &str) -> Option<&Tensor> {
        self.store.find(name).map(|id| self.store.value(id))
    }
}

/// Keys for a body-row query: the whole header, then the row's own prefix
/// ranges in order.
pub(crate) fn body_spans(header_len: usize, own: Range<usize>, extra: Option<Range<usize>>) -> KeySpans {
    let mut s = vec![0..header_len, own];
    s.extend(extra);
    s
}
