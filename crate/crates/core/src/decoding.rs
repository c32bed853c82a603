//! Greedy inference: the header as a sequence, then all body rows in lockstep.
//!
//! A row may only end (EOS) once it has emitted one SEP fewer than the header
//! has cells, and may not emit further SEPs after that, so every decoded table
//! is rectangular. Rows starting with NULL are dropped.

use crate::autodiff::kernels;
use crate::error::Result;
use crate::model::{DecoderState, Seq2SeqSet, Session};
use crate::table::Table;
use crate::tokenizer::{TokenId, Vocabulary, BOS, EOS, NEWROW, NULL, PAD, SEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_header_len: usize,
    pub max_row_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_header_len: 32,
            max_row_len: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderOutput {
    /// Header tokens without the terminal.
    pub tokens: Vec<TokenId>,
    /// Stopped at the length limit instead of NEWROW.
    pub truncated: bool,
    /// Decoder invocations spent.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyRow {
    pub slot: usize,
    /// Row tokens without EOS.
    pub tokens: Vec<TokenId>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyOutput {
    /// Surviving rows in slot order.
    pub rows: Vec<BodyRow>,
    pub dropped_null_rows: usize,
    /// Lockstep iterations until the last row halted.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub table: Table,
    pub header_tokens: Vec<TokenId>,
    pub header_truncated: bool,
    pub truncated_rows: usize,
    pub emitted_rows: usize,
    pub dropped_null_rows: usize,
    pub header_steps: usize,
    pub body_steps: usize,
    /// Dependent decoder invocations: header steps plus lockstep body steps.
    pub sequential_steps: usize,
}

fn mask(logits: &mut [f64], ids: &[TokenId]) {
    for &t in ids {
        if let Some(v) = logits.get_mut(t as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
}

/// Greedy header decoding from BOS until NEWROW or `max_len` tokens.
/// On return the header caches of `state` hold BOS and every emitted token.
pub fn generate_header(session: &mut Session<'_>, state: &mut DecoderState, max_len: usize) -> Result<HeaderOutput> {
    let mut tokens = Vec::new();
    let mut prev = BOS;
    let mut steps = 0;
    loop {
        let mut logits = session.header_step(state, prev)?;
        steps += 1;
        mask(&mut logits, &[PAD, BOS, EOS, NULL]);
        let next = kernels::argmax(&logits) as TokenId;
        if next == NEWROW {
            return Ok(HeaderOutput {
                tokens,
                truncated: false,
                steps,
            });
        }
        tokens.push(next);
        prev = next;
        if tokens.len() >= max_len {
            // Feed the last token so the cache matches a terminated header.
            session.header_step(state, prev)?;
            return Ok(HeaderOutput {
                tokens,
                truncated: true,
                steps,
            });
        }
    }
}

/// Decodes every row slot in lockstep given a finished header of `cells` cells.
pub fn generate_body(session: &mut Session<'_>, state: &mut DecoderState, cells: usize, max_row_len: usize) -> Result<BodyOutput> {
    let slots = session.model().config.max_rows;
    let need = cells.saturating_sub(1);
    state.clear_rows();
    let mut tokens: Vec<Vec<TokenId>> = vec![Vec::new(); slots];
    let mut seps = vec![0usize; slots];
    let mut prev = vec![BOS; slots];
    let mut status: Vec<Option<bool>> = vec![None; slots]; // Some(truncated) once halted
    let mut dropped = vec![false; slots];
    let mut steps = 0;
    while status.iter().any(Option::is_none) {
        let active: Vec<usize> = (0..slots).filter(|&m| status[m].is_none()).collect();
        let batch: Vec<(usize, TokenId)> = active.iter().map(|&m| (m + 1, prev[m])).collect();
        let all = session.body_steps(state, &batch)?;
        steps += 1;
        for (&m, mut logits) in active.iter().zip(all) {
            mask(&mut logits, &[PAD, BOS, NEWROW]);
            if seps[m] < need {
                mask(&mut logits, &[EOS]);
            } else {
                mask(&mut logits, &[SEP]);
            }
            let next = kernels::argmax(&logits) as TokenId;
            if tokens[m].is_empty() && next == NULL {
                dropped[m] = true;
                status[m] = Some(false);
                continue;
            }
            if next == EOS {
                status[m] = Some(false);
                continue;
            }
            if next == SEP {
                seps[m] += 1;
            }
            tokens[m].push(next);
            prev[m] = next;
            if tokens[m].len() >= max_row_len {
                status[m] = Some(true);
            }
        }
    }
    let mut rows = Vec::new();
    for m in 0..slots {
        if !dropped[m] {
            rows.push(BodyRow {
                slot: m + 1,
                tokens: std::mem::take(&mut tokens[m]),
                truncated: status[m] == Some(true),
            });
        }
    }
    Ok(BodyOutput {
        rows,
        dropped_null_rows: dropped.iter().filter(|&&d| d).count(),
        steps,
    })
}

/// Full decode of one source. Length limits are clamped to what the
/// position table can hold.
pub fn generate_table(model: &Seq2SeqSet, vocab: &Vocabulary, source: &[TokenId], opts: &DecodeOptions) -> Result<DecodeResult> {
    let max_pos = model.config.max_pos;
    let max_header_len = opts.max_header_len.min(max_pos - 1).max(1);
    let max_row_len = opts.max_row_len.min(max_pos).max(1);
    let mut session = Session::new(model, source)?;
    let mut state = DecoderState::new(model);
    let header = generate_header(&mut session, &mut state, max_header_len)?;
    let header_cells = vocab.decode_cells(&header.tokens)?;
    let cells = header_cells.len();
    let body = generate_body(&mut session, &mut state, cells, max_row_len)?;
    let mut table_rows = Vec::with_capacity(body.rows.len());
    for row in &body.rows {
        let mut c = vocab.decode_cells(&row.tokens)?;
        c.resize(cells, String::new());
        table_rows.push(c);
    }
    Ok(DecodeResult {
        table: Table::new(header_cells, table_rows),
        header_tokens: header.tokens,
        header_truncated: header.truncated,
        truncated_rows: body.rows.iter().filter(|r| r.truncated).count(),
        emitted_rows: body.rows.len(),
        dropped_null_rows: body.dropped_null_rows,
        header_steps: header.steps,
        body_steps: body.steps,
        sequential_steps: header.steps + body.steps,
    })
}

/// Decoder invocations a fully sequential model needs for `table`: every
/// token of the serialized form, one separator between rows, and a final EOS.
pub fn sequence_baseline_steps(vocab: &Vocabulary, table: &Table) -> usize {
    let mut n = vocab.encode_cells(&table.header).len();
    for row in &table.body {
        n += 1 + vocab.encode_cells(row).len();
    }
    n + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::table::validate;

    fn vocab() -> Vocabulary {
        Vocabulary::train(&["a b c d e f g h"], 300).unwrap()
    }

    fn random_model(seed: u64, rows: usize) -> Seq2SeqSet {
        let cfg = ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            d_model: 16,
            heads: 2,
            ffn_dim: 32,
            max_rows: rows,
            max_pos: 40,
            max_cols: 6,
            vocab_size: vocab().len(),
        };
        Seq2SeqSet::new(cfg, seed).unwrap()
    }

    /// Zeroes the final norm gain and sets its bias to a scaled-up copy of the
    /// favored embedding, so that token wins every step.
    fn forcing_model(favored: TokenId) -> Seq2SeqSet {
        let mut m = random_model(3, 3);
        let word = m.params.word;
        let row = m.store.value_mut(word).row_slice_mut(favored as usize);
        row.iter_mut().for_each(|x| *x *= 10.0);
        let dir = row.to_vec();
        let norm = m.params.decoder_norm;
        m.store.value_mut(norm.gain).data_mut().fill(0.0);
        m.store.value_mut(norm.bias).data_mut().copy_from_slice(&dir);
        m
    }

    #[test]
    fn random_models_give_well_formed_tables() {
        let v = vocab();
        let opts = DecodeOptions {
            max_header_len: 8,
            max_row_len: 12,
        };
        for seed in 0..20 {
            let m = random_model(seed, 3);
            let r = generate_table(&m, &v, &v.encode("a b c"), &opts).unwrap();
            assert!(validate(&r.table).well_formed(), "{:?}", r.table);
            assert!(r.sequential_steps >= r.header_tokens.len());
            assert_eq!(r.emitted_rows + r.dropped_null_rows, 3);
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let v = vocab();
        let m = random_model(5, 2);
        let a = generate_table(&m, &v, &v.encode("c a"), &DecodeOptions::default()).unwrap();
        let b = generate_table(&m, &v, &v.encode("c a"), &DecodeOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_null_rows_leave_header_only() {
        let v = vocab();
        let m = forcing_model(NULL);
        let r = generate_table(&m, &v, &v.encode("a"), &DecodeOptions::default()).unwrap();
        // NULL is masked in the header, so the header runs to its length limit.
        assert!(r.header_truncated);
        assert!(r.table.body.is_empty());
        assert_eq!(r.dropped_null_rows, 3);
        assert_eq!(r.body_steps, 1);
        assert!(validate(&r.table).well_formed());
    }

    #[test]
    fn single_cell_header_rows_stop_at_first_eos() {
        let v = vocab();
        let m = forcing_model(EOS);
        let mut session = Session::new(&m, &v.encode("a")).unwrap();
        let mut state = DecoderState::new(&m);
        session.header_step(&mut state, BOS).unwrap();
        let body = generate_body(&mut session, &mut state, 1, 10).unwrap();
        assert_eq!(body.steps, 1);
        assert!(body.rows.iter().all(|r| r.tokens.is_empty() && !r.truncated));
    }

    #[test]
    fn forced_eos_waits_for_separators() {
        let v = vocab();
        let m = forcing_model(EOS);
        let mut session = Session::new(&m, &v.encode("a")).unwrap();
        let mut state = DecoderState::new(&m);
        session.header_step(&mut state, BOS).unwrap();
        let body = generate_body(&mut session, &mut state, 3, 10).unwrap();
        for r in &body.rows {
            let seps = r.tokens.iter().filter(|&&t| t == SEP).count();
            assert!(seps <= 2);
            assert!(r.truncated || seps == 2);
        }
    }

    #[test]
    fn baseline_counts_every_token() {
        let v = vocab();
        let t = Table::new(vec!["".into(), "a".into()], vec![vec!["b c".into(), "d".into()]]);
        // [SEP a] + [NEWROW b c SEP d] + EOS
        assert_eq!(sequence_baseline_steps(&v, &t), 2 + 5 + 1);
    }
}
