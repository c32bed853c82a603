#![allow(dead_code)]

use seqset::data::{datagen, Dataset, SynthSpec};
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::pipeline::{build_vocab, encode_dataset};
use seqset::tokenizer::Vocabulary;
use seqset::training::BatchInstance;

/// Small synthetic corpus with at most `rows_max` body rows per table.
pub fn tiny_dataset(n: usize, rows_max: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        n_instances: n,
        rows_min: 1,
        rows_max,
        name_pool: 8,
        seed,
        ..SynthSpec::default()
    };
    datagen(&spec).unwrap()
}

pub fn tiny_config(vocab: usize, rows: usize, d_model: usize) -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        d_model,
        heads: 2,
        ffn_dim: 2 * d_model,
        max_rows: rows,
        max_pos: 64,
        max_cols: 4,
        vocab_size: vocab,
    }
}

pub struct Fixture {
    pub data: Dataset,
    pub vocab: Vocabulary,
    pub instances: Vec<BatchInstance>,
    pub model: Seq2SeqSet,
}

pub fn fixture(n: usize, rows: usize, d_model: usize, seed: u64) -> Fixture {
    let data = tiny_dataset(n, rows.min(4), seed);
    let vocab = build_vocab(&data, 400).unwrap();
    let instances = encode_dataset(&vocab, &data);
    let model = Seq2SeqSet::new(tiny_config(vocab.len(), rows, d_model), seed).unwrap();
    Fixture {
        data,
        vocab,
        instances,
        model,
    }
}
