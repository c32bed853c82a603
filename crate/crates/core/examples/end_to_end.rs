//! Generate data, train, decode the held-out split and score it.
//!
//! cargo run --release --example end_to_end -- [steps] [train_size]

use std::time::Instant;

use seqset::data::{datagen, SynthSpec};
use seqset::decoding::{generate_table, DecodeOptions};
use seqset::eval::evaluate_corpus;
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::table::serialize_table;
use seqset::tokenizer::Vocabulary;
use seqset::training::{train, BatchInstance, TrainConfig};

fn main() -> seqset::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let steps = args.next().flatten().unwrap_or(300);
    let n_train = args.next().flatten().unwrap_or(2000);
    let train_data = datagen(&SynthSpec {
        n_instances: n_train,
        seed: 1,
        ..SynthSpec::default()
    })?;
    let valid_data = datagen(&SynthSpec {
        n_instances: 100,
        seed: 2,
        ..SynthSpec::default()
    })?;
    let test_data = datagen(&SynthSpec {
        n_instances: 200,
        seed: 3,
        ..SynthSpec::default()
    })?;

    let mut corpus = train_data.sources.clone();
    corpus.extend(train_data.tables.iter().flat_map(|t| t.header.iter().chain(t.body.iter().flatten()).cloned()));
    let vocab = Vocabulary::train(&corpus, 512)?;
    let encode = |d: &seqset::data::Dataset| -> Vec<BatchInstance> {
        d.sources.iter().zip(&d.tables).map(|(s, t)| BatchInstance::new(&vocab, s, t)).collect()
    };
    let (train_set, valid_set) = (encode(&train_data), encode(&valid_data));

    let mut model = Seq2SeqSet::new(
        ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        },
        0,
    )?;
    let cfg = TrainConfig {
        max_steps: steps,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &train_set, &valid_set, &cfg, Some(&mut std::io::stderr()))?;
    println!("trained {steps} steps in {:.0}s, best step {:?}", start.elapsed().as_secs_f64(), report.best_step);
    for (step, loss) in &report.validations {
        println!("  validation at {step}: {loss:.4}");
    }

    let opts = DecodeOptions::default();
    let mut lines = Vec::new();
    for src in &test_data.sources {
        let result = generate_table(&model, &vocab, &vocab.encode(src), &opts)?;
        lines.push(serialize_table(&result.table)?);
    }
    for (line, gold) in lines.iter().zip(&test_data.tables).take(3) {
        println!("pred: {line}\ngold: {}", serialize_table(gold)?);
    }
    println!("{}", evaluate_corpus(&lines, &test_data.tables)?);
    Ok(())
}
