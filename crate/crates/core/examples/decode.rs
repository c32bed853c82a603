//! Decode tables from a saved checkpoint, or from an untrained model when no
//! checkpoint is given, and show the step counts against a sequential decoder.
//!
//! cargo run --example decode -- [checkpoint]

use std::path::Path;

use seqset::data::{datagen, SynthSpec};
use seqset::decoding::{generate_table, sequence_baseline_steps, DecodeOptions};
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::pipeline::{build_vocab, load_run};
use seqset::table::serialize_table;

fn main() -> seqset::Result<()> {
    let d = datagen(&SynthSpec {
        n_instances: 4,
        seed: 42,
        ..SynthSpec::default()
    })?;
    let (model, vocab, opts) = match std::env::args().nth(1) {
        Some(p) => {
            let run = load_run(Path::new(&p))?;
            let opts = run.decode_options();
            (run.model, run.vocab, opts)
        }
        None => {
            let vocab = build_vocab(&d, 512)?;
            let config = ModelConfig {
                vocab_size: vocab.len(),
                ..ModelConfig::default()
            };
            (Seq2SeqSet::new(config, 0)?, vocab, DecodeOptions::default())
        }
    };
    for (src, gold) in d.sources.iter().zip(&d.tables) {
        let r = generate_table(&model, &vocab, &vocab.encode(src), &opts)?;
        println!("text: {src}");
        println!("pred: {}", serialize_table(&r.table)?);
        println!(
            "rows {} (null slots {}), steps {} = header {} + body {}, sequential baseline {}\n",
            r.emitted_rows,
            r.dropped_null_rows,
            r.sequential_steps,
            r.header_steps,
            r.body_steps,
            sequence_baseline_steps(&vocab, gold)
        );
    }
    Ok(())
}
