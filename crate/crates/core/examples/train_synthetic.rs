//! Trains a small model on generated box-score data and reports held-out loss.
//!
//! cargo run --release --example train_synthetic -- [steps]

use std::time::Instant;

use seqset::data::{datagen, SynthSpec};
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::tokenizer::Vocabulary;
use seqset::training::{mean_loss, train, BatchInstance, TrainConfig};

fn main() -> seqset::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let data = datagen(&SynthSpec {
        n_instances: 600,
        ..SynthSpec::default()
    })?;
    let text: Vec<String> = data.sources.clone();
    let vocab = Vocabulary::train(&text, 512)?;
    let instances: Vec<BatchInstance> = data
        .sources
        .iter()
        .zip(&data.tables)
        .map(|(s, t)| BatchInstance::new(&vocab, s, t))
        .collect();
    let (train_set, valid) = instances.split_at(500);
    let mut model = Seq2SeqSet::new(
        ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        },
        0,
    )?;
    let cfg = TrainConfig {
        max_steps: steps,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut out = std::io::stderr();
    let report = train(&mut model, train_set, &[], &cfg, Some(&mut out))?;
    let secs = start.elapsed().as_secs_f64();
    println!("{} steps in {:.1}s ({:.0} ms/step)", report.log.len(), secs, 1000.0 * secs / steps as f64);
    println!("held-out loss {:.4}", mean_loss(&model, &valid[..50], &cfg)?);
    Ok(())
}
