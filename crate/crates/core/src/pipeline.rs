//! Whole-run helpers shared by the command line and the examples: vocabulary
//! building, training from a dataset, saving and loading a trained run, and
//! decoding a corpus.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, RunConfig};
use crate::decoding::{generate_table, DecodeOptions, DecodeResult};
use crate::error::{Error, Result};
use crate::model::Seq2SeqSet;
use crate::tokenizer::Vocabulary;
use crate::training::{train, BatchInstance, TrainReport};

/// Vocabulary over source words and table cell words.
pub fn build_vocab(d: &Dataset, max_size: usize) -> Result<Vocabulary> {
    let mut corpus: Vec<&str> = d.sources.iter().map(String::as_str).collect();
    for t in &d.tables {
        corpus.extend(t.header.iter().map(String::as_str));
        corpus.extend(t.body.iter().flatten().map(String::as_str));
    }
    Vocabulary::train(&corpus, max_size)
}

pub fn encode_dataset(vocab: &Vocabulary, d: &Dataset) -> Vec<BatchInstance> {
    d.sources
        .iter()
        .zip(&d.tables)
        .map(|(s, t)| BatchInstance::new(vocab, s, t))
        .collect()
}

/// A trained model with everything needed to decode.
pub struct TrainedRun {
    pub model: Seq2SeqSet,
    pub vocab: Vocabulary,
    pub config: RunConfig,
}

impl TrainedRun {
    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_header_len: self.config.max_header_len,
            max_row_len: self.config.max_row_len,
        }
    }
}

/// Trains on `d`, holding out its last `config.valid_size` pairs for
/// checkpoint selection. The vocabulary is built from the training part and
/// the model's vocabulary size is set to its actual size.
pub fn train_run(config: &RunConfig, d: &Dataset, log: Option<&mut dyn Write>) -> Result<(TrainedRun, TrainReport)> {
    config.validate()?;
    let valid_size = if d.len() > config.valid_size { config.valid_size } else { 0 };
    let (train_part, valid_part) = d.clone().split_tail(valid_size);
    let vocab = build_vocab(&train_part, config.model.vocab_size)?;
    let mut config = config.clone();
    config.model.vocab_size = vocab.len();
    let train_set = encode_dataset(&vocab, &train_part);
    let valid_set = encode_dataset(&vocab, &valid_part);
    let mut model = Seq2SeqSet::new(config.model.clone(), config.train.seed)?;
    let report = train(&mut model, &train_set, &valid_set, &config.train, log)?;
    Ok((TrainedRun { model, vocab, config }, report))
}

/// Path of a file stored next to a checkpoint.
pub fn sidecar(checkpoint: &Path, ext: &str) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes the checkpoint plus `.vocab` and `.config` files next to it.
pub fn save_run(run: &TrainedRun, checkpoint: &Path) -> Result<()> {
    run.model.save(checkpoint)?;
    run.vocab.save(&sidecar(checkpoint, "vocab"))?;
    let cfg = sidecar(checkpoint, "config");
    std::fs::write(&cfg, run.config.to_text()).map_err(|e| Error::io(&cfg, e))
}

pub fn load_run(checkpoint: &Path) -> Result<TrainedRun> {
    let config = RunConfig::load(&sidecar(checkpoint, "config"))?;
    let vocab = Vocabulary::load(&sidecar(checkpoint, "vocab"))?;
    if vocab.len() != config.model.vocab_size {
        return Err(Error::Dimension(format!(
            "vocabulary has {} entries but the config expects {}",
            vocab.len(),
            config.model.vocab_size
        )));
    }
    let model = Seq2SeqSet::from_checkpoint(config.model.clone(), checkpoint)?;
    Ok(TrainedRun { model, vocab, config })
}

/// Decodes every source; errors name the offending line.
pub fn decode_corpus(model: &Seq2SeqSet, vocab: &Vocabulary, sources: &[String], opts: &DecodeOptions) -> Result<Vec<DecodeResult>> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            generate_table(model, vocab, &vocab.encode(s), opts).map_err(|e| Error::Data(format!("source line {}: {e}", i + 1)))
        })
        .collect()
}
