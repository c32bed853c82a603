//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pairs held out from the training file for checkpoint selection.
    pub valid_size: usize,
    pub max_header_len: usize,
    pub max_row_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            valid_size: 100,
            max_header_len: 32,
            max_row_len: 64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "encoder_layers" => m.encoder_layers = parse(key, value)?,
            "decoder_layers" => m.decoder_layers = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "ffn_dim" => m.ffn_dim = parse(key, value)?,
            "rows_m" => m.max_rows = parse(key, value)?,
            "max_pos" => m.max_pos = parse(key, value)?,
            "max_cols" => m.max_cols = parse(key, value)?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "null_scale" => t.null_scale = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "warmup_ratio" => t.warmup_ratio = parse(key, value)?,
            "max_tokens_per_batch" => t.max_tokens_per_batch = parse(key, value)?,
            "steps" => t.max_steps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "clip_norm" => {
                t.clip_norm = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval_every" => t.eval_every = parse(key, value)?,
            "valid_size" => self.valid_size = parse(key, value)?,
            "max_header_len" => self.max_header_len = parse(key, value)?,
            "max_row_len" => self.max_row_len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by the keys in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.max_header_len == 0 || self.max_row_len == 0 {
            return Err(Error::Config("decode lengths must be positive".into()));
        }
        if self.max_header_len > self.model.max_pos || self.max_row_len > self.model.max_pos {
            return Err(Error::Config(format!(
                "decode lengths {}/{} exceed max_pos {}",
                self.max_header_len, self.max_row_len, self.model.max_pos
            )));
        }
        Ok(())
    }

    /// Every key with its value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let clip = t.clip_norm.map_or("none".to_string(), |c| c.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("encoder_layers", m.encoder_layers.to_string()),
            ("decoder_layers", m.decoder_layers.to_string()),
            ("d_model", m.d_model.to_string()),
            ("heads", m.heads.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("rows_m", m.max_rows.to_string()),
            ("max_pos", m.max_pos.to_string()),
            ("max_cols", m.max_cols.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("lambda", t.lambda.to_string()),
            ("null_scale", t.null_scale.to_string()),
            ("lr", t.lr.to_string()),
            ("warmup_ratio", t.warmup_ratio.to_string()),
            ("max_tokens_per_batch", t.max_tokens_per_batch.to_string()),
            ("steps", t.max_steps.to_string()),
            ("seed", t.seed.to_string()),
            ("clip_norm", clip),
            ("eval_every", t.eval_every.to_string()),
            ("valid_size", self.valid_size.to_string()),
            ("max_header_len", self.max_header_len.to_string()),
            ("max_row_len", self.max_row_len.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.train.clip_norm = None;
        c.train.lr = 3e-4;
        c.model.max_rows = 7;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blanks() {
        let c = RunConfig::parse("# smoke\n\nd_model = 32 # small\nheads=2\n").unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.heads, 2);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = RunConfig::parse("d_modle = 32\n").unwrap_err();
        assert!(e.to_string().contains("d_modle"));
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(RunConfig::parse("heads = four\n").is_err());
        assert!(RunConfig::parse("d_model\n").is_err());
        assert!(RunConfig::parse("d_model = 30\nheads = 4\n").is_err());
        assert!(RunConfig::parse("max_row_len = 500\n").is_err());
    }
}
