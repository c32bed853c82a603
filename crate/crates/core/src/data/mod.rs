//! Datasets on disk, synthetic generation and run configuration.

mod config;
mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::RunConfig;
pub use synth::{datagen, StatColumn, SynthSpec};

use crate::error::{Error, Result};
use crate::table::{parse_table, serialize_table, Table};

/// Aligned source documents and target tables.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Dataset {
    pub sources: Vec<String>,
    pub tables: Vec<Table>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Splits off the last `n` pairs.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let at = self.len().saturating_sub(n);
        let tail = Dataset {
            sources: self.sources.split_off(at),
            tables: self.tables.split_off(at),
        };
        (self, tail)
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Parses one serialized table per line.
pub fn read_tables(path: &Path) -> Result<Vec<Table>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            parse_table(line).map_err(|r| Error::Format(format!("{}:{}: {r}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_dataset(source: &Path, target: &Path) -> Result<Dataset> {
    let sources = read_lines(source)?;
    let tables = read_tables(target)?;
    if sources.len() != tables.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            source.display(),
            sources.len(),
            target.display(),
            tables.len()
        )));
    }
    Ok(Dataset { sources, tables })
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_tables(path: &Path, tables: &[Table]) -> Result<()> {
    let lines = tables.iter().map(serialize_table).collect::<Result<Vec<_>>>()?;
    write_lines(path, &lines)
}

pub fn write_dataset(d: &Dataset, source: &Path, target: &Path) -> Result<()> {
    if let Some(i) = d.sources.iter().position(|s| s.contains(['\n', '\r'])) {
        return Err(Error::Data(format!("source {i} contains a line break")));
    }
    write_lines(source, &d.sources)?;
    write_tables(target, &d.tables)
}

/// Copies of `d`, one per seed, with each table's body rows shuffled.
/// Headers and sources are left as they are.
pub fn reorder_study(d: &Dataset, seeds: &[u64]) -> Vec<Dataset> {
    seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tables = d
                .tables
                .iter()
                .map(|t| {
                    let mut body = t.body.clone();
                    body.shuffle(&mut rng);
                    Table::new(t.header.clone(), body)
                })
                .collect();
            Dataset {
                sources: d.sources.clone(),
                tables,
            }
        })
        .collect()
}
